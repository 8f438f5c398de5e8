"""CSV formats shared by the CLI and the evaluation pipeline.

All files are UTF-8, comma-separated, with a mandatory header row.
Coordinates are written with six fractional digits. The image manifest
schema is ``id,path,lat,lon,tags`` with tags ';'-separated (may be
empty).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .engine import BatchResult, GlePrediction
from .errors import DataError
from .evaluation import ABSTAIN, EvalReport, HeatmapGrid
from .geo import GeoPoint

MANIFEST_COLUMNS = ["id", "path", "lat", "lon", "tags"]
PREDICTIONS_COLUMNS = ["target_id", "pred_lat", "pred_lon", "propagator_id", "system", "ms"]
REPORT_COLUMNS = ["target_id", "verdict", "distance_m", "radius_m"]
TAGS_COLUMNS = ["tag", "class", "total", "concentration"]
HEATMAP_COLUMNS = ["cell_lat", "cell_lon", "count"]


class ManifestRow(NamedTuple):
    image_id: str
    path: str
    point: GeoPoint
    tags: tuple[str, ...]


def _fmt_coord(value: float) -> str:
    return f"{value:.6f}"


def read_manifest(path) -> list[ManifestRow]:
    rows: list[ManifestRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != MANIFEST_COLUMNS:
            raise DataError(
                f"manifest {path!r} must start with header {','.join(MANIFEST_COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                point = GeoPoint(float(row["lat"]), float(row["lon"]))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad coordinates: {exc}") from exc
            tags = tuple(t for t in (row["tags"] or "").split(";") if t)
            rows.append(ManifestRow(row["id"], row["path"], point, tags))
    seen = set()
    for row in rows:
        if row.image_id in seen:
            raise DataError(f"manifest {path!r} repeats id {row.image_id!r}")
        seen.add(row.image_id)
    return rows


def write_predictions(result: BatchResult, path, with_timing: bool = True) -> None:
    """Write the batch CSV; ``with_timing=False`` empties the ms column so
    re-runs are byte-identical."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_COLUMNS)
        for pred, ms in zip(result.predictions, result.per_query_ms):
            ms_field = f"{ms:.3f}" if with_timing else ""
            if pred.is_abstain:
                writer.writerow([pred.target_id, "", "", "", pred.system, ms_field])
            else:
                writer.writerow(
                    [
                        pred.target_id,
                        _fmt_coord(pred.point.lat),
                        _fmt_coord(pred.point.lon),
                        pred.propagator_id,
                        pred.system,
                        ms_field,
                    ]
                )


def read_predictions(path) -> list[GlePrediction]:
    preds: list[GlePrediction] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames != PREDICTIONS_COLUMNS:
            raise DataError(f"{path!r} is not a predictions CSV")
        for row in reader:
            if row["propagator_id"]:
                point = GeoPoint(float(row["pred_lat"]), float(row["pred_lon"]))
                preds.append(
                    GlePrediction(row["target_id"], point, row["propagator_id"], row["system"], 0.0)
                )
            else:
                preds.append(GlePrediction(row["target_id"], None, None, row["system"], 0.0))
    return preds


def write_report(reports: Iterable[EvalReport], path) -> None:
    """One row per (target, radius); abstentions have an empty distance."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            for target_id in report.verdicts:
                d = report.distances[target_id]
                writer.writerow(
                    [
                        target_id,
                        report.verdicts[target_id],
                        "" if d is None else f"{d:.3f}",
                        f"{report.radius_m:g}",
                    ]
                )


def read_report(path) -> dict[float, EvalReport]:
    """Reconstruct per-radius reports from a report CSV."""
    per_radius: dict[float, tuple[dict[str, str], dict[str, float | None]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames != REPORT_COLUMNS:
            raise DataError(f"{path!r} is not a report CSV")
        for row in reader:
            radius = float(row["radius_m"])
            verdicts, distances = per_radius.setdefault(radius, ({}, {}))
            verdicts[row["target_id"]] = row["verdict"]
            distances[row["target_id"]] = float(row["distance_m"]) if row["distance_m"] else None
    out = {}
    for radius, (verdicts, distances) in per_radius.items():
        out[radius] = EvalReport(
            radius_m=radius,
            total=len(verdicts),
            correct=sum(1 for v in verdicts.values() if v == "correct"),
            verdicts=verdicts,
            distances=distances,
        )
    return out


def write_tags(rows: Iterable[tuple[str, str, int, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TAGS_COLUMNS)
        for tag, cls, total, concentration in rows:
            writer.writerow([tag, cls, total, f"{concentration:.4f}"])


def read_tags(path) -> dict[str, str]:
    """Tag -> class mapping from a toponym CSV."""
    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames != TAGS_COLUMNS:
            raise DataError(f"{path!r} is not a tags CSV")
        for row in reader:
            out[row["tag"]] = row["class"]
    return out


def write_heatmap(grid: HeatmapGrid, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEATMAP_COLUMNS)
        for lat, lon, count in grid.rows():
            writer.writerow([_fmt_coord(lat), _fmt_coord(lon), count])
