"""Metrics and experiments: percent correct, cloaking ratios, heat maps,
and the filtered-background-collection protocol.

Percentages serialize with two decimals, round-half-up. Cloaking comes in
two flavors: *net* is the relative change in the correctly located count
(negative when an enhancement reveals more than it cloaks), *gross* is
the fraction of originally locatable targets that are no longer located.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Sequence

import numpy as np

from .bnn import DEFAULT_CHECKS, BowHistogram, KdForest, bnn_search, bow_histogram, nearest_neighbors
from .engine import GlePrediction
from .errors import DataError, UndefinedMetricError
from .features import FeatureSet, extract_features
from .geo import METERS_PER_DEGREE, GeoPoint, haversine_m
from .image import RasterImage
from .vocab import VisualVocabulary

CORRECT = "correct"
INCORRECT = "incorrect"
ABSTAIN = "abstain"


def format_ratio_percent(numerator: int, denominator: int) -> str:
    """Exact 100*n/d with two decimals, round-half-up (e.g. 153/2006 -> 7.63)."""
    if denominator == 0:
        return "0.00"
    value = Decimal(100 * numerator) / Decimal(denominator)
    return str(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class EvalReport:
    """Correct-within-radius accounting with per-target verdicts."""

    radius_m: float
    total: int
    correct: int
    verdicts: dict[str, str]
    distances: dict[str, float | None]
    split: dict[str, "EvalReport"] | None = None

    @property
    def percent(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0

    @property
    def percent_str(self) -> str:
        return format_ratio_percent(self.correct, self.total)

    @property
    def correct_ids(self) -> frozenset[str]:
        return frozenset(t for t, v in self.verdicts.items() if v == CORRECT)


@dataclass
class CloakReport:
    before_correct: frozenset[str]
    after_correct: frozenset[str]
    net: float
    gross: float


def percent_correct(
    predictions: Sequence[GlePrediction],
    truths: dict[str, GeoPoint],
    radius_m: float,
    split: dict[str, str] | None = None,
) -> EvalReport:
    """Judge predictions against ground truth at one radius (inclusive).

    Abstentions count as incorrect but keep their own verdict label.
    ``split`` optionally maps target ids to group names (e.g. toponym
    tagged/tagless) and produces per-group sub-reports.
    """
    verdicts: dict[str, str] = {}
    distances: dict[str, float | None] = {}
    for pred in predictions:
        truth = truths.get(pred.target_id)
        if truth is None:
            raise DataError(f"no ground truth for target {pred.target_id!r}")
        if pred.is_abstain:
            verdicts[pred.target_id] = ABSTAIN
            distances[pred.target_id] = None
        else:
            d = haversine_m(pred.point, truth)
            verdicts[pred.target_id] = CORRECT if d <= radius_m else INCORRECT
            distances[pred.target_id] = d
    report = EvalReport(
        radius_m=radius_m,
        total=len(verdicts),
        correct=sum(1 for v in verdicts.values() if v == CORRECT),
        verdicts=verdicts,
        distances=distances,
    )
    if split is not None:
        groups: dict[str, EvalReport] = {}
        for name in sorted(set(split.values())):
            ids = {t for t, g in split.items() if g == name and t in verdicts}
            groups[name] = EvalReport(
                radius_m=radius_m,
                total=len(ids),
                correct=sum(1 for t in ids if verdicts[t] == CORRECT),
                verdicts={t: verdicts[t] for t in ids},
                distances={t: distances[t] for t in ids},
            )
        report.split = groups
    return report


def cloak_metrics(before: EvalReport, after: EvalReport) -> CloakReport:
    """Net and gross cloaking percentages between two runs on one target set."""
    if set(before.verdicts) != set(after.verdicts):
        raise DataError("before/after reports cover different target sets")
    if before.radius_m != after.radius_m:
        raise DataError("before/after reports use different radii")
    return cloak_from_sets(before.correct_ids, after.correct_ids)


def cloak_from_sets(before_correct, after_correct) -> CloakReport:
    b = frozenset(before_correct)
    a = frozenset(after_correct)
    if not b:
        raise UndefinedMetricError("no correctly located images before enhancement")
    net = 100.0 * (len(b) - len(a)) / len(b)
    gross = 100.0 * len(b - a) / len(b)
    return CloakReport(b, a, net, gross)


@dataclass
class HeatmapGrid:
    """Counts of correctly located targets per geographic cell."""

    lat0: float
    lon0: float
    dlat: float
    dlon: float
    counts: np.ndarray  # (rows, cols) int64

    def rows(self):
        """Yield (cell_center_lat, cell_center_lon, count), row-major."""
        for r in range(self.counts.shape[0]):
            for c in range(self.counts.shape[1]):
                yield (
                    self.lat0 + (r + 0.5) * self.dlat,
                    self.lon0 + (c + 0.5) * self.dlon,
                    int(self.counts[r, c]),
                )


def heatmap_grid(
    report: EvalReport, truths: dict[str, GeoPoint], cell_size_m: float
) -> HeatmapGrid:
    """Grid the targets' ground-truth bounding box and count correct ones.

    The metric cell size converts to degrees at the box's center latitude.
    """
    ids = [t for t in report.verdicts if t in truths]
    if len(ids) != len(report.verdicts):
        missing = set(report.verdicts) - set(ids)
        raise DataError(f"no ground truth for heatmap targets {sorted(missing)[:3]}")
    if not ids:
        raise DataError("cannot build a heat map over an empty target set")
    if cell_size_m <= 0:
        raise DataError(f"cell size must be positive, got {cell_size_m}")
    lats = np.array([truths[t].lat for t in ids])
    lons = np.array([truths[t].lon for t in ids])
    lat0, lat1 = float(lats.min()), float(lats.max())
    lon0, lon1 = float(lons.min()), float(lons.max())
    center_lat = (lat0 + lat1) / 2.0
    dlat = cell_size_m / METERS_PER_DEGREE
    dlon = cell_size_m / (METERS_PER_DEGREE * max(math.cos(math.radians(center_lat)), 1e-9))
    rows = max(1, math.ceil((lat1 - lat0) / dlat))
    cols = max(1, math.ceil((lon1 - lon0) / dlon))
    counts = np.zeros((rows, cols), dtype=np.int64)
    for t in ids:
        if report.verdicts[t] != CORRECT:
            continue
        r = min(int((truths[t].lat - lat0) / dlat), rows - 1)
        c = min(int((truths[t].lon - lon0) / dlon), cols - 1)
        counts[r, c] += 1
    return HeatmapGrid(lat0, lon0, dlat, dlon, counts)


# ---------------------------------------------------------------------------
# Filtered background collection experiment
# ---------------------------------------------------------------------------


@dataclass
class PixelRecord:
    """A collection entry that may carry pixels, features, or both.

    Pixels are mandatory only where an enhancement must be re-applied:
    always for targets, and for background images that enter a
    replacement set.
    """

    image_id: str
    point: GeoPoint
    image: RasterImage | None = None
    features: FeatureSet | None = None
    tags: tuple[str, ...] = ()


def _features_of(rec: PixelRecord, extractor) -> FeatureSet:
    if rec.features is not None:
        return rec.features
    if rec.image is None:
        raise DataError(f"record {rec.image_id!r} has neither pixels nor features")
    return extractor(rec.image, rec.image_id)


def _histogram(rec_id: str, features: FeatureSet, vocab: VisualVocabulary) -> BowHistogram:
    hist = bow_histogram(features, vocab)
    return BowHistogram(rec_id, hist.vector, hist.is_empty)


def filtered_background_experiment(
    background: Sequence[PixelRecord],
    targets: Sequence[PixelRecord],
    enhancement: Callable[[RasterImage], RasterImage],
    vocab: VisualVocabulary,
    radius_m: float,
    top_n: int = 100,
    max_checks: int = DEFAULT_CHECKS,
    extractor: Callable[..., FeatureSet] | None = None,
    forest_seed: int = 42,
) -> tuple[EvalReport, EvalReport]:
    """Worst-case collection-enhancement protocol (BNN system).

    Per target: retrieve the top-n visual neighbors of the *original*
    target, apply the same enhancement to the target and to those
    neighbors, swap the enhanced neighbors into the background
    (replacement, so the collection size never changes), then locate the
    enhanced target against both the original and the patched collection.
    Returns (original-background report, filtered-background report).
    """
    if extractor is None:
        extractor = lambda img, image_id="": extract_features(img, image_id=image_id)
    bg_hists = [
        _histogram(rec.image_id, _features_of(rec, extractor), vocab) for rec in background
    ]
    usable = [h for h in bg_hists if not h.is_empty]
    if not usable:
        raise DataError("background collection produced no usable histograms")
    forest = KdForest(usable, seed=forest_seed)
    points = {rec.image_id: rec.point for rec in background}
    hist_by_id = {h.image_id: h for h in bg_hists}
    filtered_hist_cache: dict[str, BowHistogram] = {}
    bg_by_id = {rec.image_id: rec for rec in background}

    def filtered_histogram(image_id: str) -> BowHistogram:
        if image_id not in filtered_hist_cache:
            rec = bg_by_id[image_id]
            if rec.image is None:
                raise DataError(
                    f"background {image_id!r} is in a replacement set but has no pixels"
                )
            feats = extractor(enhancement(rec.image), image_id)
            filtered_hist_cache[image_id] = _histogram(image_id, feats, vocab)
        return filtered_hist_cache[image_id]

    def predict(search_forest: KdForest, hist: BowHistogram, target_id: str) -> GlePrediction:
        if hist.is_empty:
            return GlePrediction(target_id, None, None, "bnn", 0.0)
        propagator = bnn_search(search_forest, hist, max_checks)
        if propagator is None:
            return GlePrediction(target_id, None, None, "bnn", 0.0)
        vec = search_forest.data[search_forest.image_ids.index(propagator)]
        return GlePrediction(
            target_id, points[propagator], propagator, "bnn", float(np.dot(vec, hist.vector))
        )

    original_preds: list[GlePrediction] = []
    filtered_preds: list[GlePrediction] = []
    truths: dict[str, GeoPoint] = {}
    for target in targets:
        truths[target.image_id] = target.point
        if target.image is None:
            raise DataError(f"target {target.image_id!r} has no pixels to enhance")
        original_hist = _histogram(
            target.image_id, _features_of(target, extractor), vocab
        )
        replaced = set(
            nearest_neighbors(forest, original_hist, top_n)
            if not original_hist.is_empty
            else []
        )
        enhanced_feats = extractor(enhancement(target.image), target.image_id)
        enhanced_hist = _histogram(target.image_id, enhanced_feats, vocab)
        original_preds.append(predict(forest, enhanced_hist, target.image_id))
        patched = [
            filtered_histogram(h.image_id) if h.image_id in replaced else h
            for h in bg_hists
        ]
        assert len(patched) == len(bg_hists), "replacement must preserve collection size"
        patched_usable = [h for h in patched if not h.is_empty]
        patched_forest = KdForest(patched_usable, seed=forest_seed) if patched_usable else None
        if patched_forest is None:
            filtered_preds.append(GlePrediction(target.image_id, None, None, "bnn", 0.0))
        else:
            filtered_preds.append(predict(patched_forest, enhanced_hist, target.image_id))
    return (
        percent_correct(original_preds, truths, radius_m),
        percent_correct(filtered_preds, truths, radius_m),
    )
