"""Command-line entry point wiring the whole pipeline.

Subcommands mirror the pipeline stages: build-vocab, index build, locate,
locate-batch, enhance, evaluate, cloak-report, heatmap, toponym, and
experiment filtered-background. Exit codes: 0 success, 1 usage error,
2 data error, 3 internal error. GEOCLOAK_LOG selects the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import enhance as enhance_mod
from .bnn import DEFAULT_CHECKS
from .engine import GleEngine
from .errors import ConfigurationError, DataError
from .evaluation import (
    PixelRecord,
    cloak_metrics,
    filtered_background_experiment,
    format_ratio_percent,
    heatmap_grid,
    percent_correct,
)
from .features import extract_features
from .geo import GeoPoint
from .image import read_image, write_image
from .index import ImageRecord, build_index, load_index, save_index
from .manifests import (
    ManifestRow,
    read_manifest,
    read_report,
    read_tags,
    write_heatmap,
    write_predictions,
    write_report,
    write_tags,
)
from .toponym import TOPONYM, classify_all, collect_tag_stats, normalize_tag
from .vocab import load_vocabulary, save_vocabulary, train_vocabulary

logger = logging.getLogger("geocloak")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging() -> None:
    level = os.environ.get("GEOCLOAK_LOG", "warn").lower()
    logging.basicConfig(
        level=_LOG_LEVELS.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_feature_records(rows: list[ManifestRow]) -> list[ImageRecord]:
    """Extract features for each manifest row; unusable images are skipped."""
    records = []
    skipped = 0
    for row in rows:
        try:
            img = read_image(row.path)
            feats = extract_features(img, image_id=row.image_id)
        except Exception as exc:
            logger.warning("skipping %s (%s): %s", row.image_id, row.path, exc)
            skipped += 1
            continue
        records.append(ImageRecord(row.image_id, feats, row.point, row.tags))
    if skipped:
        logger.warning("skipped %d of %d manifest images", skipped, len(rows))
    return records


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geocloak",
        description="Visual geo-location estimation and geo-cloaking evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="train a visual vocabulary from a manifest")
    p.add_argument("--images", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)

    p = sub.add_parser("index", help="inverted index operations")
    index_sub = p.add_subparsers(dest="action", required=True)
    pb = index_sub.add_parser("build", help="build an index from a manifest")
    pb.add_argument("--images", required=True)
    pb.add_argument("--vocab", required=True)
    pb.add_argument("--out", required=True)

    p = sub.add_parser("locate", help="geo-locate a single image")
    p.add_argument("--index", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--system", choices=["pgm", "bnn"], default="pgm")
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--checks", type=int, default=DEFAULT_CHECKS)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("locate-batch", help="geo-locate a manifest of targets")
    p.add_argument("--index", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--system", choices=["pgm", "bnn"], default="pgm")
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--checks", type=int, default=DEFAULT_CHECKS)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--no-timing", action="store_true", help="write empty ms column")
    p.add_argument("--out", required=True)

    p = sub.add_parser("enhance", help="apply filter / crop / tilt-shift to an image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filter", choices=list(enhance_mod.FILTER_NAMES))
    p.add_argument("--crop", type=float, help="fraction of area to crop away, in [0,1)")
    p.add_argument("--tiltshift", action="store_true")

    p = sub.add_parser("evaluate", help="percent-correct report for a target manifest")
    p.add_argument("--index", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--radii", default="100,1000", help="comma-separated meters")
    p.add_argument("--system", choices=["pgm", "bnn"], default="pgm")
    p.add_argument("--split-toponym", help="tags.csv from the toponym subcommand")
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--checks", type=int, default=DEFAULT_CHECKS)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cloak-report", help="net/gross cloaking between two reports")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)

    p = sub.add_parser("heatmap", help="grid counts of correctly located targets")
    p.add_argument("--report", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--cell-meters", type=float, required=True)
    p.add_argument("--radius", type=float, help="radius to pick when the report has several")
    p.add_argument("--out", required=True)

    p = sub.add_parser("toponym", help="classify tags by geographic concentration")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cell-size", type=float, default=1.0)
    p.add_argument("--min-total", type=int, default=5)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", help="paper-protocol experiments")
    exp_sub = p.add_subparsers(dest="action", required=True)
    pf = exp_sub.add_parser("filtered-background", help="enhance targets and their neighbors")
    pf.add_argument("--filter", required=True, choices=list(enhance_mod.FILTER_NAMES) + ["identity"])
    pf.add_argument("--images", required=True)
    pf.add_argument("--targets", required=True)
    pf.add_argument("--vocab", required=True)
    pf.add_argument("--radius", type=float, default=100.0)
    pf.add_argument("--top-n", type=int, default=100)
    pf.add_argument("--checks", type=int, default=DEFAULT_CHECKS)
    pf.add_argument("--seed", type=int, default=42)
    pf.add_argument("--out-prefix", required=True)
    return parser


def _cmd_build_vocab(args) -> int:
    records = _load_feature_records(read_manifest(args.images))
    if not records:
        raise DataError("no usable images in the manifest")
    vocab = train_vocabulary([r.features for r in records], args.k, args.seed)
    save_vocabulary(vocab, args.out)
    print(f"vocabulary k={vocab.k} trained on {len(records)} images -> {args.out}")
    return 0


def _cmd_index_build(args) -> int:
    vocab = load_vocabulary(args.vocab)
    records = _load_feature_records(read_manifest(args.images))
    index = build_index(records, vocab)
    save_index(index, args.out)
    print(f"indexed {len(index)} images, {index.total_postings} postings -> {args.out}")
    return 0


def _cmd_locate(args) -> int:
    engine = GleEngine(
        load_index(args.index),
        system=args.system,
        top_k=args.top_k,
        max_checks=args.checks,
        forest_seed=args.seed,
    )
    pred = engine.geolocate(args.image)
    if pred.is_abstain:
        print("ABSTAIN")
    else:
        print(
            f"{pred.point.lat:.6f} {pred.point.lon:.6f} {pred.propagator_id} {pred.score:.6f}"
        )
    return 0


def _cmd_locate_batch(args) -> int:
    engine = GleEngine(
        load_index(args.index),
        system=args.system,
        top_k=args.top_k,
        max_checks=args.checks,
        forest_seed=args.seed,
    )
    rows = read_manifest(args.targets)
    result = engine.geolocate_batch([(r.image_id, r.path) for r in rows], threads=args.threads)
    for target_id, message in result.errors.items():
        logger.warning("target %s failed: %s", target_id, message)
    write_predictions(result, args.out, with_timing=not args.no_timing)
    print(
        f"located {len(result.predictions)} targets "
        f"({len(result.errors)} errors, mean {result.mean_ms:.1f} ms) -> {args.out}"
    )
    return 0


def _cmd_enhance(args) -> int:
    if args.filter is None and args.crop is None and not args.tiltshift:
        raise ConfigurationError("enhance needs at least one of --filter/--crop/--tiltshift")
    img = read_image(args.input)
    if args.filter:
        img = enhance_mod.apply_filter(img, args.filter)
    if args.crop is not None:
        img, _window = enhance_mod.smart_crop(img, args.crop)
    if args.tiltshift:
        _cx, cy = enhance_mod.saliency_center(img)
        img = enhance_mod.tilt_shift(img, min(cy, img.height - 1))
    write_image(img, args.out)
    print(f"enhanced -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    radii = [float(r) for r in args.radii.split(",") if r]
    if not radii:
        raise ConfigurationError("--radii must name at least one radius")
    engine = GleEngine(
        load_index(args.index),
        system=args.system,
        top_k=args.top_k,
        max_checks=args.checks,
        forest_seed=args.seed,
    )
    rows = read_manifest(args.targets)
    truths = {r.image_id: r.point for r in rows}
    split = None
    if args.split_toponym:
        classification = read_tags(args.split_toponym)
        split = {}
        for r in rows:
            tagged = any(classification.get(normalize_tag(t)) == TOPONYM for t in r.tags)
            split[r.image_id] = "tagged" if tagged else "tagless"
    result = engine.geolocate_batch([(r.image_id, r.path) for r in rows], threads=args.threads)
    for target_id, message in result.errors.items():
        logger.warning("target %s failed: %s", target_id, message)
    reports = [
        percent_correct(result.predictions, truths, radius, split=split) for radius in radii
    ]
    write_report(reports, args.out)
    for report in reports:
        line = (
            f"radius={report.radius_m:g}m correct={report.correct}/{report.total} "
            f"percent={report.percent_str}"
        )
        if report.split:
            for name, subreport in sorted(report.split.items()):
                line += f" {name}={subreport.percent_str}"
        print(line)
    return 0


def _cmd_cloak_report(args) -> int:
    before = read_report(args.before)
    after = read_report(args.after)
    shared = sorted(set(before) & set(after))
    if not shared:
        raise DataError("before/after reports share no radius")
    for radius in shared:
        cloak = cloak_metrics(before[radius], after[radius])
        print(f"radius={radius:g}m net={cloak.net:.1f} gross={cloak.gross:.1f}")
    return 0


def _cmd_heatmap(args) -> int:
    reports = read_report(args.report)
    if args.radius is not None:
        if args.radius not in reports:
            raise DataError(f"report has no radius {args.radius:g}")
        report = reports[args.radius]
    elif len(reports) == 1:
        report = next(iter(reports.values()))
    else:
        raise ConfigurationError(
            f"report contains radii {sorted(reports)}; pick one with --radius"
        )
    truths = {r.image_id: r.point for r in read_manifest(args.targets)}
    grid = heatmap_grid(report, truths, args.cell_meters)
    write_heatmap(grid, args.out)
    print(
        f"heatmap {grid.counts.shape[0]}x{grid.counts.shape[1]} cells, "
        f"{int(grid.counts.sum())} correct -> {args.out}"
    )
    return 0


def _cmd_toponym(args) -> int:
    rows = read_manifest(args.manifest)
    stats = collect_tag_stats(((r.tags, r.point) for r in rows), cell_size=args.cell_size)
    classification = classify_all(stats, min_total=args.min_total, threshold=args.threshold)
    out_rows = [
        (tag, classification[tag], stats[tag].total, stats[tag].concentration)
        for tag in sorted(stats)
    ]
    write_tags(out_rows, args.out)
    counts = {cls: sum(1 for _, c, _, _ in out_rows if c == cls) for cls in set(classification.values())}
    print(f"classified {len(out_rows)} tags {counts} -> {args.out}")
    return 0


def _cmd_experiment_filtered_background(args) -> int:
    vocab = load_vocabulary(args.vocab)
    if args.filter == "identity":
        enhancement = lambda img: img
    else:
        enhancement = lambda img: enhance_mod.apply_filter(img, args.filter)

    def load_pixel_records(path):
        records = []
        for row in read_manifest(path):
            records.append(PixelRecord(row.image_id, row.point, image=read_image(row.path), tags=row.tags))
        return records

    original, filtered = filtered_background_experiment(
        load_pixel_records(args.images),
        load_pixel_records(args.targets),
        enhancement,
        vocab,
        radius_m=args.radius,
        top_n=args.top_n,
        max_checks=args.checks,
        forest_seed=args.seed,
    )
    write_report([original], f"{args.out_prefix}_original.csv")
    write_report([filtered], f"{args.out_prefix}_filtered.csv")
    print(
        f"filter={args.filter} radius={args.radius:g}m "
        f"original-bg={original.percent_str} filtered-bg={filtered.percent_str}"
    )
    return 0


_HANDLERS = {
    "build-vocab": _cmd_build_vocab,
    "locate": _cmd_locate,
    "locate-batch": _cmd_locate_batch,
    "enhance": _cmd_enhance,
    "evaluate": _cmd_evaluate,
    "cloak-report": _cmd_cloak_report,
    "heatmap": _cmd_heatmap,
    "toponym": _cmd_toponym,
}


def run(argv: list[str]) -> int:
    """Parse and execute; returns the process exit code."""
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "index":
            return _cmd_index_build(args)
        if args.command == "experiment":
            return _cmd_experiment_filtered_background(args)
        return _HANDLERS[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
