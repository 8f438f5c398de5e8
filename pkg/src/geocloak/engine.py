"""End-to-end geo-location: shortlist, re-rank, propagate coordinates.

Both systems are thin pipelines over an immutable :class:`BowIndex`:

* ``pgm`` - inverted-index shortlist (top 100) -> pairwise geometric
  re-ranking -> top-1 propagation.
* ``bnn`` - BoW histogram -> randomized KD-forest nearest neighbor ->
  top-1 propagation.

A target with no usable features, or one that matches nothing, yields an
abstention; an unreadable target raises IngestionError instead, so the
two outcomes are never conflated.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .bnn import DEFAULT_CHECKS, BowHistogram, KdForest, bnn_search, bow_histogram
from .errors import ConfigurationError, GeocloakError, IngestionError
from .features import FeatureSet, extract_features
from .geo import GeoPoint
from .image import RasterImage, read_image
from .index import BowIndex, query
from .pgm import rerank

SYSTEMS = ("pgm", "bnn")


@dataclass(frozen=True)
class GlePrediction:
    """The engine's verdict for one target image."""

    target_id: str
    point: GeoPoint | None
    propagator_id: str | None
    system: str
    score: float

    def __post_init__(self):
        if (self.point is None) != (self.propagator_id is None):
            raise ValueError("abstention must have neither point nor propagator")

    @property
    def is_abstain(self) -> bool:
        return self.propagator_id is None


@dataclass
class BatchResult:
    predictions: list[GlePrediction]
    errors: dict[str, str]  # target id -> error message for failed rows
    per_query_ms: list[float]

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.per_query_ms)) if self.per_query_ms else 0.0


def histograms_from_index(index: BowIndex) -> list[BowHistogram]:
    """Recover per-image word-count histograms from the index postings."""
    counts = np.zeros((len(index), index.vocab.k))
    for word, (imgs, _kps, _sigs) in index.postings.items():
        np.add.at(counts[:, word], imgs, 1.0)
    out = []
    for i, image_id in enumerate(index.image_ids):
        norm = np.linalg.norm(counts[i])
        if norm == 0.0:
            out.append(BowHistogram(image_id, counts[i], is_empty=True))
        else:
            out.append(BowHistogram(image_id, counts[i] / norm, is_empty=False))
    return out


class GleEngine:
    """One searchable background collection plus a system choice."""

    def __init__(
        self,
        index: BowIndex,
        system: str = "pgm",
        top_k: int = 100,
        max_checks: int = DEFAULT_CHECKS,
        forest_seed: int = 42,
    ):
        if system not in SYSTEMS:
            raise ConfigurationError(f"unknown system {system!r}; choose from {SYSTEMS}")
        self.index = index
        self.system = system
        self.top_k = top_k
        self.max_checks = max_checks
        self._forest: KdForest | None = None
        if system == "bnn":
            usable = [h for h in histograms_from_index(index) if not h.is_empty]
            if not usable:
                raise ConfigurationError("no non-empty histograms to build the BNN forest")
            self._forest = KdForest(usable, seed=forest_seed)

    def _features_of(self, target, target_id: str) -> FeatureSet:
        if isinstance(target, FeatureSet):
            return target
        if isinstance(target, RasterImage):
            return extract_features(target, image_id=target_id)
        try:
            img = read_image(target)
        except (OSError, GeocloakError) as exc:
            raise IngestionError(f"cannot read target {target!r}: {exc}") from exc
        return extract_features(img, image_id=target_id)

    def _abstain(self, target_id: str) -> GlePrediction:
        return GlePrediction(target_id, None, None, self.system, 0.0)

    def geolocate(self, target, target_id: str | None = None) -> GlePrediction:
        """Predict the target's coordinates by propagating its best match.

        ``target`` may be a FeatureSet, a RasterImage, or a path.
        """
        if target_id is None:
            target_id = target.image_id if isinstance(target, FeatureSet) else str(target)
        feats = self._features_of(target, target_id)
        if len(feats) == 0:
            return self._abstain(target_id)
        if self.system == "bnn":
            hist = bow_histogram(feats, self.index.vocab)
            if hist.is_empty:
                return self._abstain(target_id)
            propagator = bnn_search(self._forest, hist, self.max_checks)
            if propagator is None:
                return self._abstain(target_id)
            vec = self._forest.data[self._forest.image_ids.index(propagator)]
            # Cosine similarity of unit histograms as the rank evidence.
            score = float(np.dot(vec, hist.vector))
            return GlePrediction(
                target_id, self.index.point_of(propagator), propagator, "bnn", score
            )
        candidates = query(self.index, feats, top_k=self.top_k)
        if not candidates:
            return self._abstain(target_id)
        top = rerank(candidates, feats, self.index)[0]
        # Evidence: the geometric pair count when positive, else the
        # bag-of-words score the candidate was shortlisted with.
        score = float(top.pgm_pairs) if top.pgm_pairs else top.score
        return GlePrediction(
            target_id, self.index.point_of(top.image_id), top.image_id, "pgm", score
        )

    def geolocate_batch(
        self, targets: Iterable[tuple[str, object]], threads: int = 1
    ) -> BatchResult:
        """Locate each (target_id, target) row; manifest order is preserved.

        Per-row ingestion failures are recorded and the batch continues.
        """
        rows = list(targets)

        def run_one(row: tuple[str, object]):
            target_id, target = row
            start = time.perf_counter()
            try:
                pred = self.geolocate(target, target_id=target_id)
                err = None
            except GeocloakError as exc:
                pred = self._abstain(target_id)
                err = str(exc)
            return pred, err, (time.perf_counter() - start) * 1000.0

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(run_one, rows))
        else:
            outcomes = [run_one(row) for row in rows]
        result = BatchResult([], {}, [])
        for (target_id, _), (pred, err, ms) in zip(rows, outcomes):
            result.predictions.append(pred)
            result.per_query_ms.append(ms)
            if err is not None:
                result.errors[target_id] = err
        return result
