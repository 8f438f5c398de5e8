"""Baseline retrieval: BoW histograms searched by a randomized KD-forest.

Each image is one L2-normalized word-count histogram. Four randomized
KD-trees (leaf size 8, split dimension drawn among the five
highest-variance dimensions of the node's points, split at the median
rank) are searched best-first through one shared priority queue; the
search stops after ``max_checks`` distinct histograms have been evaluated
and returns the best candidate seen. With ``max_checks`` at least the
collection size the result is the exact nearest neighbor.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .features import FeatureSet
from .vocab import VisualVocabulary, assign_all

FOREST_TREES = 4
LEAF_SIZE = 8
DEFAULT_CHECKS = 64
_TOP_VARIANCE_DIMS = 5


@dataclass(frozen=True, eq=False)
class BowHistogram:
    """Per-image word counts, L2-normalized; all-zero ones are flagged."""

    image_id: str
    vector: np.ndarray
    is_empty: bool


def bow_histogram(features: FeatureSet, vocab: VisualVocabulary) -> BowHistogram:
    """Count word assignments and L2-normalize; empty inputs are flagged."""
    counts = np.zeros(vocab.k)
    if len(features):
        np.add.at(counts, assign_all(features.descriptors, vocab), 1.0)
    norm = np.linalg.norm(counts)
    if norm == 0.0:
        counts.setflags(write=False)
        return BowHistogram(features.image_id, counts, is_empty=True)
    vec = counts / norm
    vec.setflags(write=False)
    return BowHistogram(features.image_id, vec, is_empty=False)


class _KdTree:
    """Array-backed randomized KD-tree over row indices of a data matrix."""

    __slots__ = ("split_dim", "split_val", "left", "right", "leaf_lo", "leaf_hi", "perm")

    def __init__(self, data: np.ndarray, rng: np.random.Generator):
        dims, vals, lefts, rights, los, his = [], [], [], [], [], []
        perm_out: list[int] = []

        def build(ids: np.ndarray) -> int:
            node = len(dims)
            dims.append(-1)
            vals.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            los.append(-1)
            his.append(-1)
            if ids.shape[0] <= LEAF_SIZE:
                los[node] = len(perm_out)
                perm_out.extend(ids.tolist())
                his[node] = len(perm_out)
                return node
            variances = data[ids].var(axis=0)
            top = np.argsort(-variances, kind="stable")[:_TOP_VARIANCE_DIMS]
            dim = int(top[rng.integers(top.shape[0])])
            order = ids[np.argsort(data[ids, dim], kind="stable")]
            half = ids.shape[0] // 2
            dims[node] = dim
            vals[node] = float(data[order[half], dim])
            lefts[node] = build(order[:half])
            rights[node] = build(order[half:])
            return node

        build(np.arange(data.shape[0]))
        self.split_dim = np.array(dims, dtype=np.int64)
        self.split_val = np.array(vals)
        self.left = np.array(lefts, dtype=np.int64)
        self.right = np.array(rights, dtype=np.int64)
        self.leaf_lo = np.array(los, dtype=np.int64)
        self.leaf_hi = np.array(his, dtype=np.int64)
        self.perm = np.array(perm_out, dtype=np.int64)


class KdForest:
    """Randomized KD-trees over a set of histograms; immutable once built."""

    def __init__(self, histograms: Sequence[BowHistogram], seed: int = 42):
        if not histograms:
            raise ConfigurationError("cannot build a forest over zero histograms")
        self.image_ids = [h.image_id for h in histograms]
        self.data = np.ascontiguousarray(np.stack([h.vector for h in histograms]))
        self.data.setflags(write=False)
        streams = np.random.SeedSequence(seed).spawn(FOREST_TREES)
        self.trees = [_KdTree(self.data, np.random.default_rng(s)) for s in streams]

    def __len__(self) -> int:
        return self.data.shape[0]


def bnn_search(
    forest: KdForest, q: BowHistogram, max_checks: int = DEFAULT_CHECKS
) -> str | None:
    """Best-first approximate NN across all trees; None signals abstention."""
    if q.is_empty:
        return None
    idx = _search_index(forest, np.asarray(q.vector), max_checks)
    return forest.image_ids[idx]


def _search_index(forest: KdForest, qvec: np.ndarray, max_checks: int) -> int:
    data = forest.data
    n = data.shape[0]
    budget = min(max_checks, n) if max_checks > 0 else n
    visited = np.zeros(n, dtype=bool)
    n_visited = 0
    best_d2 = np.inf
    best_idx = -1
    counter = 0
    heap: list[tuple[float, int, int, int]] = []
    for t in range(len(forest.trees)):
        heap.append((0.0, counter, t, 0))
        counter += 1
    heapq.heapify(heap)
    while heap and n_visited < budget:
        bound, _, t, node = heapq.heappop(heap)
        if bound >= best_d2:
            continue
        tree = forest.trees[t]
        # Descend to the near leaf, queueing far children as we go.
        while tree.split_dim[node] >= 0:
            dim = tree.split_dim[node]
            diff = qvec[dim] - tree.split_val[node]
            if diff < 0.0:
                near, far = tree.left[node], tree.right[node]
            else:
                near, far = tree.right[node], tree.left[node]
            # A child region is inside its parent's, so the parent bound
            # still applies; max() keeps the bound valid without tracking
            # per-dimension offsets.
            far_bound = max(bound, diff * diff)
            if far_bound < best_d2:
                heapq.heappush(heap, (far_bound, counter, t, int(far)))
                counter += 1
            node = int(near)
        ids = tree.perm[tree.leaf_lo[node] : tree.leaf_hi[node]]
        fresh = ids[~visited[ids]]
        if fresh.shape[0] == 0:
            continue
        if n_visited + fresh.shape[0] > budget:
            fresh = fresh[: budget - n_visited]
        visited[fresh] = True
        n_visited += fresh.shape[0]
        diffs = data[fresh] - qvec
        d2 = (diffs * diffs).sum(axis=1)
        local = int(np.lexsort((fresh, d2))[0])
        cand_d2, cand_idx = float(d2[local]), int(fresh[local])
        if cand_d2 < best_d2 or (cand_d2 == best_d2 and cand_idx < best_idx):
            best_d2, best_idx = cand_d2, cand_idx
    return best_idx


def nearest_neighbors(forest: KdForest, q: BowHistogram, n: int) -> list[str]:
    """Exact top-n image ids by Euclidean distance (linear scan)."""
    if q.is_empty:
        return []
    diffs = forest.data - np.asarray(q.vector)
    d2 = (diffs * diffs).sum(axis=1)
    order = np.lexsort((np.arange(len(forest)), d2))
    return [forest.image_ids[i] for i in order[:n]]
