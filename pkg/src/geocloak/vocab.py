"""Visual vocabulary: exact k-means words, IDF weights, signature medians.

Training is plain Lloyd iteration from a seeded k-means++ start. Every
word additionally carries 64 per-dimension medians of a fixed random
orthonormal projection of its training descriptors; the inverted index
thresholds descriptor projections against these medians to produce 64-bit
signatures.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, MalformedHeaderError, TruncatedDataError
from .features import DESCRIPTOR_DIM, FeatureSet

SIGNATURE_BITS = 64
MULTI_ASSIGN_MAX = 5
MULTI_ASSIGN_RADIUS = 1.5  # accept words with distance <= 1.5 * d1
VOCAB_MAGIC = b"GCVB1"


def projection_matrix(seed: int) -> np.ndarray:
    """Seeded random orthonormal (64, 128) projection, shared by all words."""
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((DESCRIPTOR_DIM, DESCRIPTOR_DIM))
    q, r = np.linalg.qr(gauss)
    # Fix the sign convention so the factorization is unique.
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(q[:SIGNATURE_BITS])


@dataclass(frozen=True, eq=False)
class VisualVocabulary:
    """k centroids plus per-word IDF weights and signature medians."""

    centroids: np.ndarray  # (k, 128) float64
    idf: np.ndarray  # (k,) float64
    he_medians: np.ndarray  # (k, 64) float64
    projection_seed: int
    projection: np.ndarray = field(init=False)  # (64, 128), derived from seed

    def __post_init__(self):
        cen = np.ascontiguousarray(np.asarray(self.centroids, dtype=np.float64))
        idf = np.ascontiguousarray(np.asarray(self.idf, dtype=np.float64))
        med = np.ascontiguousarray(np.asarray(self.he_medians, dtype=np.float64))
        if cen.ndim != 2 or cen.shape[1] != DESCRIPTOR_DIM or cen.shape[0] < 1:
            raise ConfigurationError(f"centroids must be (k>=1, {DESCRIPTOR_DIM})")
        k = cen.shape[0]
        if idf.shape != (k,) or med.shape != (k, SIGNATURE_BITS):
            raise ConfigurationError("idf/he_medians shapes inconsistent with k")
        for arr in (cen, idf, med):
            arr.setflags(write=False)
        proj = projection_matrix(self.projection_seed)
        proj.setflags(write=False)
        object.__setattr__(self, "centroids", cen)
        object.__setattr__(self, "idf", idf)
        object.__setattr__(self, "he_medians", med)
        object.__setattr__(self, "projection", proj)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def compatible_with(self, other: "VisualVocabulary") -> bool:
        return self.k == other.k and self.projection_seed == other.projection_seed


def _squared_distances(descriptors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances.

    Uses the naive (x - c)**2 sum, not the |x|^2 - 2xc + |c|^2 expansion, so
    results (and therefore argmin tie-breaks) are bit-identical to the
    per-descriptor form used by :func:`assign`.
    """
    diff = descriptors[:, None, :] - centroids[None, :, :]
    return (diff * diff).sum(axis=2)


def _assign_chunked(descriptors: np.ndarray, centroids: np.ndarray):
    """Labels and squared distance to the nearest centroid, bounded memory."""
    n, k = descriptors.shape[0], centroids.shape[0]
    chunk = max(1, (1 << 22) // (k * centroids.shape[1]))
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = _squared_distances(descriptors[lo:hi], centroids)
        labels[lo:hi] = np.argmin(d2, axis=1)
        best[lo:hi] = d2[np.arange(hi - lo), labels[lo:hi]]
    return labels, best


def _kmeans_pp_init(descriptors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = descriptors.shape[0]
    centroids = np.empty((k, descriptors.shape[1]))
    centroids[0] = descriptors[rng.integers(n)]
    d2 = ((descriptors - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # All remaining mass sits on already-chosen points; pick uniformly.
            centroids[i] = descriptors[rng.integers(n)]
            continue
        idx = rng.choice(n, p=d2 / total)
        centroids[i] = descriptors[idx]
        d2 = np.minimum(d2, ((descriptors - centroids[i]) ** 2).sum(axis=1))
    return centroids


def train_kmeans(
    descriptors: np.ndarray,
    k: int,
    seed: int,
    max_iterations: int = 100,
    inertia_log: list[float] | None = None,
) -> np.ndarray:
    """Exact Lloyd k-means from a seeded k-means++ start; returns centroids.

    Stops when assignments no longer change or after ``max_iterations``.
    Empty clusters are re-seeded with the point farthest from its current
    centroid. Per-iteration inertia is appended to ``inertia_log`` when
    given (it is non-increasing; the trainer asserts this).
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    n = descriptors.shape[0]
    if n < k:
        raise ConfigurationError(f"need at least k={k} descriptors, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(descriptors, k, rng)
    labels, best = _assign_chunked(descriptors, centroids)
    prev_inertia = np.inf
    for _ in range(max_iterations):
        # Update step: means of each cluster, with empty-cluster rescue.
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, descriptors)
        empty = np.flatnonzero(counts == 0)
        for word in empty:
            # Only steal from clusters that keep at least one member; with
            # n >= k such a donor always exists while any cluster is empty.
            eligible = counts[labels] >= 2
            candidates = np.where(eligible, best, -np.inf)
            farthest = int(np.argmax(candidates))
            donor = labels[farthest]
            sums[donor] -= descriptors[farthest]
            counts[donor] -= 1
            sums[word] = descriptors[farthest]
            counts[word] = 1
            labels[farthest] = word
            best[farthest] = 0.0
        centroids = sums / counts[:, None]
        new_labels, best = _assign_chunked(descriptors, centroids)
        inertia = float(best.sum())
        assert inertia <= prev_inertia + 1e-9 * max(1.0, abs(prev_inertia)), (
            "k-means inertia increased"
        )
        if inertia_log is not None:
            inertia_log.append(inertia)
        prev_inertia = inertia
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centroids


def assign(descriptor: np.ndarray, vocab: VisualVocabulary) -> int:
    """Nearest visual word by Euclidean distance; ties go to the lowest id."""
    d2 = ((vocab.centroids - descriptor) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def assign_all(descriptors: np.ndarray, vocab: VisualVocabulary) -> np.ndarray:
    """Vectorized single assignment for a descriptor batch."""
    if descriptors.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    labels, _ = _assign_chunked(np.asarray(descriptors, dtype=np.float64), vocab.centroids)
    return labels


def multi_assign(descriptor: np.ndarray, vocab: VisualVocabulary) -> list[int]:
    """Up to 5 nearest words within 1.5x the nearest distance, nearest first."""
    d = np.sqrt(((vocab.centroids - descriptor) ** 2).sum(axis=1))
    order = np.lexsort((np.arange(vocab.k), d))
    cutoff = MULTI_ASSIGN_RADIUS * d[order[0]]
    words = [int(w) for w in order[:MULTI_ASSIGN_MAX] if d[w] <= cutoff]
    return words if words else [int(order[0])]


def compute_he_medians(
    centroids: np.ndarray, descriptors: np.ndarray, projection_seed: int
) -> np.ndarray:
    """Per-word, per-projected-dimension medians of the training descriptors.

    Words that received no training descriptors keep all-zero medians.
    """
    centroids = np.asarray(centroids, dtype=np.float64)
    k = centroids.shape[0]
    medians = np.zeros((k, SIGNATURE_BITS))
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.shape[0] == 0:
        return medians
    labels, _ = _assign_chunked(descriptors, centroids)
    projected = descriptors @ projection_matrix(projection_seed).T
    for word in range(k):
        member = projected[labels == word]
        if member.shape[0]:
            medians[word] = np.median(member, axis=0)
    return medians


def compute_idf(word_sets: Iterable[set[int]], k: int) -> np.ndarray:
    """ln(N / N_w) document-frequency weights, with N_w floored at 1."""
    word_sets = list(word_sets)
    n_images = len(word_sets)
    n_w = np.zeros(k)
    for words in word_sets:
        for w in words:
            n_w[w] += 1.0
    return np.log(max(n_images, 1) / np.maximum(n_w, 1.0))


def train_vocabulary(
    feature_sets: Sequence[FeatureSet], k: int, seed: int
) -> VisualVocabulary:
    """Full vocabulary from per-image features: centroids + IDF + medians."""
    if not feature_sets:
        raise ConfigurationError("no feature sets to train on")
    descriptors = np.vstack([fs.descriptors for fs in feature_sets])
    centroids = train_kmeans(descriptors, k, seed)
    medians = compute_he_medians(centroids, descriptors, projection_seed=seed)
    labels, _ = _assign_chunked(descriptors, centroids)
    word_sets = []
    offset = 0
    for fs in feature_sets:
        word_sets.append(set(labels[offset : offset + len(fs)].tolist()))
        offset += len(fs)
    idf = compute_idf(word_sets, k)
    return VisualVocabulary(centroids, idf, medians, projection_seed=seed)


# ---------------------------------------------------------------------------
# Binary vocabulary file ("GCVB1")
# ---------------------------------------------------------------------------


def save_vocabulary(vocab: VisualVocabulary, path) -> None:
    with open(path, "wb") as fh:
        fh.write(vocabulary_bytes(vocab))


def vocabulary_bytes(vocab: VisualVocabulary) -> bytes:
    parts = [
        VOCAB_MAGIC,
        struct.pack("<Iq", vocab.k, vocab.projection_seed),
        vocab.centroids.astype("<f8").tobytes(),
        vocab.idf.astype("<f8").tobytes(),
        vocab.he_medians.astype("<f8").tobytes(),
    ]
    return b"".join(parts)


def vocabulary_from_bytes(data: bytes, offset: int = 0) -> tuple[VisualVocabulary, int]:
    """Decode a vocabulary block; returns (vocab, offset past the block)."""
    if data[offset : offset + 5] != VOCAB_MAGIC:
        raise MalformedHeaderError("missing GCVB1 vocabulary magic")
    off = offset + 5
    try:
        k, seed = struct.unpack_from("<Iq", data, off)
    except struct.error as exc:
        raise TruncatedDataError(f"vocabulary header truncated: {exc}") from exc
    off += 12
    need = k * DESCRIPTOR_DIM * 8 + k * 8 + k * SIGNATURE_BITS * 8
    if off + need > len(data):
        raise TruncatedDataError("vocabulary payload truncated")
    cen = np.frombuffer(data, "<f8", k * DESCRIPTOR_DIM, off).reshape(k, DESCRIPTOR_DIM)
    off += k * DESCRIPTOR_DIM * 8
    idf = np.frombuffer(data, "<f8", k, off)
    off += k * 8
    med = np.frombuffer(data, "<f8", k * SIGNATURE_BITS, off).reshape(k, SIGNATURE_BITS)
    off += k * SIGNATURE_BITS * 8
    return VisualVocabulary(cen.copy(), idf.copy(), med.copy(), projection_seed=seed), off


def load_vocabulary(path) -> VisualVocabulary:
    with open(path, "rb") as fh:
        data = fh.read()
    vocab, _ = vocabulary_from_bytes(data)
    return vocab
