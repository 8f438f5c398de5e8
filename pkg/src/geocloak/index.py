"""Inverted-file retrieval with binary signatures and burst down-weighting.

Database descriptors are quantized to a single visual word and refined by
a 64-bit signature (projection thresholded against the word's medians).
Queries use multiple assignment; a (query, posting) pair under word ``w``
matches when the signatures differ in at most 24 bits and contributes
``idf(w)^2 * exp(-h^2 / (2*16^2))``, divided by sqrt(m) when the query
descriptor matches m postings of the same image (burstiness), and the
image total is normalized by sqrt(descriptor count).

:func:`brute_force_score` recomputes the same formula by exhaustive
scanning with no inverted structure; it exists to cross-check
:func:`query` and must never share its code path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError, MalformedHeaderError, TruncatedDataError
from .features import FeatureSet
from .geo import GeoPoint
from .vocab import (
    VisualVocabulary,
    assign_all,
    multi_assign,
    vocabulary_bytes,
    vocabulary_from_bytes,
)

HAMMING_THRESHOLD = 24
HAMMING_SIGMA = 16.0
INDEX_MAGIC = b"GCIX1"

_BIT_VALUES = (np.uint64(1) << np.arange(64, dtype=np.uint64))


class ImageRecord(NamedTuple):
    """One background-collection entry."""

    image_id: str
    features: FeatureSet
    point: GeoPoint
    tags: tuple[str, ...] = ()


@dataclass
class RankedMatch:
    """A scored candidate with its contributing descriptor matches."""

    image_id: str
    score: float
    matches: list[tuple[int, int, int]]  # (query idx, db keypoint ref, hamming)
    pgm_pairs: int | None = None  # filled by geometric re-ranking


def pack_signatures(bits: np.ndarray) -> np.ndarray:
    """(n, 64) bools -> uint64 signatures, bit i of the word = dimension i."""
    return (bits.astype(np.uint64) * _BIT_VALUES).sum(axis=1, dtype=np.uint64)


def db_signatures(descriptors: np.ndarray, words: np.ndarray, vocab: VisualVocabulary) -> np.ndarray:
    """Signatures of database descriptors under their assigned words."""
    if descriptors.shape[0] == 0:
        return np.empty(0, dtype=np.uint64)
    projected = descriptors @ vocab.projection.T
    return pack_signatures(projected > vocab.he_medians[words])


def query_signature(projected: np.ndarray, word: int, vocab: VisualVocabulary) -> np.uint64:
    """Signature of one projected query descriptor under a candidate word."""
    return pack_signatures((projected > vocab.he_medians[word])[None, :])[0]


def pair_weight(word: int, hamming, vocab: VisualVocabulary):
    """idf^2 Gaussian-of-Hamming weight for a matched pair (vectorizable)."""
    h = np.asarray(hamming, dtype=np.float64)
    return vocab.idf[word] ** 2 * np.exp(-(h * h) / (2.0 * HAMMING_SIGMA**2))


class BowIndex:
    """Immutable inverted index over a background collection.

    Built once via :func:`build_index`; afterwards all arrays are
    read-only, so any number of threads may query concurrently.
    """

    def __init__(self, vocab: VisualVocabulary):
        self.vocab = vocab
        self.image_ids: list[str] = []
        self._id_to_idx: dict[str, int] = {}
        self.points: list[GeoPoint] = []
        self.tags: list[tuple[str, ...]] = []
        self.desc_counts = np.empty(0, dtype=np.int64)
        self._keypoints: list[np.ndarray] = []
        # word -> (image indices, keypoint refs, signatures)
        self.postings: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._id_rank = np.empty(0, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.image_ids)

    @property
    def total_postings(self) -> int:
        return sum(arr[0].shape[0] for arr in self.postings.values())

    def has_image(self, image_id: str) -> bool:
        return image_id in self._id_to_idx

    def point_of(self, image_id: str) -> GeoPoint:
        return self.points[self._id_to_idx[image_id]]

    def tags_of(self, image_id: str) -> tuple[str, ...]:
        return self.tags[self._id_to_idx[image_id]]

    def keypoints_of(self, image_id: str) -> np.ndarray:
        return self._keypoints[self._id_to_idx[image_id]]

    def _finalize(self):
        self.desc_counts = np.asarray(self.desc_counts, dtype=np.int64)
        # Rank of each image id in lexicographic order; used for posting
        # order and ranking tie-breaks.
        order = np.argsort(np.array(self.image_ids))
        rank = np.empty(len(self.image_ids), dtype=np.int64)
        rank[order] = np.arange(len(self.image_ids))
        self._id_rank = rank
        for word, (imgs, kps, sigs) in self.postings.items():
            perm = np.lexsort((kps, rank[imgs]))
            entry = (imgs[perm], kps[perm], sigs[perm])
            for arr in entry:
                arr.setflags(write=False)
            self.postings[word] = entry
        for arr in self._keypoints:
            arr.setflags(write=False)
        self.desc_counts.setflags(write=False)
        self._id_rank.setflags(write=False)


def build_index(records: Iterable[ImageRecord | tuple], vocab: VisualVocabulary) -> BowIndex:
    """Quantize and signaturize every record into a fresh index.

    Records are consumed lazily, so large collections can be streamed.
    Duplicate image ids raise IngestionError.
    """
    index = BowIndex(vocab)
    counts: list[int] = []
    buckets: dict[int, list[tuple[int, int, np.uint64]]] = {}
    for rec in records:
        rec = ImageRecord(*rec)
        if rec.image_id in index._id_to_idx:
            raise IngestionError(f"duplicate image id {rec.image_id!r}")
        idx = len(index.image_ids)
        index._id_to_idx[rec.image_id] = idx
        index.image_ids.append(rec.image_id)
        index.points.append(rec.point)
        index.tags.append(tuple(rec.tags))
        index._keypoints.append(np.array(rec.features.keypoints))
        counts.append(len(rec.features))
        words = assign_all(rec.features.descriptors, vocab)
        sigs = db_signatures(rec.features.descriptors, words, vocab)
        for j, (w, sig) in enumerate(zip(words.tolist(), sigs.tolist())):
            buckets.setdefault(w, []).append((idx, j, sig))
    index.desc_counts = np.array(counts, dtype=np.int64)
    for word, entries in buckets.items():
        imgs = np.array([e[0] for e in entries], dtype=np.int32)
        kps = np.array([e[1] for e in entries], dtype=np.int32)
        sigs = np.array([e[2] for e in entries], dtype=np.uint64)
        index.postings[word] = (imgs, kps, sigs)
    index._finalize()
    return index


def query(
    index: BowIndex,
    q: FeatureSet,
    top_k: int = 100,
    vocab: VisualVocabulary | None = None,
) -> list[RankedMatch]:
    """Rank database images against a query FeatureSet.

    Only images with a positive score are returned, best first, ties by
    ascending image id. ``vocab`` may be passed for an explicit
    compatibility check against the index's vocabulary.
    """
    if vocab is not None and not index.vocab.compatible_with(vocab):
        raise ConfigurationError("query vocabulary does not match index vocabulary")
    vocab = index.vocab
    n_images = len(index)
    if len(q) == 0 or n_images == 0:
        return []
    scores = np.zeros(n_images)
    pair_q: list[np.ndarray] = []
    pair_img: list[np.ndarray] = []
    pair_kp: list[np.ndarray] = []
    pair_h: list[np.ndarray] = []
    projected = q.descriptors @ vocab.projection.T
    for qi in range(len(q)):
        words = multi_assign(q.descriptors[qi], vocab)
        imgs_parts, kps_parts, h_parts, w_parts = [], [], [], []
        for word in words:
            posting = index.postings.get(word)
            if posting is None:
                continue
            imgs, kps, sigs = posting
            ham = np.bitwise_count(sigs ^ query_signature(projected[qi], word, vocab))
            keep = ham <= HAMMING_THRESHOLD
            if not keep.any():
                continue
            imgs_parts.append(imgs[keep])
            kps_parts.append(kps[keep])
            h_parts.append(ham[keep].astype(np.int64))
            w_parts.append(pair_weight(word, ham[keep], vocab))
        if not imgs_parts:
            continue
        imgs = np.concatenate(imgs_parts)
        weights = np.concatenate(w_parts)
        # Burstiness: one query descriptor matching m postings of the same
        # image contributes each pair at weight / sqrt(m).
        uniq, inverse, mult = np.unique(imgs, return_inverse=True, return_counts=True)
        weights = weights / np.sqrt(mult[inverse])
        np.add.at(scores, imgs, weights)
        pair_q.append(np.full(imgs.shape[0], qi, dtype=np.int64))
        pair_img.append(imgs)
        pair_kp.append(np.concatenate(kps_parts))
        pair_h.append(np.concatenate(h_parts))
    matched = np.flatnonzero(scores > 0.0)
    if matched.size == 0:
        return []
    scores[matched] /= np.sqrt(index.desc_counts[matched])
    order = matched[np.lexsort((index._id_rank[matched], -scores[matched]))]
    top = order[: max(top_k, 0)]
    all_q = np.concatenate(pair_q)
    all_img = np.concatenate(pair_img)
    all_kp = np.concatenate(pair_kp)
    all_h = np.concatenate(pair_h)
    results = []
    for img_idx in top:
        sel = all_img == img_idx
        matches = list(zip(all_q[sel].tolist(), all_kp[sel].tolist(), all_h[sel].tolist()))
        results.append(RankedMatch(index.image_ids[img_idx], float(scores[img_idx]), matches))
    return results


def brute_force_score(
    records: Sequence[ImageRecord | tuple],
    vocab: VisualVocabulary,
    q: FeatureSet,
    top_k: int = 100,
) -> list[RankedMatch]:
    """Oracle scorer: the exact query() formula via exhaustive scans.

    Walks every (image, query descriptor, database descriptor) combination
    directly; no inverted structure is built.
    """
    if len(q) == 0:
        return []
    projected = q.descriptors @ vocab.projection.T
    q_words = [multi_assign(q.descriptors[qi], vocab) for qi in range(len(q))]
    q_sigs = [
        {w: query_signature(projected[qi], w, vocab) for w in words}
        for qi, words in enumerate(q_words)
    ]
    scored: list[RankedMatch] = []
    seen_ids = set()
    for rec in records:
        rec = ImageRecord(*rec)
        if rec.image_id in seen_ids:
            raise IngestionError(f"duplicate image id {rec.image_id!r}")
        seen_ids.add(rec.image_id)
        n_db = len(rec.features)
        if n_db == 0:
            continue
        db_words = assign_all(rec.features.descriptors, vocab)
        sigs = db_signatures(rec.features.descriptors, db_words, vocab)
        score = 0.0
        matches: list[tuple[int, int, int]] = []
        for qi, words in enumerate(q_words):
            hits: list[tuple[int, int, float]] = []
            for j in range(n_db):
                w = int(db_words[j])
                if w not in q_sigs[qi]:
                    continue
                h = int(np.bitwise_count(np.uint64(sigs[j] ^ q_sigs[qi][w])))
                if h <= HAMMING_THRESHOLD:
                    hits.append((j, h, float(pair_weight(w, h, vocab))))
            if not hits:
                continue
            m = np.sqrt(len(hits))
            for j, h, weight in hits:
                score += weight / m
                matches.append((qi, j, h))
        if score > 0.0:
            scored.append(RankedMatch(rec.image_id, score / np.sqrt(n_db), matches))
    scored.sort(key=lambda rm: (-rm.score, rm.image_id))
    return scored[: max(top_k, 0)]


# ---------------------------------------------------------------------------
# Binary index file ("GCIX1")
# ---------------------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def save_index(index: BowIndex, path) -> None:
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(vocabulary_bytes(index.vocab))
        fh.write(struct.pack("<I", len(index)))
        for i, image_id in enumerate(index.image_ids):
            fh.write(_pack_str(image_id))
            fh.write(struct.pack("<dd", index.points[i].lat, index.points[i].lon))
            fh.write(struct.pack("<H", len(index.tags[i])))
            for tag in index.tags[i]:
                fh.write(_pack_str(tag))
            kps = index._keypoints[i]
            fh.write(struct.pack("<I", kps.shape[0]))
            fh.write(kps.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(index.postings)))
        for word in sorted(index.postings):
            imgs, kps, sigs = index.postings[word]
            fh.write(struct.pack("<II", word, imgs.shape[0]))
            fh.write(imgs.astype("<i4").tobytes())
            fh.write(kps.astype("<i4").tobytes())
            fh.write(sigs.astype("<u8").tobytes())


class _Reader:
    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.off = offset

    def unpack(self, fmt: str):
        try:
            values = struct.unpack_from(fmt, self.data, self.off)
        except struct.error as exc:
            raise TruncatedDataError(f"index file truncated: {exc}") from exc
        self.off += struct.calcsize(fmt)
        return values

    def read_str(self) -> str:
        (length,) = self.unpack("<H")
        raw = self.data[self.off : self.off + length]
        if len(raw) < length:
            raise TruncatedDataError("index file truncated inside a string")
        self.off += length
        return raw.decode("utf-8")

    def read_array(self, dtype: str, count: int) -> np.ndarray:
        nbytes = np.dtype(dtype).itemsize * count
        if self.off + nbytes > len(self.data):
            raise TruncatedDataError("index file truncated inside an array")
        arr = np.frombuffer(self.data, dtype, count, self.off).copy()
        self.off += nbytes
        return arr


def load_index(path) -> BowIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != INDEX_MAGIC:
        raise MalformedHeaderError(f"{path!r} is not a {INDEX_MAGIC.decode()} index file")
    vocab, off = vocabulary_from_bytes(data, 5)
    reader = _Reader(data, off)
    index = BowIndex(vocab)
    (n_images,) = reader.unpack("<I")
    counts = []
    for i in range(n_images):
        image_id = reader.read_str()
        lat, lon = reader.unpack("<dd")
        (n_tags,) = reader.unpack("<H")
        tags = tuple(reader.read_str() for _ in range(n_tags))
        (n_kp,) = reader.unpack("<I")
        kps = reader.read_array("<f8", n_kp * 4).reshape(n_kp, 4)
        index._id_to_idx[image_id] = i
        index.image_ids.append(image_id)
        index.points.append(GeoPoint(lat, lon))
        index.tags.append(tags)
        index._keypoints.append(kps)
        counts.append(n_kp)
    index.desc_counts = np.array(counts, dtype=np.int64)
    (n_words,) = reader.unpack("<I")
    for _ in range(n_words):
        word, count = reader.unpack("<II")
        imgs = reader.read_array("<i4", count)
        kps = reader.read_array("<i4", count)
        sigs = reader.read_array("<u8", count)
        index.postings[word] = (imgs, kps, sigs)
    index._finalize()
    return index
