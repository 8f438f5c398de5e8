"""Local keypoint + descriptor extraction.

Two extractors share one output type:

* :func:`extract_features` - a difference-of-Gaussians detector with
  gradient-orientation keypoints and 4x4x8 histogram descriptors (the
  classic 128-d recipe). It does not claim pixel equivalence with any
  particular library; downstream modules only rely on the FeatureSet
  contract.
* :func:`synthetic_features` - seeded pseudo-random features, the test
  substrate that lets retrieval and geometry be exercised without pixel
  processing.

Descriptors are always 128-d, non-negative, and L2-normalized.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter

from .errors import DegenerateInputError, MalformedHeaderError, TruncatedDataError
from .image import RasterImage

DESCRIPTOR_DIM = 128
FEATURES_MAGIC = b"GCFT1"


class Keypoint(NamedTuple):
    x: float
    y: float
    scale: float
    orientation: float  # radians in [0, 2*pi)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Keypoints with parallel unit-norm descriptors for one image."""

    image_id: str
    keypoints: np.ndarray  # (n, 4) float64 columns x, y, scale, orientation
    descriptors: np.ndarray  # (n, 128) float64

    def __post_init__(self):
        kps = np.ascontiguousarray(np.asarray(self.keypoints, dtype=np.float64))
        des = np.ascontiguousarray(np.asarray(self.descriptors, dtype=np.float64))
        if kps.size == 0:
            kps = kps.reshape(0, 4)
        if des.size == 0:
            des = des.reshape(0, DESCRIPTOR_DIM)
        if kps.ndim != 2 or kps.shape[1] != 4:
            raise ValueError(f"keypoints must be (n, 4), got {kps.shape}")
        if des.ndim != 2 or des.shape[1] != DESCRIPTOR_DIM:
            raise ValueError(f"descriptors must be (n, {DESCRIPTOR_DIM}), got {des.shape}")
        if kps.shape[0] != des.shape[0]:
            raise ValueError("keypoints and descriptors must be parallel")
        if des.shape[0]:
            if des.min() < 0.0:
                raise ValueError("descriptor elements must be non-negative")
            norms = np.linalg.norm(des, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-6):
                raise ValueError("descriptors must be L2-normalized")
        kps.setflags(write=False)
        des.setflags(write=False)
        object.__setattr__(self, "keypoints", kps)
        object.__setattr__(self, "descriptors", des)

    def __len__(self) -> int:
        return self.keypoints.shape[0]

    def keypoint(self, i: int) -> Keypoint:
        x, y, scale, orientation = self.keypoints[i]
        return Keypoint(float(x), float(y), float(scale), float(orientation))


@dataclass(frozen=True)
class ExtractParams:
    octaves: int = 4
    scales_per_octave: int = 3
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    base_sigma: float = 1.6


@dataclass(frozen=True)
class SyntheticLayout:
    """Spatial envelope for synthetic keypoints."""

    width: float = 512.0
    height: float = 512.0
    scale_range: tuple[float, float] = (2.0, 8.0)


# ---------------------------------------------------------------------------
# DoG detector
# ---------------------------------------------------------------------------

_ORI_BINS = 36
_ORI_PEAK_RATIO = 0.8
_DESC_WIDTH = 4  # 4x4 spatial grid
_DESC_ORI_BINS = 8
_DESC_CLIP = 0.2
_TWO_PI = 2.0 * np.pi


def _gaussian_levels(base: np.ndarray, params: ExtractParams) -> list[np.ndarray]:
    """One octave of progressively blurred images (scales_per_octave + 3)."""
    k = 2.0 ** (1.0 / params.scales_per_octave)
    levels = [base]
    sigma_prev = params.base_sigma
    for _ in range(params.scales_per_octave + 2):
        sigma_next = sigma_prev * k
        delta = np.sqrt(sigma_next**2 - sigma_prev**2)
        levels.append(gaussian_filter(levels[-1], delta, mode="nearest"))
        sigma_prev = sigma_next
    return levels


def _is_extremum(dog: np.ndarray, threshold: float) -> list[np.ndarray]:
    """Boolean masks of 26-neighborhood extrema for interior DoG levels."""
    stack = np.stack(dog)
    footprint = np.ones((3, 3, 3), dtype=bool)
    maxima = maximum_filter(stack, footprint=footprint, mode="nearest") == stack
    minima = minimum_filter(stack, footprint=footprint, mode="nearest") == stack
    strong = np.abs(stack) > threshold
    masks = []
    for level in range(1, len(dog) - 1):
        m = strong[level] & (maxima[level] | minima[level])
        m[0, :] = m[-1, :] = False
        m[:, 0] = m[:, -1] = False
        masks.append(m)
    return masks


def _passes_edge_test(d: np.ndarray, r: int, c: int, edge_ratio: float) -> bool:
    dxx = d[r, c + 1] + d[r, c - 1] - 2.0 * d[r, c]
    dyy = d[r + 1, c] + d[r - 1, c] - 2.0 * d[r, c]
    dxy = (d[r + 1, c + 1] - d[r + 1, c - 1] - d[r - 1, c + 1] + d[r - 1, c - 1]) / 4.0
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    if det <= 0.0:
        return False
    return tr * tr / det < (edge_ratio + 1.0) ** 2 / edge_ratio


def _gradients(level: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference magnitude and angle fields (borders zeroed)."""
    dx = np.zeros_like(level)
    dy = np.zeros_like(level)
    dx[:, 1:-1] = (level[:, 2:] - level[:, :-2]) / 2.0
    dy[1:-1, :] = (level[2:, :] - level[:-2, :]) / 2.0
    mag = np.sqrt(dx * dx + dy * dy)
    ang = np.mod(np.arctan2(dy, dx), _TWO_PI)
    return mag, ang


def _smooth_circular(hist: np.ndarray, passes: int = 2) -> np.ndarray:
    for _ in range(passes):
        hist = (np.roll(hist, 1) + hist + np.roll(hist, -1)) / 3.0
    return hist


def _orientation_peaks(mag: np.ndarray, ang: np.ndarray, r: int, c: int, sigma: float) -> list[float]:
    """Dominant gradient directions near (r, c); secondary peaks >= 80% of max."""
    h, w = mag.shape
    radius = max(int(round(3.0 * 1.5 * sigma)), 1)
    r0, r1 = max(r - radius, 0), min(r + radius + 1, h)
    c0, c1 = max(c - radius, 0), min(c + radius + 1, w)
    win_mag = mag[r0:r1, c0:c1]
    win_ang = ang[r0:r1, c0:c1]
    dr = (np.arange(r0, r1) - r)[:, None]
    dc = (np.arange(c0, c1) - c)[None, :]
    weight = np.exp(-(dr * dr + dc * dc) / (2.0 * (1.5 * sigma) ** 2))
    bins = np.minimum((win_ang * (_ORI_BINS / _TWO_PI)).astype(np.int64), _ORI_BINS - 1)
    hist = np.zeros(_ORI_BINS)
    np.add.at(hist, bins.ravel(), (win_mag * weight).ravel())
    hist = _smooth_circular(hist)
    peak = hist.max()
    if peak <= 0.0:
        return []
    orientations = []
    for b in range(_ORI_BINS):
        left = hist[(b - 1) % _ORI_BINS]
        right = hist[(b + 1) % _ORI_BINS]
        if hist[b] >= _ORI_PEAK_RATIO * peak and hist[b] > left and hist[b] > right:
            # Parabolic refinement of the peak position.
            denom = left - 2.0 * hist[b] + right
            shift = 0.0 if denom == 0.0 else 0.5 * (left - right) / denom
            orientations.append(np.mod((b + 0.5 + shift) * (_TWO_PI / _ORI_BINS), _TWO_PI))
    return orientations


def _descriptor(
    mag: np.ndarray, ang: np.ndarray, r: int, c: int, sigma: float, orientation: float
) -> np.ndarray | None:
    h, w = mag.shape
    hist_width = 3.0 * sigma
    radius = int(round(hist_width * np.sqrt(2.0) * (_DESC_WIDTH + 1) / 2.0))
    r0, r1 = max(r - radius, 0), min(r + radius + 1, h)
    c0, c1 = max(c - radius, 0), min(c + radius + 1, w)
    dr = (np.arange(r0, r1) - r)[:, None].astype(np.float64)
    dc = (np.arange(c0, c1) - c)[None, :].astype(np.float64)
    cos_o, sin_o = np.cos(orientation), np.sin(orientation)
    # Offsets rotated into the keypoint frame, in descriptor-bin units.
    col_rot = (cos_o * dc + sin_o * dr) / hist_width
    row_rot = (-sin_o * dc + cos_o * dr) / hist_width
    row_bin = row_rot + _DESC_WIDTH / 2.0 - 0.5
    col_bin = col_rot + _DESC_WIDTH / 2.0 - 0.5
    inside = (row_bin > -1.0) & (row_bin < _DESC_WIDTH) & (col_bin > -1.0) & (col_bin < _DESC_WIDTH)
    if not inside.any():
        return None
    win_mag = np.broadcast_to(mag[r0:r1, c0:c1], inside.shape)[inside]
    win_ang = np.broadcast_to(ang[r0:r1, c0:c1], inside.shape)[inside]
    weight = np.exp(-(row_rot[inside] ** 2 + col_rot[inside] ** 2) / (2.0 * (_DESC_WIDTH / 2.0) ** 2))
    values = win_mag * weight
    obin = np.mod(win_ang - orientation, _TWO_PI) * (_DESC_ORI_BINS / _TWO_PI)
    rbin = row_bin[inside]
    cbin = col_bin[inside]

    hist = np.zeros((_DESC_WIDTH + 2, _DESC_WIDTH + 2, _DESC_ORI_BINS))
    r_lo = np.floor(rbin).astype(np.int64)
    c_lo = np.floor(cbin).astype(np.int64)
    o_lo = np.floor(obin).astype(np.int64)
    r_fr = rbin - r_lo
    c_fr = cbin - c_lo
    o_fr = obin - o_lo
    for dr_bit in (0, 1):
        wr = values * (r_fr if dr_bit else 1.0 - r_fr)
        for dc_bit in (0, 1):
            wc = wr * (c_fr if dc_bit else 1.0 - c_fr)
            for do_bit in (0, 1):
                wo = wc * (o_fr if do_bit else 1.0 - o_fr)
                np.add.at(
                    hist,
                    (r_lo + 1 + dr_bit, c_lo + 1 + dc_bit, (o_lo + do_bit) % _DESC_ORI_BINS),
                    wo,
                )
    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm <= 1e-12:
        return None
    vec = np.minimum(vec / norm, _DESC_CLIP)
    norm = np.linalg.norm(vec)
    if norm <= 1e-12:
        return None
    return vec / norm


def extract_features(
    img: RasterImage, params: ExtractParams = ExtractParams(), image_id: str = ""
) -> FeatureSet:
    """Detect multi-scale DoG extrema and describe them; fully deterministic."""
    if img.width < 32 or img.height < 32:
        raise DegenerateInputError("feature extraction needs at least a 32x32 image")
    k = 2.0 ** (1.0 / params.scales_per_octave)
    # Lift the assumed capture blur (0.5) up to base_sigma.
    base = gaussian_filter(
        img.luma(), np.sqrt(params.base_sigma**2 - 0.25), mode="nearest"
    )
    keypoints: list[tuple[float, float, float, float]] = []
    descriptors: list[np.ndarray] = []
    for octave in range(params.octaves):
        if min(base.shape) < 8:
            break
        levels = _gaussian_levels(base, params)
        dog = [levels[i + 1] - levels[i] for i in range(len(levels) - 1)]
        grads = {}
        for level_idx, mask in enumerate(_is_extremum(dog, params.contrast_threshold), start=1):
            if not mask.any():
                continue
            if level_idx not in grads:
                grads[level_idx] = _gradients(levels[level_idx])
            mag, ang = grads[level_idx]
            sigma_local = params.base_sigma * k**level_idx
            scale = sigma_local * 2.0**octave
            for r, c in np.argwhere(mask):
                if not _passes_edge_test(dog[level_idx], r, c, params.edge_ratio):
                    continue
                for orientation in _orientation_peaks(mag, ang, r, c, sigma_local):
                    desc = _descriptor(mag, ang, r, c, sigma_local, orientation)
                    if desc is None:
                        continue
                    keypoints.append(
                        (c * 2.0**octave, r * 2.0**octave, scale, float(orientation))
                    )
                    descriptors.append(desc)
        base = levels[params.scales_per_octave][::2, ::2]
    if not keypoints:
        return FeatureSet(image_id, np.empty((0, 4)), np.empty((0, DESCRIPTOR_DIM)))
    return FeatureSet(image_id, np.array(keypoints), np.array(descriptors))


def synthetic_features(
    seed: int,
    n: int,
    layout: SyntheticLayout = SyntheticLayout(),
    image_id: str | None = None,
) -> FeatureSet:
    """Deterministic pseudo-random features: same seed, same FeatureSet."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, layout.width, size=n)
    ys = rng.uniform(0.0, layout.height, size=n)
    lo, hi = layout.scale_range
    scales = rng.uniform(lo, hi, size=n)
    orientations = rng.uniform(0.0, _TWO_PI, size=n)
    descriptors = rng.random((n, DESCRIPTOR_DIM))
    if n:
        descriptors /= np.linalg.norm(descriptors, axis=1, keepdims=True)
    return FeatureSet(
        image_id if image_id is not None else f"synthetic-{seed}",
        np.column_stack([xs, ys, scales, orientations]) if n else np.empty((0, 4)),
        descriptors,
    )


# ---------------------------------------------------------------------------
# Binary feature dump ("GCFT1")
# ---------------------------------------------------------------------------


def save_features(feature_sets: Iterable[FeatureSet], path) -> None:
    """Write per-image records: id, count, keypoints, descriptors."""
    sets = list(feature_sets)
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<I", len(sets)))
        for fs in sets:
            raw_id = fs.image_id.encode("utf-8")
            fh.write(struct.pack("<HI", len(raw_id), len(fs)))
            fh.write(raw_id)
            fh.write(fs.keypoints.astype("<f8").tobytes())
            fh.write(fs.descriptors.astype("<f8").tobytes())


def load_features(path) -> list[FeatureSet]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != FEATURES_MAGIC:
        raise MalformedHeaderError(f"{path!r} is not a {FEATURES_MAGIC.decode()} feature dump")
    off = 5
    try:
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        sets = []
        for _ in range(count):
            id_len, n = struct.unpack_from("<HI", data, off)
            off += 6
            image_id = data[off : off + id_len].decode("utf-8")
            off += id_len
            kp_bytes = n * 4 * 8
            de_bytes = n * DESCRIPTOR_DIM * 8
            if off + kp_bytes + de_bytes > len(data):
                raise TruncatedDataError(f"feature dump {path!r} ends mid-record")
            kps = np.frombuffer(data, dtype="<f8", count=n * 4, offset=off).reshape(n, 4)
            off += kp_bytes
            des = np.frombuffer(data, dtype="<f8", count=n * DESCRIPTOR_DIM, offset=off)
            off += de_bytes
            sets.append(FeatureSet(image_id, kps.copy(), des.reshape(n, DESCRIPTOR_DIM).copy()))
        return sets
    except struct.error as exc:
        raise TruncatedDataError(f"feature dump {path!r} is truncated: {exc}") from exc
