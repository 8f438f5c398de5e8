"""Deterministic image enhancements: filter recipes, smart crop, tilt-shift.

The five filter recipes are fixed, documented approximations of popular
photo-app looks (the originals are proprietary): Gotham is a high-contrast
near-monochrome with bluish undertones, Kelvin a strong peach/orange
overlay, Lomo a contrast boost with vignette, Nashville a washed-out warm
look, Toaster vivid colors with a pink/orange center glow.

All operations are pure: same input, same output, byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError
from .image import RasterImage

FILTER_NAMES = ("gotham", "kelvin", "lomo", "nashville", "toaster")

TILT_SHIFT_SIGMA_MAX = 4
TILT_SHIFT_BAND_FRACTION = 1.0 / 6.0  # in-focus half-height as a fraction of H


@dataclass(frozen=True)
class CropWindow:
    """A crop rectangle fully inside its source image."""

    x0: int
    y0: int
    w: int
    h: int


def _clamp01(a: np.ndarray) -> np.ndarray:
    return np.clip(a, 0.0, 1.0)


def _luma(px: np.ndarray) -> np.ndarray:
    return 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]


def _saturate(px: np.ndarray, s: float) -> np.ndarray:
    """Scale chroma about the per-pixel luma: clamp01(L + s*(c - L))."""
    lum = _luma(px)[..., None]
    return _clamp01(lum + s * (px - lum))


def _center_distance(height: int, width: int) -> tuple[np.ndarray, float]:
    """Per-pixel distance from the image center and the center-to-corner max."""
    cy = (height - 1) / 2.0
    cx = (width - 1) / 2.0
    y = np.arange(height, dtype=np.float64)[:, None] - cy
    x = np.arange(width, dtype=np.float64)[None, :] - cx
    d = np.sqrt(y * y + x * x)
    d_max = np.sqrt(cy * cy + cx * cx)
    return d, max(d_max, 1e-12)


def _gotham(px: np.ndarray) -> np.ndarray:
    lum = _luma(px)
    tone = _clamp01(1.4 * (lum**0.8 - 0.5) + 0.5)
    out = np.empty_like(px)
    out[..., 0] = 0.9 * tone
    out[..., 1] = 0.9 * tone
    out[..., 2] = _clamp01(1.1 * tone + 0.03)
    return out


def _kelvin(px: np.ndarray) -> np.ndarray:
    c = _saturate(px, 1.2)
    overlay = np.array([1.0, 0.6, 0.0])
    return _clamp01(0.65 * c**0.9 + 0.35 * overlay)


def _lomo(px: np.ndarray) -> np.ndarray:
    c = _clamp01(1.5 * (px - 0.5) + 0.5)
    d, d_max = _center_distance(px.shape[0], px.shape[1])
    vignette = np.maximum(0.0, 1.0 - 0.6 * (d / d_max) ** 2)
    return c * vignette[..., None]


def _nashville(px: np.ndarray) -> np.ndarray:
    c1 = _clamp01(1.2 * px + 0.06)
    c2 = 0.8 * (c1 - 0.5) + 0.5
    c2[..., 0] += 0.05
    c2[..., 2] -= 0.05
    return _clamp01(c2)


def _toaster(px: np.ndarray) -> np.ndarray:
    c = _saturate(px, 1.3)
    d, d_max = _center_distance(px.shape[0], px.shape[1])
    glow = 1.0 - d / d_max
    c[..., 0] += 0.25 * glow
    c[..., 1] += 0.10 * glow
    vignette = np.maximum(0.0, 1.0 - 0.5 * (d / d_max) ** 2)
    return _clamp01(c * vignette[..., None])


_RECIPES = {
    "gotham": _gotham,
    "kelvin": _kelvin,
    "lomo": _lomo,
    "nashville": _nashville,
    "toaster": _toaster,
}


def apply_filter(img: RasterImage, name: str) -> RasterImage:
    """Apply one of the five named filter recipes; dimensions are preserved."""
    key = name.strip().lower()
    if key not in _RECIPES:
        raise ConfigurationError(f"unknown filter {name!r}; choose from {FILTER_NAMES}")
    return RasterImage(_RECIPES[key](np.array(img.pixels)))


def saliency_center(img: RasterImage) -> tuple[float, float]:
    """Gradient-energy-weighted centroid (x, y) as a saliency proxy.

    Sobel gradient magnitude of the luma weights each pixel center; a
    zero-energy (uniform) image falls back to the geometric center
    (width/2, height/2).
    """
    if img.width < 3 or img.height < 3:
        raise DegenerateInputError("saliency needs at least a 3x3 image")
    lum = img.luma()
    # Sobel responses on the interior; borders carry zero weight.
    gx = (
        (lum[:-2, 2:] + 2.0 * lum[1:-1, 2:] + lum[2:, 2:])
        - (lum[:-2, :-2] + 2.0 * lum[1:-1, :-2] + lum[2:, :-2])
    )
    gy = (
        (lum[2:, :-2] + 2.0 * lum[2:, 1:-1] + lum[2:, 2:])
        - (lum[:-2, :-2] + 2.0 * lum[:-2, 1:-1] + lum[:-2, 2:])
    )
    energy = np.zeros((img.height, img.width))
    energy[1:-1, 1:-1] = np.sqrt(gx * gx + gy * gy)
    total = energy.sum()
    if total <= 0.0:
        return img.width / 2.0, img.height / 2.0
    ys, xs = np.mgrid[0 : img.height, 0 : img.width]
    return float((energy * xs).sum() / total), float((energy * ys).sum() / total)


def smart_crop(img: RasterImage, fraction: float) -> tuple[RasterImage, CropWindow]:
    """Crop away `fraction` of the area, keeping the aspect ratio.

    The retained window is floor(W*sqrt(1-f)) x floor(H*sqrt(1-f)),
    centered on the saliency centroid and clamped to the image bounds.
    """
    if not 0.0 <= fraction < 1.0:
        raise ConfigurationError(f"crop fraction must be in [0, 1), got {fraction!r}")
    keep = np.sqrt(1.0 - fraction)
    w = int(np.floor(img.width * keep))
    h = int(np.floor(img.height * keep))
    if w < 1 or h < 1:
        raise DegenerateInputError(f"crop of {fraction} leaves an empty window")
    if w == img.width and h == img.height:
        return img, CropWindow(0, 0, w, h)
    cx, cy = saliency_center(img)
    x0 = int(np.clip(round(cx - w / 2.0), 0, img.width - w))
    y0 = int(np.clip(round(cy - h / 2.0), 0, img.height - h))
    window = CropWindow(x0, y0, w, h)
    return RasterImage(img.pixels[y0 : y0 + h, x0 : x0 + w]), window


def _gaussian_kernel(sigma: int) -> np.ndarray:
    radius = 3 * sigma
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur_normalized(px: np.ndarray, sigma: int) -> np.ndarray:
    """Separable Gaussian blur, kernel cut at 3*sigma, renormalized at borders."""
    from scipy.ndimage import convolve1d

    k = _gaussian_kernel(sigma)
    out = px.copy()
    for axis in (1, 0):
        weight = convolve1d(np.ones(px.shape[:2]), k, axis=axis, mode="constant")
        for ch in range(3):
            out[..., ch] = convolve1d(out[..., ch], k, axis=axis, mode="constant") / weight
    return out


def tilt_shift_sigma(height: int, y: int, focus_y: float) -> int:
    """Blur strength for row y: 0 inside the band, rising linearly to 4."""
    band = height * TILT_SHIFT_BAND_FRACTION
    dist = abs(y - focus_y)
    if dist <= band:
        return 0
    rise = (dist - band) / (height / 2.0 - band)
    sigma = TILT_SHIFT_SIGMA_MAX * min(rise, 1.0)
    return min(int(np.floor(sigma + 0.5)), TILT_SHIFT_SIGMA_MAX)


def tilt_shift(img: RasterImage, focus_y: float) -> RasterImage:
    """Linear tilt-shift: sharp band around focus_y, blur growing outward.

    Rows within H/6 of focus_y are copied bit-identically; beyond the band
    each output row is the input blurred (horizontally and vertically) with
    an integer sigma in {1..4} that rises linearly to 4 at distance H/2.
    """
    if not 0 <= focus_y < img.height:
        raise ConfigurationError(f"focus_y {focus_y!r} outside [0, {img.height})")
    sigmas = np.array([tilt_shift_sigma(img.height, y, focus_y) for y in range(img.height)])
    out = np.array(img.pixels)
    for sigma in np.unique(sigmas):
        if sigma == 0:
            continue
        rows = sigmas == sigma
        out[rows] = _blur_normalized(img.pixels, int(sigma))[rows]
    return RasterImage(out)
