"""Raster image buffers and binary PPM (P6) I/O.

Pixels are held as float64 RGB in [0, 1] so that filter recipes compose
without quantization drift; quantization to 8-bit happens only when a
file is written (round-half-up). PNG support is available when Pillow is
importable and is reported through :data:`PNG_SUPPORTED`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedHeaderError, TruncatedDataError

try:
    from PIL import Image as _PILImage

    PNG_SUPPORTED = True
except ImportError:  # pragma: no cover - Pillow is an optional extra
    _PILImage = None
    PNG_SUPPORTED = False


@dataclass(frozen=True, eq=False)
class RasterImage:
    """An immutable width x height RGB buffer with channels in [0, 1]."""

    pixels: np.ndarray  # (height, width, 3) float64

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixel array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.isfinite(arr).all():
            raise ValueError("pixel values must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("pixel channels must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def luma(self) -> np.ndarray:
        """Rec. 601 luma, shape (height, width)."""
        r, g, b = self.pixels[..., 0], self.pixels[..., 1], self.pixels[..., 2]
        return 0.299 * r + 0.587 * g + 0.114 * b


def _read_ppm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace-separated header tokens, honoring # comments.

    Returns the tokens and the offset one byte past the single whitespace
    character that terminates the last token.
    """
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if i == start:
            raise MalformedHeaderError("unexpected end of PPM header")
        tokens.append(data[start:i])
        # The final header token is terminated by exactly one whitespace byte.
        if len(tokens) == count:
            if i >= n:
                raise MalformedHeaderError("PPM header not terminated")
            i += 1
    return tokens, i


def _decode_ppm(data: bytes) -> RasterImage:
    if data[:2] != b"P6":
        raise MalformedHeaderError("not a binary PPM (missing P6 magic)")
    tokens, offset = _read_ppm_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise MalformedHeaderError(f"non-numeric PPM header field: {exc}") from exc
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"invalid PPM dimensions {width}x{height}")
    if maxval != 255:
        raise MalformedHeaderError(f"only maxval 255 supported, got {maxval}")
    expected = width * height * 3
    payload = data[2 + offset : 2 + offset + expected]
    if len(payload) < expected:
        raise TruncatedDataError(
            f"PPM pixel data truncated: need {expected} bytes, have {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return RasterImage(arr.reshape(height, width, 3))


def read_image(path) -> RasterImage:
    """Load an image file. Binary PPM (P6) always; PNG when Pillow is present.

    Raises FileNotFoundError for a missing file, MalformedHeaderError /
    TruncatedDataError for broken PPM content.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P6":
        return _decode_ppm(data)
    if PNG_SUPPORTED and data[:8] == b"\x89PNG\r\n\x1a\n":
        with _PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return RasterImage(arr)
    raise MalformedHeaderError(f"unrecognized image format in {path!r}")


def encode_u8(img: RasterImage) -> np.ndarray:
    """Quantize channels to uint8 with round-half-up (0.5 -> 128)."""
    return np.floor(img.pixels * 255.0 + 0.5).astype(np.uint8)


def write_image(img: RasterImage, path) -> None:
    """Write a binary PPM (P6, maxval 255); byte-deterministic per image.

    A ``.png`` suffix selects PNG output when Pillow is available.
    """
    path = str(path)
    if path.lower().endswith(".png"):
        if not PNG_SUPPORTED:
            raise MalformedHeaderError("PNG output requested but Pillow is not installed")
        _PILImage.fromarray(encode_u8(img), mode="RGB").save(path, format="PNG")
        return
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(encode_u8(img).tobytes())
