"""PPM codec: byte-exact round trips and distinct failure modes."""

import numpy as np
import pytest

from geocloak import (
    MalformedHeaderError,
    RasterImage,
    TruncatedDataError,
    read_image,
    write_image,
)
from geocloak.image import PNG_SUPPORTED, encode_u8


def test_single_white_pixel_decodes(tmp_path):
    path = tmp_path / "w.ppm"
    path.write_bytes(b"P6\n1 1\n255\n\xff\xff\xff")
    img = read_image(path)
    assert (img.width, img.height) == (1, 1)
    np.testing.assert_array_equal(img.pixels, np.ones((1, 1, 3)))


def test_write_black_pixel_bytes(tmp_path):
    path = tmp_path / "b.ppm"
    write_image(RasterImage(np.zeros((1, 1, 3))), path)
    assert path.read_bytes() == b"P6\n1 1\n255\n\x00\x00\x00"


def test_round_half_up_encoding():
    img = RasterImage(np.full((1, 1, 3), 0.5))
    assert encode_u8(img)[0, 0, 0] == 128


def test_write_is_deterministic(tmp_path):
    rng = np.random.default_rng(42)
    img = RasterImage(rng.random((13, 9, 3)))
    write_image(img, tmp_path / "a.ppm")
    write_image(img, tmp_path / "b.ppm")
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()


def test_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    # Channels quantized to exact multiples of 1/255 survive the trip.
    img = RasterImage(rng.integers(0, 256, (20, 31, 3)) / 255.0)
    write_image(img, tmp_path / "rt.ppm")
    back = read_image(tmp_path / "rt.ppm")
    np.testing.assert_array_equal(back.pixels, img.pixels)


def test_read_write_read_identity_on_wellformed_files(tmp_path):
    rng = np.random.default_rng(8)
    raw = b"P6\n5 4\n255\n" + bytes(rng.integers(0, 256, 60).tolist())
    (tmp_path / "src.ppm").write_bytes(raw)
    img = read_image(tmp_path / "src.ppm")
    write_image(img, tmp_path / "copy.ppm")
    assert (tmp_path / "copy.ppm").read_bytes() == raw


def test_missing_file_raises_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_image(tmp_path / "absent.ppm")


def test_zero_width_header_rejected(tmp_path):
    path = tmp_path / "z.ppm"
    path.write_bytes(b"P6\n0 5\n255\n")
    with pytest.raises(MalformedHeaderError):
        read_image(path)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "m.ppm"
    path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(MalformedHeaderError):
        read_image(path)


def test_wrong_maxval_rejected(tmp_path):
    path = tmp_path / "mx.ppm"
    path.write_bytes(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00")
    with pytest.raises(MalformedHeaderError):
        read_image(path)


def test_truncated_pixels_rejected(tmp_path):
    path = tmp_path / "t.ppm"
    path.write_bytes(b"P6\n2 2\n255\n\x00\x00\x00")
    with pytest.raises(TruncatedDataError):
        read_image(path)


def test_header_comments_are_skipped(tmp_path):
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# a comment\n2 1 # inline\n255\n" + b"\x01\x02\x03\x04\x05\x06")
    img = read_image(path)
    assert (img.width, img.height) == (2, 1)


def test_pixel_bounds_validated():
    with pytest.raises(ValueError):
        RasterImage(np.full((2, 2, 3), 1.5))
    with pytest.raises(ValueError):
        RasterImage(np.full((2, 2, 3), -0.1))


def test_pixels_are_immutable():
    img = RasterImage(np.zeros((2, 2, 3)))
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1.0


@pytest.mark.skipif(not PNG_SUPPORTED, reason="Pillow not installed")
def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    img = RasterImage(rng.integers(0, 256, (8, 6, 3)) / 255.0)
    write_image(img, tmp_path / "x.png")
    back = read_image(tmp_path / "x.png")
    np.testing.assert_array_equal(back.pixels, img.pixels)
