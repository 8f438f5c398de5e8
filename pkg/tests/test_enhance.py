"""Filter recipes, saliency crop, and tilt-shift against direct oracles."""

import numpy as np
import pytest

from geocloak import (
    ConfigurationError,
    DegenerateInputError,
    RasterImage,
    apply_filter,
    saliency_center,
    smart_crop,
    tilt_shift,
)
from geocloak.enhance import FILTER_NAMES, tilt_shift_sigma

from conftest import procedural_image


def gray(value, width=5, height=5):
    return RasterImage(np.full((height, width, 3), float(value)))


class TestFilters:
    def test_gotham_hand_derived_midgray(self):
        # L = 0.5; L^0.8 = 0.57435; tone = 1.4*(L^0.8 - 0.5) + 0.5 = 0.60409;
        # output = (0.9*tone, 0.9*tone, 1.1*tone + 0.03).
        out = apply_filter(gray(0.5), "gotham")
        np.testing.assert_allclose(
            out.pixels[2, 2], [0.5436, 0.5436, 0.6944], atol=1e-3
        )

    def test_gotham_channel_invariant(self):
        rng = np.random.default_rng(42)
        img = RasterImage(rng.random((40, 30, 3)))
        out = apply_filter(img, "gotham").pixels
        np.testing.assert_array_equal(out[..., 0], out[..., 1])
        assert (out[..., 2] >= out[..., 0] - 1e-12).all()

    def test_lomo_fixes_midgray_at_center(self):
        # Odd dimensions put a pixel exactly at the image center where the
        # vignette factor is 1 and the contrast s-curve fixes 0.5.
        out = apply_filter(gray(0.5, 9, 7), "lomo")
        np.testing.assert_allclose(out.pixels[3, 4], [0.5, 0.5, 0.5], atol=1e-12)

    @pytest.mark.parametrize("name", ["lomo", "toaster"])
    def test_vignette_darker_in_corners(self, name):
        out = apply_filter(gray(0.6, 21, 15), name).pixels
        center = out[7, 10].sum()
        for corner in (out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]):
            assert corner.sum() < center

    @pytest.mark.parametrize("name", FILTER_NAMES)
    def test_deterministic_and_dimension_preserving(self, name):
        img = procedural_image(3, 24, 18)
        a = apply_filter(img, name)
        b = apply_filter(img, name)
        assert (a.width, a.height) == (img.width, img.height)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    @pytest.mark.parametrize("name", FILTER_NAMES)
    def test_output_stays_in_unit_range(self, name):
        rng = np.random.default_rng(9)
        img = RasterImage(rng.random((16, 16, 3)))
        out = apply_filter(img, name).pixels
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_unknown_filter_rejected(self):
        with pytest.raises(ConfigurationError):
            apply_filter(gray(0.5), "clarendon")


class TestSaliency:
    def test_uniform_falls_back_to_geometric_center(self):
        assert saliency_center(gray(0.5, 100, 100)) == (50.0, 50.0)

    def test_bright_square_pulls_centroid(self):
        px = np.zeros((100, 100, 3))
        px[0:10, 0:10] = 1.0
        cx, cy = saliency_center(RasterImage(px))
        # All gradient energy lives on the square's edges.
        assert 0 <= cx <= 11 and 0 <= cy <= 11

    def test_mirror_symmetry_centers_x(self):
        rng = np.random.default_rng(5)
        half = rng.random((40, 30, 3))
        px = np.concatenate([half, half[:, ::-1]], axis=1)
        cx, _cy = saliency_center(RasterImage(px))
        # The pixel-center centroid of a mirrored pattern is (W-1)/2,
        # exactly half a pixel from W/2; allow float dust on the boundary.
        assert abs(cx - px.shape[1] / 2) <= 0.5 + 1e-9

    def test_too_small_rejected(self):
        with pytest.raises(DegenerateInputError):
            saliency_center(gray(0.5, 2, 2))


class TestSmartCrop:
    def test_window_size_formula(self):
        img = RasterImage(np.random.default_rng(0).random((800, 1000, 3)))
        _out, window = smart_crop(img, 0.2)
        assert (window.w, window.h) == (894, 715)

    def test_fraction_zero_is_identity(self):
        img = procedural_image(1, 20, 12)
        out, window = smart_crop(img, 0.0)
        assert (window.x0, window.y0, window.w, window.h) == (0, 0, 20, 12)
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_uniform_image_crops_about_center(self):
        out, window = smart_crop(gray(0.3, 100, 60), 0.4)
        assert window.x0 + window.w / 2 == pytest.approx(50, abs=1)
        assert window.y0 + window.h / 2 == pytest.approx(30, abs=1)

    def test_aspect_ratio_preserved_within_rounding(self):
        img = gray(0.4, 640, 480)
        for fraction in (0.2, 0.4, 0.63):
            _out, w = smart_crop(img, fraction)
            assert abs(w.w / w.h - 640 / 480) < 1 / w.h + 1 / 480

    def test_window_stays_inside_image(self):
        px = np.zeros((50, 80, 3))
        px[0:8, 0:8] = 1.0  # saliency near the corner forces clamping
        out, window = smart_crop(RasterImage(px), 0.4)
        assert window.x0 >= 0 and window.y0 >= 0
        assert window.x0 + window.w <= 80 and window.y0 + window.h <= 50
        assert (out.width, out.height) == (window.w, window.h)

    def test_bad_fraction_rejected(self):
        img = gray(0.5, 10, 10)
        with pytest.raises(ConfigurationError):
            smart_crop(img, 1.0)
        with pytest.raises(ConfigurationError):
            smart_crop(img, -0.2)

    def test_degenerate_window_rejected(self):
        with pytest.raises(DegenerateInputError):
            smart_crop(gray(0.5, 2, 2), 0.9)


def reference_tilt_shift(img, focus_y):
    """Direct per-pixel kernel sums: horizontal then vertical pass."""
    h, w, _ = img.pixels.shape
    out = np.array(img.pixels)
    for y in range(h):
        sigma = tilt_shift_sigma(h, y, focus_y)
        if sigma == 0:
            continue
        radius = 3 * sigma
        offsets = np.arange(-radius, radius + 1)
        kern = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
        # Horizontal pass over the full image, then vertical, both
        # renormalized where the kernel hangs over the border.
        horiz = np.zeros((h, w, 3))
        for yy in range(h):
            for xx in range(w):
                acc = np.zeros(3)
                norm = 0.0
                for o, kv in zip(offsets, kern):
                    if 0 <= xx + o < w:
                        acc += kv * img.pixels[yy, xx + o]
                        norm += kv
                horiz[yy, xx] = acc / norm
        for xx in range(w):
            acc = np.zeros(3)
            norm = 0.0
            for o, kv in zip(offsets, kern):
                if 0 <= y + o < h:
                    acc += kv * horiz[y + o, xx]
                    norm += kv
            out[y, xx] = acc / norm
    return out


class TestTiltShift:
    def test_uniform_image_unchanged(self):
        img = gray(0.42, 24, 30)
        out = tilt_shift(img, 15)
        np.testing.assert_allclose(out.pixels, img.pixels, atol=1e-12)

    def test_focus_band_bit_identical(self):
        img = procedural_image(2, 16, 36)
        focus = 18
        out = tilt_shift(img, focus)
        band = img.height / 6.0
        for y in range(img.height):
            if abs(y - focus) <= band:
                np.testing.assert_array_equal(out.pixels[y], img.pixels[y])

    def test_alternating_columns_match_kernel_oracle(self):
        h, w = 36, 24
        px = np.zeros((h, w, 3))
        px[:, ::2] = 1.0
        img = RasterImage(px)
        focus = 18
        out = tilt_shift(img, focus)
        ref = reference_tilt_shift(img, focus)
        np.testing.assert_allclose(out.pixels, ref, atol=1e-10)
        # A sigma=2 row is pulled toward the 0/1 midpoint.
        sigma2_rows = [y for y in range(h) if tilt_shift_sigma(h, y, focus) == 2]
        assert sigma2_rows
        row = out.pixels[sigma2_rows[0], 2:-2, 0]
        assert (np.abs(row - 0.5) < np.abs(px[sigma2_rows[0], 2 : w - 2, 0] - 0.5)).all()

    def test_random_image_matches_kernel_oracle(self):
        img = procedural_image(13, 20, 30)
        out = tilt_shift(img, 4)
        ref = reference_tilt_shift(img, 4)
        np.testing.assert_allclose(out.pixels, ref, atol=1e-10)

    def test_sigma_profile(self):
        h = 120
        focus = 60
        band = h / 6.0
        assert tilt_shift_sigma(h, 60, focus) == 0
        assert tilt_shift_sigma(h, int(60 + band), focus) == 0
        assert tilt_shift_sigma(h, 0, focus) == 4
        sigmas = [tilt_shift_sigma(h, y, focus) for y in range(h)]
        assert set(sigmas) <= {0, 1, 2, 3, 4}

    def test_focus_out_of_range_rejected(self):
        img = gray(0.5, 10, 10)
        with pytest.raises(ConfigurationError):
            tilt_shift(img, 10)
        with pytest.raises(ConfigurationError):
            tilt_shift(img, -1)
