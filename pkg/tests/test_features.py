"""Feature extraction: determinism, descriptor contract, rotation covariance."""

import numpy as np
import pytest

from geocloak import (
    DegenerateInputError,
    FeatureSet,
    RasterImage,
    SyntheticLayout,
    extract_features,
    load_features,
    save_features,
    synthetic_features,
)


def checkerboard(seed, cells=8, cell=16):
    """Checkerboard of random gray cells; corners make strong keypoints."""
    rng = np.random.default_rng(seed)
    vals = rng.uniform(0.1, 0.9, (cells, cells))
    img = np.kron(vals, np.ones((cell, cell)))
    return RasterImage(np.repeat(img[:, :, None], 3, axis=2))


def greedy_match_rate(a: FeatureSet, b: FeatureSet, threshold=0.3) -> float:
    """One-to-one greedy matching by ascending descriptor distance."""
    if len(a) == 0:
        return 0.0
    d = np.linalg.norm(a.descriptors[:, None, :] - b.descriptors[None, :, :], axis=2)
    pairs = sorted((float(d[i, j]), i, j) for i in range(len(a)) for j in range(len(b)))
    used_a, used_b = set(), set()
    matched = 0
    for dist, i, j in pairs:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        if dist < threshold:
            matched += 1
    return matched / len(a)


class TestFeatureSetContract:
    def test_norms_and_nonnegativity_enforced(self):
        kps = np.zeros((2, 4))
        bad_norm = np.ones((2, 128))
        with pytest.raises(ValueError):
            FeatureSet("x", kps, bad_norm)
        neg = np.full((2, 128), -1.0) / np.sqrt(128)
        with pytest.raises(ValueError):
            FeatureSet("x", kps, neg)

    def test_parallel_lengths_enforced(self):
        with pytest.raises(ValueError):
            FeatureSet("x", np.zeros((3, 4)), np.ones((2, 128)) / np.sqrt(128))


class TestExtractor:
    def test_uniform_image_yields_no_keypoints(self):
        img = RasterImage(np.full((64, 64, 3), 0.5))
        assert len(extract_features(img)) == 0

    def test_deterministic(self):
        img = checkerboard(42)
        a = extract_features(img)
        b = extract_features(img)
        np.testing.assert_array_equal(a.keypoints, b.keypoints)
        np.testing.assert_array_equal(a.descriptors, b.descriptors)

    def test_descriptor_contract_on_real_output(self):
        fs = extract_features(checkerboard(1))
        assert len(fs) > 0
        norms = np.linalg.norm(fs.descriptors, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)
        assert fs.descriptors.min() >= 0.0

    def test_keypoints_inside_image(self):
        img = checkerboard(2)
        fs = extract_features(img)
        assert (fs.keypoints[:, 0] >= 0).all() and (fs.keypoints[:, 0] < img.width).all()
        assert (fs.keypoints[:, 1] >= 0).all() and (fs.keypoints[:, 1] < img.height).all()
        assert (fs.keypoints[:, 2] > 0).all()
        assert (fs.keypoints[:, 3] >= 0).all() and (fs.keypoints[:, 3] < 2 * np.pi).all()

    def test_too_small_image_rejected(self):
        with pytest.raises(DegenerateInputError):
            extract_features(RasterImage(np.zeros((16, 16, 3))))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_rotation_covariance_on_checkerboards(self, seed):
        img = checkerboard(seed)
        rotated = RasterImage(np.rot90(np.array(img.pixels)).copy())
        rate = greedy_match_rate(extract_features(img), extract_features(rotated))
        assert rate >= 0.8


class TestSyntheticFeatures:
    def test_same_seed_same_output(self):
        a = synthetic_features(42, 25)
        b = synthetic_features(42, 25)
        np.testing.assert_array_equal(a.keypoints, b.keypoints)
        np.testing.assert_array_equal(a.descriptors, b.descriptors)

    def test_zero_count_is_empty(self):
        fs = synthetic_features(1, 0)
        assert len(fs) == 0

    def test_different_seeds_differ(self):
        a = synthetic_features(1, 10)
        b = synthetic_features(2, 10)
        assert not np.array_equal(a.descriptors, b.descriptors)

    def test_layout_respected(self):
        layout = SyntheticLayout(width=100.0, height=50.0, scale_range=(1.0, 3.0))
        fs = synthetic_features(3, 200, layout)
        assert fs.keypoints[:, 0].max() < 100.0
        assert fs.keypoints[:, 1].max() < 50.0
        assert fs.keypoints[:, 2].min() >= 1.0 and fs.keypoints[:, 2].max() <= 3.0


class TestFeatureDump:
    def test_round_trip(self, tmp_path):
        sets = [synthetic_features(s, 10 + s, image_id=f"im{s}") for s in range(4)]
        sets.append(synthetic_features(9, 0, image_id="empty"))
        path = tmp_path / "f.gcf"
        save_features(sets, path)
        back = load_features(path)
        assert [fs.image_id for fs in back] == [fs.image_id for fs in sets]
        for a, b in zip(sets, back):
            np.testing.assert_array_equal(a.keypoints, b.keypoints)
            np.testing.assert_array_equal(a.descriptors, b.descriptors)

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "bad.gcf"
        path.write_bytes(b"NOPE!")
        from geocloak import MalformedHeaderError

        with pytest.raises(MalformedHeaderError):
            load_features(path)

    def test_truncation_detected(self, tmp_path):
        sets = [synthetic_features(1, 8, image_id="a")]
        path = tmp_path / "t.gcf"
        save_features(sets, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        from geocloak import TruncatedDataError

        with pytest.raises(TruncatedDataError):
            load_features(path)
