"""Shared corpus builders for retrieval, engine, and acceptance tests."""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from geocloak import (
    FeatureSet,
    GeoPoint,
    ImageRecord,
    RasterImage,
    synthetic_features,
    train_vocabulary,
)


def random_corpus(seed, n_images, n_desc, spread_deg=1.0):
    """Independent random images at distinct coordinates."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_images):
        feats = synthetic_features(int(rng.integers(2**31)), n_desc, image_id=f"img{i:04d}")
        point = GeoPoint(
            float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170))
        )
        records.append(ImageRecord(f"img{i:04d}", feats, point, ()))
    return records


def perturbed_copy(features, image_id, seed, noise=0.02):
    """A noisy variant of a FeatureSet with renormalized descriptors."""
    rng = np.random.default_rng(seed)
    des = features.descriptors + rng.normal(0.0, noise, features.descriptors.shape)
    des = np.abs(des)
    des /= np.linalg.norm(des, axis=1, keepdims=True)
    return FeatureSet(image_id, np.array(features.keypoints), des)


def location_benchmark(seed=7, n_locations=5, per_location=10, n_desc=40, vocab_k=64):
    """Synthetic mini-benchmark: clustered locations with shared structure.

    Each location has a pool of base descriptors; its images draw noisy
    copies of a subset plus random extras, with independent keypoint
    geometry. Images inside one location sit >200 m apart so only an exact
    propagator can be correct at a 100 m radius.
    """
    rng = np.random.default_rng(seed)
    centers = [
        GeoPoint(10.0 + 12.0 * loc, -150.0 + 60.0 * loc) for loc in range(n_locations)
    ]
    records = []
    for loc in range(n_locations):
        base = np.abs(rng.normal(size=(n_desc, 128)))
        base /= np.linalg.norm(base, axis=1, keepdims=True)
        for j in range(per_location):
            take = rng.choice(n_desc, size=n_desc // 2, replace=False)
            des = np.vstack(
                [
                    base[take] + rng.normal(0.0, 0.01, (take.size, 128)),
                    np.abs(rng.normal(size=(n_desc - take.size, 128))),
                ]
            )
            des = np.abs(des)
            des /= np.linalg.norm(des, axis=1, keepdims=True)
            kps = np.column_stack(
                [
                    rng.uniform(0, 512, n_desc),
                    rng.uniform(0, 512, n_desc),
                    rng.uniform(2, 8, n_desc),
                    rng.uniform(0, 2 * np.pi, n_desc),
                ]
            )
            image_id = f"loc{loc}_{j:02d}"
            # ~300 m north-east steps inside the location cluster.
            point = GeoPoint(centers[loc].lat + 0.003 * j, centers[loc].lon + 0.003 * j)
            records.append(ImageRecord(image_id, FeatureSet(image_id, kps, des), point, ()))
    vocab = train_vocabulary([r.features for r in records], vocab_k, seed=seed)
    return records, vocab


def procedural_image(seed, width=64, height=64):
    """Smooth random blobs with enough structure for feature extraction."""
    rng = np.random.default_rng(seed)
    px = np.zeros((height, width, 3))
    for ch in range(3):
        noise = rng.random((height, width))
        px[..., ch] = gaussian_filter(noise, 2.0, mode="nearest")
    lo, hi = px.min(), px.max()
    px = (px - lo) / (hi - lo)
    return RasterImage(px)
