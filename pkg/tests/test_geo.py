"""Geodesy: haversine closed forms, symmetry, grid-cell floor convention."""

import math

import numpy as np
import pytest

from geocloak import ConfigurationError, GeoPoint, GridCell, haversine_m, to_cell
from geocloak.geo import EARTH_RADIUS_M


class TestGeoPoint:
    def test_latitude_bounds_enforced(self):
        with pytest.raises(ConfigurationError):
            GeoPoint(90.01, 0.0)
        with pytest.raises(ConfigurationError):
            GeoPoint(-91.0, 0.0)

    def test_longitude_normalized_to_half_open_range(self):
        assert GeoPoint(0.0, 180.0).lon == -180.0
        assert GeoPoint(0.0, 190.0).lon == -170.0
        assert GeoPoint(0.0, -181.0).lon == 179.0
        assert GeoPoint(10.0, 20.0) == GeoPoint(10.0, 380.0)

    def test_poles_collapse_longitude(self):
        assert GeoPoint(90.0, 123.0) == GeoPoint(90.0, -45.0)


class TestHaversine:
    def test_identity_is_zero(self):
        assert haversine_m(GeoPoint(10, 20), GeoPoint(10, 20)) == 0.0

    def test_equatorial_one_degree_arc(self):
        # Closed form: R * pi / 180.
        expected = EARTH_RADIUS_M * math.pi / 180.0
        d = haversine_m(GeoPoint(0, 0), GeoPoint(0, 1))
        assert d == pytest.approx(111194.9, abs=0.1)
        assert d == pytest.approx(expected, abs=1e-6)

    def test_antipodal_arc(self):
        expected = math.pi * EARTH_RADIUS_M
        d = haversine_m(GeoPoint(90, 0), GeoPoint(-90, 0))
        assert d == pytest.approx(20015086.8, abs=1.0)
        assert d == pytest.approx(expected, abs=1e-6)

    def test_symmetry_exact(self):
        rng = np.random.default_rng(42)
        for _ in range(500):
            a = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
            b = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
            assert haversine_m(a, b) == haversine_m(b, a)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(42)
        for _ in range(2000):
            pts = [
                GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180)) for _ in range(3)
            ]
            ab = haversine_m(pts[0], pts[1])
            bc = haversine_m(pts[1], pts[2])
            ac = haversine_m(pts[0], pts[2])
            assert ac <= ab + bc + 1e-6 * max(ac, 1.0)

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
            b = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
            assert haversine_m(a, b) >= 0.0


class TestGridCells:
    def test_origin_floor_convention(self):
        assert to_cell(GeoPoint(0.0, 0.0), 1.0) == GridCell(90, 180, 1.0)

    def test_same_unit_cell(self):
        assert to_cell(GeoPoint(0.5, 0.5), 1.0) == to_cell(GeoPoint(0.9, 0.9), 1.0)

    def test_negative_latitude_floor(self):
        # floor((-0.1 + 90) / 1) = floor(89.9) = 89
        assert to_cell(GeoPoint(-0.1, 0.0), 1.0).row == 89

    def test_cell_size_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            to_cell(GeoPoint(0, 0), 0.0)
        with pytest.raises(ConfigurationError):
            to_cell(GeoPoint(0, 0), -1.0)

    def test_every_point_maps_to_exactly_one_cell(self):
        rng = np.random.default_rng(42)
        for _ in range(500):
            p = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
            c1 = to_cell(p, 0.5)
            c2 = to_cell(p, 0.5)
            assert c1 == c2

    def test_small_perturbation_away_from_boundary_keeps_cell(self):
        rng = np.random.default_rng(3)
        size = 1.0
        trials = 0
        for _ in range(500):
            p = GeoPoint(rng.uniform(-89, 89), rng.uniform(-179, 179))
            # Only consider points at least size/4 away from every boundary.
            fr_lat = (p.lat + 90.0) % size
            fr_lon = (p.lon + 180.0) % size
            if min(fr_lat, size - fr_lat, fr_lon, size - fr_lon) < size / 4:
                continue
            trials += 1
            delta = size / 4.5
            assert to_cell(GeoPoint(p.lat + delta, p.lon), size) == to_cell(p, size)
            assert to_cell(GeoPoint(p.lat, p.lon - delta), size) == to_cell(p, size)
        assert trials > 50
