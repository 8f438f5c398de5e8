"""Geodesic primitives: WGS84-style points, great-circle distance, grid cells.

All distances use a spherical earth with mean radius 6,371,000 m; the
radii this package cares about (100 m / 1 km) are insensitive to the
ellipsoid choice. Everything here is pure and immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigurationError

EARTH_RADIUS_M = 6_371_000.0

#: Meters per degree of latitude on the reference sphere.
METERS_PER_DEGREE = EARTH_RADIUS_M * math.pi / 180.0


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude pair in decimal degrees.

    Longitude is normalized into [-180, 180) at construction so that
    distances are well defined across the antimeridian. At the poles the
    longitude is collapsed to 0 so that equality matches the geometry.
    """

    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        if not -90.0 <= lat <= 90.0 or math.isnan(lat):
            raise ConfigurationError(f"latitude {self.lat!r} outside [-90, 90]")
        lon = float(self.lon)
        if math.isnan(lon) or math.isinf(lon):
            raise ConfigurationError(f"longitude {self.lon!r} is not finite")
        lon = math.fmod(lon + 180.0, 360.0)
        if lon < 0.0:
            lon += 360.0
        lon -= 180.0
        if abs(lat) == 90.0:
            lon = 0.0
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class GridCell:
    """A cell of the global lat/lon grid with the given cell size in degrees."""

    row: int
    col: int
    cell_size: float


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points in meters.

    Symmetric, non-negative, and exactly 0 for equal (normalized) points.
    """
    if a == b:
        return 0.0
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    s = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(s)))


def to_cell(p: GeoPoint, cell_size: float) -> GridCell:
    """Map a point to its grid cell.

    Cell boundaries are aligned to multiples of ``cell_size`` from
    (-90, -180); a point exactly on a boundary belongs to the cell with
    the larger index (floor convention).
    """
    if not cell_size > 0.0:
        raise ConfigurationError(f"cell_size must be positive, got {cell_size!r}")
    row = math.floor((p.lat + 90.0) / cell_size)
    col = math.floor((p.lon + 180.0) / cell_size)
    return GridCell(row=row, col=col, cell_size=float(cell_size))
