"""Spherical geodesy primitives on WGS84 lat/lon degrees.

Distances use the haversine formula on a sphere of radius ``EARTH_RADIUS_M``.
Point-to-segment distances use a local equirectangular projection centred
on the segment midpoint, which is accurate at the few-km scale of masked
segments.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBearing, UnsupportedRegion

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEGREE = math.pi * EARTH_RADIUS_M / 180.0

CARDINALS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
CARDINAL_BEARINGS = {name: 45.0 * i for i, name in enumerate(CARDINALS)}
CARDINAL_WORDS = {
    "N": "north",
    "NE": "northeast",
    "E": "east",
    "SE": "southeast",
    "S": "south",
    "SW": "southwest",
    "W": "west",
    "NW": "northwest",
}


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"coordinate out of range: ({self.lat}, {self.lon})")

    def fmt(self, decimals: int = 7) -> str:
        return f"[{self.lat:.{decimals}f}, {self.lon:.{decimals}f}]"

    def rounded(self, decimals: int = 7) -> GeoPoint:
        return GeoPoint(round(self.lat, decimals), round(self.lon, decimals))

    def as_list(self) -> list[float]:
        return [self.lat, self.lon]


Polyline = Sequence[GeoPoint]


@dataclass(frozen=True, slots=True)
class BBox:
    south: float
    west: float
    north: float
    east: float

    def __post_init__(self) -> None:
        if self.south > self.north or self.west > self.east:
            raise ValueError(f"inverted bbox: {self}")

    def overpass(self, decimals: int = 7) -> str:
        """``south,west,north,east`` as Overpass QL expects."""
        return ",".join(f"{v:.{decimals}f}" for v in (self.south, self.west, self.north, self.east))

    def contains(self, bbox: BBox) -> bool:
        return (
            self.south <= bbox.south
            and self.west <= bbox.west
            and self.north >= bbox.north
            and self.east >= bbox.east
        )


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def path_length(points: Iterable[GeoPoint]) -> float:
    """Sum of consecutive haversine distances (0 for fewer than two points)."""
    pts = list(points)
    return math.fsum(haversine_distance(p, q) for p, q in zip(pts, pts[1:]))


def initial_bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Forward azimuth from ``a`` to ``b`` in [0, 360), clockwise from north."""
    if a == b:
        raise DegenerateBearing(f"bearing undefined for coincident points {a}")
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dlam = math.radians(b.lon - a.lon)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    bearing = math.degrees(math.atan2(y, x)) % 360.0
    # -tiny % 360 rounds to 360.0
    return 0.0 if bearing >= 360.0 else bearing


def destination_point(origin: GeoPoint, bearing: float, distance: float) -> GeoPoint:
    """Point reached travelling ``distance`` meters from ``origin`` on ``bearing``."""
    delta = distance / EARTH_RADIUS_M
    theta = math.radians(bearing)
    phi1 = math.radians(origin.lat)
    lam1 = math.radians(origin.lon)
    phi2 = math.asin(
        math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    )
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * math.sin(phi2),
    )
    lon = (math.degrees(lam2) + 540.0) % 360.0 - 180.0
    return GeoPoint(math.degrees(phi2), lon)


def intermediate_point(a: GeoPoint, b: GeoPoint, fraction: float) -> GeoPoint:
    """Point ``fraction`` of the way along the great circle from ``a`` to ``b``."""
    delta = haversine_distance(a, b) / EARTH_RADIUS_M
    if delta == 0.0:
        return a
    phi1, lam1 = math.radians(a.lat), math.radians(a.lon)
    phi2, lam2 = math.radians(b.lat), math.radians(b.lon)
    wa = math.sin((1 - fraction) * delta) / math.sin(delta)
    wb = math.sin(fraction * delta) / math.sin(delta)
    x = wa * math.cos(phi1) * math.cos(lam1) + wb * math.cos(phi2) * math.cos(lam2)
    y = wa * math.cos(phi1) * math.sin(lam1) + wb * math.cos(phi2) * math.sin(lam2)
    z = wa * math.sin(phi1) + wb * math.sin(phi2)
    lat = math.degrees(math.atan2(z, math.hypot(x, y)))
    return GeoPoint(lat, math.degrees(math.atan2(y, x)))


def _project(p: GeoPoint, lat0: float, lon0: float, coslat0: float) -> tuple[float, float]:
    x = math.radians(p.lon - lon0) * coslat0 * EARTH_RADIUS_M
    y = math.radians(p.lat - lat0) * EARTH_RADIUS_M
    return x, y


def project_to_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> tuple[float, GeoPoint, float]:
    """Closest point of segment ``a``-``b`` to ``p``.

    Returns ``(distance_m, foot, t)`` where ``t`` in [0, 1] is the position of
    ``foot`` along the segment. The distance is never larger than the
    haversine distance to either endpoint.
    """
    if a == b:
        return haversine_distance(p, a), a, 0.0
    lat0 = (a.lat + b.lat) / 2
    lon0 = (a.lon + b.lon) / 2
    coslat0 = math.cos(math.radians(lat0))
    ax, ay = _project(a, lat0, lon0, coslat0)
    bx, by = _project(b, lat0, lon0, coslat0)
    px, py = _project(p, lat0, lon0, coslat0)
    dx, dy = bx - ax, by - ay
    t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    if t <= 0.0:
        return haversine_distance(p, a), a, 0.0
    if t >= 1.0:
        return haversine_distance(p, b), b, 1.0
    foot = GeoPoint(a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon))
    d_foot = haversine_distance(p, foot)
    d_a = haversine_distance(p, a)
    d_b = haversine_distance(p, b)
    if d_a < d_foot or d_b < d_foot:
        return (d_a, a, 0.0) if d_a <= d_b else (d_b, b, 1.0)
    return d_foot, foot, t


def point_to_segment_distance(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> float:
    """Distance in meters from ``p`` to the segment ``a``-``b``."""
    return project_to_segment(p, a, b)[0]


def cardinal_8(bearing: float) -> str:
    """Nearest of the eight compass points.

    Each sector is the half-open interval ``(c - 22.5, c + 22.5]`` around its
    canonical bearing ``c``, so exact boundaries fall to the counter-clockwise
    neighbour (22.5 is N, 67.5 is NE).
    """
    if not 0.0 <= bearing < 360.0:
        raise ValueError(f"bearing must be in [0, 360): {bearing}")
    return CARDINALS[math.ceil((bearing - 22.5) / 45.0) % 8]


def circular_angle_error(expected: float, actual: float) -> float:
    diff = abs(expected - actual)
    return min(diff, 360.0 - diff)


def expanded_bbox(a: GeoPoint, b: GeoPoint, buffer: float) -> BBox:
    """Box around ``a`` and ``b`` pushed outward by ``buffer`` meters per side."""
    if buffer < 0:
        raise ValueError("buffer must be non-negative")
    south, north = min(a.lat, b.lat), max(a.lat, b.lat)
    west, east = min(a.lon, b.lon), max(a.lon, b.lon)
    if east - west > 180.0:
        raise UnsupportedRegion("points straddle the antimeridian")
    mean_lat = (south + north) / 2
    dlat = buffer / METERS_PER_DEGREE
    coslat = math.cos(math.radians(mean_lat))
    if coslat < 1e-9:
        raise UnsupportedRegion("box touches a pole")
    dlon = dlat / coslat
    box = BBox(max(-90.0, south - dlat), west - dlon, min(90.0, north + dlat), east + dlon)
    if box.west < -180.0 or box.east > 180.0:
        raise UnsupportedRegion(f"buffered box crosses the antimeridian: {box}")
    return box


# --- vectorised forms used by the metrics -------------------------------------


def as_array(points: Iterable[GeoPoint]) -> np.ndarray:
    """``(n, 2)`` float array of ``[lat, lon]`` rows."""
    return np.array([[p.lat, p.lon] for p in points], dtype=float).reshape(-1, 2)


def haversine_matrix(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Pairwise haversine distances between rows of ``p`` (n,2) and ``q`` (m,2)."""
    phi1 = np.radians(p[:, 0])[:, None]
    phi2 = np.radians(q[:, 0])[None, :]
    dphi = phi2 - phi1
    dlam = np.radians(q[None, :, 1] - p[:, None, 1])
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def _haversine_pairs(lat1, lon1, lat2, lon2):
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    h = (
        np.sin((phi2 - phi1) / 2) ** 2
        + np.cos(phi1) * np.cos(phi2) * np.sin(np.radians(lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def segment_distance_matrix(p: np.ndarray, line: np.ndarray) -> np.ndarray:
    """Distances from each row of ``p`` (n,2) to each segment of ``line`` (m,2).

    Returns an ``(n, m-1)`` array; a one-point ``line`` yields ``(n, 1)`` point
    distances. Mirrors :func:`project_to_segment` element-wise.
    """
    if len(line) == 1:
        return haversine_matrix(p, line)
    a = line[:-1]
    b = line[1:]
    lat0 = (a[:, 0] + b[:, 0]) / 2
    lon0 = (a[:, 1] + b[:, 1]) / 2
    coslat0 = np.cos(np.radians(lat0))

    def proj(lat, lon):
        return (
            np.radians(lon - lon0) * coslat0 * EARTH_RADIUS_M,
            np.radians(lat - lat0) * EARTH_RADIUS_M,
        )

    ax, ay = proj(a[:, 0], a[:, 1])
    bx, by = proj(b[:, 0], b[:, 1])
    plat = p[:, 0][:, None]
    plon = p[:, 1][:, None]
    px, py = proj(plat, plon)
    dx, dy = bx - ax, by - ay
    norm = dx * dx + dy * dy
    degenerate = norm == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((px - ax) * dx + (py - ay) * dy) / np.where(degenerate, 1.0, norm)
    t = np.where(degenerate, 0.0, t)
    d_a = _haversine_pairs(plat, plon, a[:, 0], a[:, 1])
    d_b = _haversine_pairs(plat, plon, b[:, 0], b[:, 1])
    tc = np.clip(t, 0.0, 1.0)
    flat = a[:, 0] + tc * (b[:, 0] - a[:, 0])
    flon = a[:, 1] + tc * (b[:, 1] - a[:, 1])
    d_foot = _haversine_pairs(plat, plon, flat, flon)
    interior = np.minimum(d_foot, np.minimum(d_a, d_b))
    return np.where(t <= 0.0, d_a, np.where(t >= 1.0, d_b, interior))
