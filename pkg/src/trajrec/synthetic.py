"""Offline stand-ins for live data: a grid city and traces that drive its streets.

Used by the tests and demos to exercise the full harness without network
access. :func:`clip_payload` mimics what an Overpass bbox query returns (every
way with at least one node inside the box, with full geometry), so a warmed
cache behaves like a fetched one.
"""

from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import dataclass

from .geo import BBox, GeoPoint, destination_point, haversine_distance, intermediate_point
from .roadnet import cache_path
from .traces import RawTrace


@dataclass(frozen=True)
class GridCity:
    rows: int
    cols: int
    block_m: float
    origin: GeoPoint
    payload: dict
    nodes: dict[tuple[int, int], GeoPoint]

    def node_id(self, rc: tuple[int, int]) -> int:
        return 1 + rc[0] * self.cols + rc[1]


def grid_city(
    rows: int = 30,
    cols: int = 30,
    block_m: float = 100.0,
    origin: GeoPoint = GeoPoint(48.85, 2.30),
    highway: str = "residential",
) -> GridCity:
    """Overpass ``out geom`` payload with one named way per grid row and column."""
    nodes = {}
    for r in range(rows):
        row0 = destination_point(origin, 0.0, r * block_m)
        for c in range(cols):
            nodes[(r, c)] = destination_point(row0, 90.0, c * block_m).rounded(7)

    def way(wid, name, cells):
        return {
            "type": "way",
            "id": wid,
            "nodes": [1 + r * cols + c for r, c in cells],
            "tags": {"highway": highway, "name": name},
            "geometry": [{"lat": nodes[rc].lat, "lon": nodes[rc].lon} for rc in cells],
        }

    elements = [way(100_000 + r, f"Row {r} Street", [(r, c) for c in range(cols)]) for r in range(rows)]
    elements += [way(200_000 + c, f"Column {c} Avenue", [(r, c) for r in range(rows)]) for c in range(cols)]
    return GridCity(rows, cols, block_m, origin, {"elements": elements}, nodes)


def random_route(city: GridCity, rng: random.Random, n_edges: int) -> list[tuple[int, int]]:
    """Walk of ``n_edges`` grid edges that never immediately doubles back."""
    cur = (rng.randrange(city.rows), rng.randrange(city.cols))
    path, prev = [cur], None
    while len(path) <= n_edges:
        r, c = cur
        options = [
            (r + dr, c + dc)
            for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0))
            if 0 <= r + dr < city.rows and 0 <= c + dc < city.cols and (r + dr, c + dc) != prev
        ]
        # prefer going straight so routes cover distance
        if prev is not None:
            ahead = (2 * r - prev[0], 2 * c - prev[1])
            if ahead in options and rng.random() < 0.6:
                options = [ahead]
        prev, cur = cur, rng.choice(options)
        path.append(cur)
    return path


def route_trace(
    city: GridCity,
    route: list[tuple[int, int]],
    rng: random.Random,
    *,
    trace_id: str,
    spacing_m: float = 12.0,
    noise_m: float = 3.0,
    speed_mps: float = 4.0,
    name: str = "",
    upload_date: dt.date = dt.date(2024, 6, 1),
) -> RawTrace:
    """Points every ``spacing_m`` along the route with Gaussian noise, timestamped at ``speed_mps``."""
    corners = [city.nodes[rc] for rc in route]
    clean: list[GeoPoint] = [corners[0]]
    carry = 0.0
    for a, b in zip(corners, corners[1:]):
        d = haversine_distance(a, b)
        s = spacing_m - carry
        while s < d:
            clean.append(intermediate_point(a, b, s / d))
            s += spacing_m
        carry = d - (s - spacing_m)
    if clean[-1] != corners[-1]:
        clean.append(corners[-1])
    pts, times, t = [], [], 1_717_200_000.0
    for k, p in enumerate(clean):
        if k:
            t += haversine_distance(clean[k - 1], p) / speed_mps
        jitter = destination_point(p, rng.uniform(0, 360), abs(rng.gauss(0, noise_m)))
        pts.append(jitter.rounded(7))
        times.append(round(t, 3))
    return RawTrace(
        id=trace_id,
        name=name or f"Cycling loop {trace_id}",
        upload_date=upload_date,
        points=tuple(pts),
        times=tuple(times),
    )


def clip_payload(payload: dict, box: BBox) -> dict:
    """Ways with at least one geometry point inside ``box``, like an Overpass bbox query."""

    def inside(g):
        return box.south <= g["lat"] <= box.north and box.west <= g["lon"] <= box.east

    return {"elements": [el for el in payload["elements"] if any(inside(g) for g in el.get("geometry", ()))]}


def warm_cache(cache_dir, query: str, payload: dict) -> None:
    """Store ``payload`` as the cached response to ``query``."""
    path = cache_path(cache_dir, query)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
