"""Synthetic trajectory and network builders shared by the tests."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import random
import re

from trajrec.geo import GeoPoint, destination_point, intermediate_point, path_length
from trajrec.llm.provider import Completion
from trajrec.traces import Activity, Trajectory


def wander(
    rng: random.Random,
    origin: GeoPoint,
    n: int,
    step: tuple[float, float] = (8.0, 30.0),
    turn: float = 25.0,
) -> list[GeoPoint]:
    """Random walk with bounded heading change, like a GPS log."""
    pts = [origin]
    heading = rng.uniform(0, 360)
    for _ in range(n - 1):
        heading = (heading + rng.uniform(-turn, turn)) % 360
        pts.append(destination_point(pts[-1], heading, rng.uniform(*step)))
    return [p.rounded(7) for p in pts]


def make_trajectory(
    seed: int,
    n: int = 400,
    activity: Activity = Activity.CYCLING,
    region: str = "europe",
    timed: bool = True,
    origin: GeoPoint | None = None,
) -> Trajectory:
    rng = random.Random(seed)
    origin = origin or GeoPoint(rng.uniform(-50, 60), rng.uniform(-120, 150))
    pts = wander(rng, origin, n)
    t0 = 1_717_200_000.0
    times = tuple(t0 + 5.0 * k for k in range(n)) if timed else ()
    return Trajectory(
        id=f"t{seed}",
        name=f"{activity.value} trace {seed}",
        upload_date=dt.date(2024, 6, 1),
        region=region,
        points=tuple(pts),
        times=times,
        activity=activity,
        total_length=path_length(pts),
    )


def grid_overpass(
    rows: int,
    cols: int,
    block_m: float = 100.0,
    origin: GeoPoint = GeoPoint(45.0, 7.0),
    way_base: int = 1000,
    node_base: int = 1,
    highway: str = "residential",
) -> tuple[dict, dict[tuple[int, int], GeoPoint]]:
    """Overpass ``out geom`` payload for a grid; one way per block edge.

    Returns ``(payload, node_locations)`` keyed by ``(row, col)``.
    """
    loc = {}
    for r in range(rows):
        row_origin = destination_point(origin, 0.0, r * block_m)
        for c in range(cols):
            loc[(r, c)] = destination_point(row_origin, 90.0, c * block_m).rounded(7)

    def nid(r, c):
        return node_base + r * cols + c

    elements = []
    wid = way_base
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 >= rows or c2 >= cols:
                    continue
                a, b = loc[(r, c)], loc[(r2, c2)]
                elements.append(
                    {
                        "type": "way",
                        "id": wid,
                        "nodes": [nid(r, c), nid(r2, c2)],
                        "tags": {"highway": highway, "name": f"Edge {r},{c}-{r2},{c2}"},
                        "geometry": [{"lat": a.lat, "lon": a.lon}, {"lat": b.lat, "lon": b.lon}],
                    }
                )
                wid += 1
    return {"elements": elements}, loc


def grid_edge_ids(rows: int, cols: int, way_base: int = 1000) -> dict[frozenset, int]:
    """Map ``{(r,c), (r2,c2)}`` -> way id, mirroring :func:`grid_overpass`."""
    ids = {}
    wid = way_base
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 >= rows or c2 >= cols:
                    continue
                ids[frozenset({(r, c), (r2, c2)})] = wid
                wid += 1
    return ids


def random_network_payload(seed: int, n_ways: int = 25, center: GeoPoint | None = None) -> dict:
    """Tangle of random ways sharing nodes; loosely city-like."""
    rng = random.Random(seed)
    center = center or GeoPoint(rng.uniform(-50, 60), rng.uniform(-120, 150))
    pool = [destination_point(center, rng.uniform(0, 360), rng.uniform(0, 800)).rounded(7) for _ in range(n_ways * 3)]
    node_ids = [10_000 + k for k in range(len(pool))]
    highways = ["residential", "footway", "service", "primary", "cycleway", "path"]
    elements = []
    for w in range(n_ways):
        k = rng.randint(2, 6)
        picks = rng.sample(range(len(pool)), k)
        elements.append(
            {
                "type": "way",
                "id": 500_000 + w,
                "nodes": [node_ids[i] for i in picks],
                "tags": {"highway": rng.choice(highways), **({"name": f"Street {w}"} if rng.random() < 0.6 else {})},
                "geometry": [{"lat": pool[i].lat, "lon": pool[i].lon} for i in picks],
            }
        )
    return {"elements": elements}


def payload_bytes(payload: dict) -> bytes:
    return json.dumps(payload).encode()


_PAIR = re.compile(r"\[(-?\d+\.\d+), (-?\d+\.\d+)\]")
_SNAP = re.compile(r"Snapped to: .*?\(id=(\d+)\)")


class EchoProvider:
    """Deterministic stand-in for a model that reads the prompt it is given.

    Stage 1: a two-step plan from the start road to the end road. Stage 2: the
    excerpt's vertices, some exact, some nudged a few meters and some thrown
    far off, so grounding has every case to handle.
    """

    def complete(self, prompt: str) -> Completion:
        rng = random.Random(hashlib.sha256(prompt.encode()).hexdigest())
        if "Generate coordinates for step_" in prompt:
            excerpt = prompt.split("**GEOMETRY (excerpt):**", 1)[1].split("Starting coordinate:", 1)[0]
            out = []
            for lat, lon in _PAIR.findall(excerpt):
                p = GeoPoint(float(lat), float(lon))
                roll = rng.random()
                if roll < 0.3:
                    p = destination_point(p, rng.uniform(0, 360), rng.uniform(1, 20))
                elif roll < 0.45:
                    p = destination_point(p, rng.uniform(0, 360), rng.uniform(60, 300))
                out.append(f"[{p.lat:.7f}, {p.lon:.7f}]")
            text = ", " + ", ".join(out) + "]" if out else "[]"
        else:
            ids = _SNAP.findall(prompt)
            first, last = ids[0], ids[-1]
            text = (
                "**REASONING:**\nFollow the start road, then the end road.\n\n"
                "**STEP-BY-STEP NAVIGATION:**\n"
                f"step_1: Head north on Start Road (id={first}) to the junction\n"
                f"step_2: Continue straight on End Road (id={last}) to the end point\n"
            )
        return Completion(text, len(prompt.split()), len(text.split()), 0.0)


def osm_like_payload(seed: int, size: int = 6, block_m: float = 120.0) -> dict:
    """Street grid shaped like a real extract.

    Junctions sit on a jittered grid; each way spans two to five blocks and
    carries several shape nodes per block, and dead-end service spurs and
    footpaths hang off the junctions. Points and connections per road land
    near those of published Overpass extracts (roughly 10-20 points and 2-3
    connections), unlike the junction-dense :func:`random_network_payload`.
    """
    rng = random.Random(seed)
    origin = GeoPoint(rng.uniform(-40, 55), rng.uniform(-120, 150))
    junction = {}
    for r in range(size):
        row0 = destination_point(origin, 0.0, r * block_m)
        for c in range(size):
            base = destination_point(row0, 90.0, c * block_m)
            junction[(r, c)] = destination_point(base, rng.uniform(0, 360), rng.uniform(0, 15)).rounded(7)
    jid = {rc: 1 + rc[0] * size + rc[1] for rc in junction}
    next_node = [100_000]
    next_way = [700_000]
    elements = []

    def emit(cells_pts, ids, tags):
        elements.append(
            {
                "type": "way",
                "id": next_way[0],
                "nodes": ids,
                "tags": tags,
                "geometry": [{"lat": p.lat, "lon": p.lon} for p in cells_pts],
            }
        )
        next_way[0] += 1

    def shaped(cells):
        pts, ids = [junction[cells[0]]], [jid[cells[0]]]
        for a, b in zip(cells, cells[1:]):
            pa, pb = junction[a], junction[b]
            k = rng.randint(3, 10)
            for i in range(1, k + 1):
                mid = intermediate_point(pa, pb, i / (k + 1))
                pts.append(destination_point(mid, rng.uniform(0, 360), rng.uniform(0, 4)).rounded(7))
                ids.append(next_node[0])
                next_node[0] += 1
            pts.append(pb)
            ids.append(jid[b])
        return pts, ids

    kinds = ["residential", "residential", "tertiary", "secondary", "unclassified", "living_street"]
    for axis in range(2):
        for line in range(size):
            cells = [(line, i) if axis == 0 else (i, line) for i in range(size)]
            start = 0
            while start < size - 1:
                span = min(rng.randint(2, 5), size - 1 - start)
                pts, ids = shaped(cells[start : start + span + 1])
                tags = {"highway": rng.choice(kinds), "name": f"{'Avenue' if axis else 'Street'} {line}"}
                if rng.random() < 0.5:
                    tags["surface"] = rng.choice(["asphalt", "paving_stones", "concrete"])
                if rng.random() < 0.3:
                    tags["maxspeed"] = rng.choice(["30", "50"])
                emit(pts, ids, tags)
                start += span
    for rc in rng.sample(sorted(junction), 3 * size):
        p = junction[rc]
        heading = rng.uniform(0, 360)
        pts, ids = [p], [jid[rc]]
        for i in range(rng.randint(3, 12)):
            pts.append(destination_point(p, heading + rng.uniform(-10, 10), 12.0 * (i + 1)).rounded(7))
            ids.append(next_node[0])
            next_node[0] += 1
        emit(pts, ids, {"highway": rng.choice(["service", "footway"])})
    return {"elements": elements}
