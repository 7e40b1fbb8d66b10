"""Road-network slices from Overpass: query, fetch, graph, snap, render."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import httpx

from .errors import DegenerateBearing, FetchError, NoRoads, ParseError
from .geo import (
    BBox,
    GeoPoint,
    cardinal_8,
    haversine_distance,
    initial_bearing,
    path_length,
    project_to_segment,
)

log = logging.getLogger(__name__)

OVERPASS_ENDPOINT = "https://overpass-api.de/api/interpreter"
GAP_BUFFERS_M = {"small": 150.0, "large": 500.0}
SNAP_CONFIDENCE_SCALE_M = 30.0

WALKING_HIGHWAYS = (
    "footway", "pedestrian", "path", "steps", "living_street", "track", "bridleway",
    "road", "residential", "service", "unclassified", "tertiary", "tertiary_link",
    "secondary", "secondary_link", "primary", "primary_link", "cycleway", "trunk", "trunk_link",
)
CYCLING_HIGHWAYS = (
    "cycleway", "path", "living_street", "track", "residential", "service", "unclassified",
    "tertiary", "tertiary_link", "secondary", "secondary_link", "primary", "primary_link",
)
DRIVING_HIGHWAYS = (
    "motorway", "motorway_link", "trunk", "trunk_link", "primary", "primary_link",
    "secondary", "secondary_link", "tertiary", "tertiary_link", "unclassified", "residential", "service",
)
HIGHWAY_FILTERS: dict[str, tuple[str, ...]] = {
    "walking": WALKING_HIGHWAYS,
    "hiking": WALKING_HIGHWAYS,
    "cycling": CYCLING_HIGHWAYS,
    "driving": DRIVING_HIGHWAYS,
    "bus": DRIVING_HIGHWAYS,
}
TRAIN_SELECTORS = (
    '["public_transport"="station"]',
    '["railway"="station"]',
    '["railway"="subway_entrance"]',
    '["public_transport"~"platform|stop_position"]',
)
ONEWAY_ACTIVITIES = frozenset({"driving", "bus"})


class Representation(str, enum.Enum):
    RAW_JSON = "raw_json"
    ADJACENCY_LIST = "adjacency_list"
    TOPOLOGY_ONLY = "topology_only"
    TOPOLOGY_DIRECTION = "topology_direction"


@dataclass(frozen=True)
class Road:
    id: int
    name: str | None
    highway_type: str
    oneway: bool
    geometry: tuple[GeoPoint, ...]
    node_ids: tuple[int, ...]
    tags: dict[str, str] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if len(self.geometry) != len(self.node_ids) or not self.geometry:
            raise ValueError(f"road {self.id}: geometry/node_ids mismatch")

    @property
    def label(self) -> str:
        return self.name or f"Road {self.id}"

    @property
    def length(self) -> float:
        return path_length(self.geometry)


@dataclass(frozen=True)
class Intersection:
    node_id: int
    location: GeoPoint
    incident_roads: frozenset[int]


@dataclass(frozen=True)
class SnapResult:
    road_id: int
    snapped_point: GeoPoint
    distance: float
    confidence: float
    entry_bearing: float | None
    segment_index: int = 0


@dataclass(eq=False)
class RoadNetwork:
    roads: dict[int, Road]
    intersections: dict[int, Intersection]
    adjacency: dict[int, list[tuple[int, int]]]
    raw_elements: list[dict[str, Any]] = field(default_factory=list, repr=False)

    def __bool__(self) -> bool:
        return bool(self.roads)

    @cached_property
    def node_locations(self) -> dict[int, GeoPoint]:
        locs: dict[int, GeoPoint] = {}
        for rid in sorted(self.roads):
            road = self.roads[rid]
            for nid, p in zip(road.node_ids, road.geometry):
                locs.setdefault(nid, p)
        return locs

    def connected(self, a: int, b: int) -> bool:
        return any(nb == b for nb, _ in self.adjacency.get(a, ()))

    def intersections_on(self, road_id: int) -> list[int]:
        road = self.roads[road_id]
        return [n for n in dict.fromkeys(road.node_ids) if n in self.intersections]


# --- query and fetch ---------------------------------------------------------


def overpass_query(activity: str, bbox: BBox, timeout: int = 30) -> str:
    """Overpass QL for the activity's road filter inside ``bbox``."""
    activity = str(getattr(activity, "value", activity)).lower()
    box = bbox.overpass()
    if activity in HIGHWAY_FILTERS:
        alternation = "|".join(HIGHWAY_FILTERS[activity])
        body = f'  way[highway~"{alternation}"]({box});'
    elif activity == "train":
        body = "\n".join(f"  {kind}{sel}({box});" for sel in TRAIN_SELECTORS for kind in ("node", "way"))
    elif activity in ("flying", "boat"):
        body = f"  way({box});"
    else:
        raise ValueError(f"no road filter for activity {activity!r}")
    return f"[out:json][timeout:{timeout}];\n(\n{body}\n);\nout geom;\n"


def query_key(query: str) -> str:
    return hashlib.sha256(query.encode("utf-8")).hexdigest()


_endpoint_locks: dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()


def _endpoint_lock(endpoint: str) -> threading.Lock:
    with _locks_guard:
        return _endpoint_locks.setdefault(endpoint, threading.Lock())


def _valid_payload(data: bytes) -> bool:
    try:
        doc = json.loads(data)
    except (ValueError, UnicodeDecodeError):
        return False
    return isinstance(doc, dict) and isinstance(doc.get("elements"), list)


def cache_path(cache_dir: str | os.PathLike, query: str) -> Path:
    return Path(cache_dir) / f"{query_key(query)}.json"


def read_cached(cache_dir: str | os.PathLike, query: str) -> bytes | None:
    path = cache_path(cache_dir, query)
    if path.exists():
        data = path.read_bytes()
        if _valid_payload(data):
            return data
        log.warning("corrupt cache entry %s; ignoring", path.name)
    return None


def fetch_network(
    query: str,
    endpoint: str = OVERPASS_ENDPOINT,
    cache_dir: str | os.PathLike = ".cache/overpass",
    *,
    client: httpx.Client | None = None,
    max_retries: int = 5,
    backoff_base: float = 2.0,
    sleep: Callable[[float], None] = time.sleep,
    timeout: float = 60.0,
) -> bytes:
    """Raw Overpass response for ``query``, served from disk when cached.

    Requests to one endpoint are serialised. 429, 5xx and transport errors
    are retried with exponential backoff (``backoff_base * 2**attempt``).
    """
    cached = read_cached(cache_dir, query)
    if cached is not None:
        return cached
    own_client = client is None
    client = client or httpx.Client(timeout=timeout)
    try:
        with _endpoint_lock(endpoint):
            # another thread may have filled the cache while we waited
            cached = read_cached(cache_dir, query)
            if cached is not None:
                return cached
            data = _fetch_with_retries(client, endpoint, query, max_retries, backoff_base, sleep)
    finally:
        if own_client:
            client.close()
    path = cache_path(cache_dir, query)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return data


def _fetch_with_retries(client, endpoint, query, max_retries, backoff_base, sleep) -> bytes:
    last = "no attempt made"
    for attempt in range(max_retries + 1):
        if attempt:
            sleep(backoff_base * 2 ** (attempt - 1))
        try:
            resp = client.post(endpoint, content=query.encode("utf-8"))
        except httpx.TransportError as exc:
            last = f"transport error: {exc}"
            log.warning("overpass attempt %d failed: %s", attempt + 1, last)
            continue
        if resp.status_code == 200:
            if _valid_payload(resp.content):
                return resp.content
            last = "HTTP 200 with malformed body"
        elif resp.status_code == 429 or resp.status_code >= 500:
            last = f"HTTP {resp.status_code}"
        else:
            raise FetchError(f"overpass returned HTTP {resp.status_code}")
        log.warning("overpass attempt %d failed: %s", attempt + 1, last)
    raise FetchError(f"overpass fetch failed after {max_retries + 1} attempts: {last}")


# --- graph -------------------------------------------------------------------

_RAW_TAGS = ("access", "surface", "lanes", "maxspeed", "bridge", "tunnel")


def _road_type(tags: dict[str, str]) -> str:
    for key in ("highway", "railway", "public_transport"):
        if key in tags:
            return tags[key]
    return "unknown"


def _normalize(road: Road) -> dict[str, Any]:
    tags = road.tags
    return {
        "id": road.id,
        "name": road.label,
        "type": road.highway_type,
        "geometry": [[p.lat, p.lon] for p in road.geometry],
        "oneway": "yes" if road.oneway else "no",
        **{k: tags.get(k) for k in _RAW_TAGS},
        "nodes_osmid": list(road.node_ids),
    }


def build_graph(raw: bytes | str | dict) -> RoadNetwork:
    """Materialise ways from an Overpass ``out geom`` payload.

    Intersections are node ids shared by two or more roads. Ways without
    usable geometry are skipped; repeated way ids keep the first occurrence.
    Standalone nodes (train stations, platforms) become one-point roads.
    """
    if isinstance(raw, (bytes, str)):
        try:
            doc = json.loads(raw)
        except (ValueError, UnicodeDecodeError) as exc:
            raise ParseError(f"overpass payload is not JSON: {exc}") from exc
    else:
        doc = raw
    if not isinstance(doc, dict) or not isinstance(doc.get("elements"), list):
        raise ParseError("overpass payload lacks an 'elements' list")

    roads: dict[int, Road] = {}
    for el in doc["elements"]:
        if not isinstance(el, dict) or "id" not in el:
            raise ParseError(f"malformed element: {el!r}")
        kind = el.get("type", "way")
        rid = int(el["id"])
        if rid in roads:
            continue
        tags = {str(k): str(v) for k, v in (el.get("tags") or {}).items()}
        if kind == "way":
            geom = el.get("geometry") or []
            nodes = el.get("nodes") or []
            if len(geom) != len(nodes):
                continue
            pts, nids = [], []
            for g, n in zip(geom, nodes):
                if not g or g.get("lat") is None:
                    continue
                pts.append(GeoPoint(float(g["lat"]), float(g["lon"])))
                nids.append(int(n))
            if not pts:
                continue
        elif kind == "node" and "lat" in el:
            pts, nids = [GeoPoint(float(el["lat"]), float(el["lon"]))], [rid]
        else:
            continue
        oneway_tag = tags.get("oneway", "no").lower()
        if oneway_tag == "-1":
            pts.reverse()
            nids.reverse()
        roads[rid] = Road(
            id=rid,
            name=tags.get("name"),
            highway_type=_road_type(tags),
            oneway=oneway_tag in ("yes", "true", "1", "-1") or tags.get("junction") == "roundabout",
            geometry=tuple(pts),
            node_ids=tuple(nids),
            tags=tags,
        )
    return _assemble(roads)


def _assemble(roads: dict[int, Road]) -> RoadNetwork:
    roads = {rid: roads[rid] for rid in sorted(roads)}
    incident: dict[int, list[int]] = {}
    location: dict[int, GeoPoint] = {}
    for rid, road in roads.items():
        for nid, p in zip(road.node_ids, road.geometry):
            owners = incident.setdefault(nid, [])
            if rid not in owners:
                owners.append(rid)
            location.setdefault(nid, p)
    intersections = {
        nid: Intersection(nid, location[nid], frozenset(owners))
        for nid, owners in sorted(incident.items())
        if len(owners) >= 2
    }
    adjacency: dict[int, list[tuple[int, int]]] = {rid: [] for rid in roads}
    for nid, inter in intersections.items():
        for a in inter.incident_roads:
            for b in inter.incident_roads:
                if a != b:
                    adjacency[a].append((b, nid))
    for rid, conns in adjacency.items():
        # string order of neighbour ids, as the rendered listings show
        conns.sort(key=lambda c: (str(c[0]), str(c[1])))
    raw = [_normalize(r) for r in roads.values()]
    return RoadNetwork(roads, intersections, adjacency, raw)


def subnetwork(net: RoadNetwork, road_ids) -> RoadNetwork:
    return _assemble({rid: net.roads[rid] for rid in road_ids if rid in net.roads})


# --- snapping and direction --------------------------------------------------


def snap_confidence(distance: float) -> float:
    return max(0.01, round(math.exp(-distance / SNAP_CONFIDENCE_SCALE_M), 2))


def _segment_bearing(road: Road, k: int) -> float | None:
    pts = road.geometry
    order = [k] + [j for j in range(len(pts) - 1) if j != k]
    for j in order:
        if j + 1 < len(pts) and pts[j] != pts[j + 1]:
            return initial_bearing(pts[j], pts[j + 1])
    return None


def snap_point(net: RoadNetwork, p: GeoPoint, tie_tolerance: float = 1e-9) -> SnapResult:
    """Nearest road to ``p``; ties within ``tie_tolerance`` m go to the lower road id."""
    if not net.roads:
        raise NoRoads("cannot snap to an empty network")
    best: tuple[float, int, int, GeoPoint] | None = None
    for rid in sorted(net.roads):
        pts = net.roads[rid].geometry
        if len(pts) == 1:
            candidates = [(haversine_distance(p, pts[0]), 0, pts[0])]
        else:
            candidates = []
            for k in range(len(pts) - 1):
                d, foot, _ = project_to_segment(p, pts[k], pts[k + 1])
                candidates.append((d, k, foot))
        for d, k, foot in candidates:
            if best is None or d < best[0] - tie_tolerance:
                best = (d, rid, k, foot)
    d, rid, k, foot = best
    return SnapResult(
        road_id=rid,
        snapped_point=foot,
        distance=d,
        confidence=snap_confidence(d),
        entry_bearing=_segment_bearing(net.roads[rid], k),
        segment_index=k,
    )


def road_direction(road: Road) -> str:
    """Cardinal direction from the first to the last geometry point."""
    if len(road.geometry) < 2:
        raise DegenerateBearing(f"road {road.id} has a single point")
    return cardinal_8(initial_bearing(road.geometry[0], road.geometry[-1]))


def _direction_or_none(road: Road) -> str | None:
    try:
        return road_direction(road)
    except DegenerateBearing:
        return None


# --- rendering ---------------------------------------------------------------


def _c6(p: GeoPoint) -> list[float]:
    return [round(p.lat, 6), round(p.lon, 6)]


def _render_raw(net: RoadNetwork) -> str:
    body = json.dumps({str(el["id"]): el for el in net.raw_elements}, indent=2, ensure_ascii=False)
    return "--- RAW ROAD NETWORK DATA ---\nRaw Road Network Data (Full OSM JSON):\n\n" + body + "\n"


def _road_header(road: Road) -> str:
    oneway = ", oneway" if road.oneway else ""
    return f"Road: {road.label} (ID: {road.id}, Type: {road.highway_type}{oneway})"


def _render_adjacency(net: RoadNetwork) -> str:
    lines = ["--- ROAD NETWORK (ADJACENCY LIST) ---", "Road Network (Adjacency List with Full Geometry):", ""]
    for rid, road in net.roads.items():
        lines.append(_road_header(road))
        lines.append("  Connects to:")
        for nb, nid in net.adjacency[rid]:
            loc = net.intersections[nid].location
            lines.append(f"    -> Road {nb} at intersection {nid} ({loc.rounded(6).fmt()})")
        geom = " -> ".join(p.fmt() for p in road.geometry)
        lines.append(f"  Full Geometry ({len(road.geometry)} points): {geom}")
        lines.append("")
    return "\n".join(lines)


def _render_topology(net: RoadNetwork) -> str:
    lines = ["--- ROAD NETWORK (TOPOLOGY ONLY) ---", "Road Network (Topology Only - No Geometry):", ""]
    for rid, road in net.roads.items():
        lines.append(_road_header(road))
        lines.append("  Connects to:")
        for nb, nid in net.adjacency[rid]:
            lines.append(f"    -> Road {nb} at intersection {nid}")
        lines.append("")
    return "\n".join(lines)


def _render_topology_direction(net: RoadNetwork, destination: GeoPoint) -> str:
    lines = ['--- ROAD NETWORK (TOPOLOGY + DIRECTION) ---', '{"roads": {']
    entries = []
    for rid, road in net.roads.items():
        conns = []
        for nb, nid in net.adjacency[rid]:
            loc = net.intersections[nid].location
            bearing = initial_bearing(loc, destination) if loc != destination else 0.0
            conns.append(
                {
                    "road_id": str(nb),
                    "intersection_id": str(nid),
                    "coords": _c6(loc),
                    "bearing_to_dest": round(bearing, 1),
                }
            )
        entry: dict[str, Any] = {"name": road.name} if road.name else {}
        entry["type"] = road.highway_type
        if road.oneway:
            entry["oneway"] = True
        entry["connects_to"] = conns
        direction = _direction_or_none(road)
        if direction:
            entry["direction"] = direction
        entries.append(f'  "{rid}": ' + json.dumps(entry, separators=(",", ":"), ensure_ascii=False))
    lines.append(",\n".join(entries))
    lines.append("}}")
    return "\n".join(lines) + "\n"


def render_context(net: RoadNetwork, representation: Representation, destination: GeoPoint) -> str:
    representation = Representation(representation)
    if representation is Representation.RAW_JSON:
        return _render_raw(net)
    if representation is Representation.ADJACENCY_LIST:
        return _render_adjacency(net)
    if representation is Representation.TOPOLOGY_ONLY:
        return _render_topology(net)
    return _render_topology_direction(net, destination)


def token_count(text: str) -> int:
    """Whitespace-delimited token proxy."""
    return len(text.split())
