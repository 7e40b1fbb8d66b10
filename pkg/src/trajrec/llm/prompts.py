"""Prompt construction for path selection, coordinate generation and preference routing."""

from __future__ import annotations

import json
import statistics
from collections.abc import Sequence
from dataclasses import dataclass

from ..errors import DegenerateBearing
from ..geo import (
    CARDINAL_WORDS,
    GeoPoint,
    cardinal_8,
    haversine_distance,
    initial_bearing,
    path_length,
    point_to_segment_distance,
)
from ..records import NavStep
from ..roadnet import Intersection, Road, RoadNetwork, SnapResult, snap_point
from ..traces import MaskedTask

SPEED_WINDOW = 10
HEADING_WINDOW = 2
STEP_CAPS = {"small": 3, "large": 7}


@dataclass(frozen=True)
class ContextSummary:
    side: str
    avg_speed: float | None
    heading: str | None
    narrative: str
    road_names: tuple[str, ...] = ()


def _named_roads(net: RoadNetwork | None, points: Sequence[GeoPoint]) -> list[str]:
    if not net or not net.roads:
        return []
    names = []
    for p in points:
        snap = snap_point(net, p)
        name = net.roads[snap.road_id].name
        if name and snap.distance <= 30 and name not in names:
            names.append(name)
    return names


def _speed_label(speeds: list[float]) -> str:
    if len(speeds) < 2:
        return "steady"
    mean = statistics.fmean(speeds)
    spread = statistics.pstdev(speeds) / mean if mean > 0 else 0.0
    return "steady" if spread < 0.25 else "variable"


def build_context_summary(
    points: Sequence[GeoPoint],
    times: Sequence[float | None],
    side: str,
    *,
    net: RoadNetwork | None = None,
    activity: str = "",
    speed_window: int = SPEED_WINDOW,
    heading_window: int = HEADING_WINDOW,
) -> ContextSummary:
    """Speed and heading near the gap for the ``before`` (prefix) or ``after`` (suffix) side."""
    if side not in ("before", "after"):
        raise ValueError("side must be 'before' or 'after'")
    if len(points) < 2:
        raise ValueError("need at least two context points")
    times = list(times) if times else [None] * len(points)
    # orient so the gap-adjacent points come last
    if side == "before":
        pts, ts = list(points), times
    else:
        pts, ts = list(points)[::-1], times[::-1]
    win_p, win_t = pts[-speed_window:], ts[-speed_window:]

    avg_speed = None
    per_seg: list[float] = []
    if all(t is not None for t in win_t):
        elapsed = abs(win_t[-1] - win_t[0])
        if elapsed > 0:
            avg_speed = path_length(win_p) / elapsed
            per_seg = [
                haversine_distance(a, b) / abs(tb - ta)
                for a, b, ta, tb in zip(win_p, win_p[1:], win_t, win_t[1:])
                if tb != ta
            ]

    head_p = pts[-heading_window:]
    if side == "after":
        head_p = head_p[::-1]
    try:
        heading = cardinal_8(initial_bearing(head_p[0], head_p[-1]))
    except DegenerateBearing:
        heading = None

    names = _named_roads(net, [pts[0], pts[-1]] if side == "before" else [pts[-1], pts[0]])
    word = CARDINAL_WORDS[heading] if heading else None
    lines = []
    if side == "before":
        if len(names) >= 2:
            lines.append(f"- Starting near {names[0]}, continuing along {names[1]}")
        elif names:
            lines.append(f"- Travelling along {names[0]}")
        if word:
            lines.append(f"- The traveler was heading {word} before entering the masked segment")
        if avg_speed is not None:
            act = f" {activity.lower()}" if activity else ""
            lines.append(f"- Average speed: {avg_speed:.1f} m/s ({_speed_label(per_seg)}{act})")
    else:
        parts = []
        if word:
            parts.append(f"continues {word}")
        if names:
            parts.append(f"will connect to {names[0]}")
        if parts:
            lines.append("Route narrative: Traveler " + " and ".join(parts) + ".")
        if avg_speed is not None:
            lines.append(f"Movement: Expected speed {_speed_label(per_seg)} at ~{avg_speed:.0f} m/s.")
    if not lines:
        lines.append("- No usable context on this side")
    return ContextSummary(side, avg_speed, heading, "\n".join(lines), tuple(names))


# --- stage 1 -----------------------------------------------------------------


def road_label(road: Road) -> str:
    return road.name or f"unnamed {road.highway_type}"


def nearest_intersection(net: RoadNetwork, road_id: int, p: GeoPoint) -> int | None:
    nodes = net.intersections_on(road_id)
    if not nodes:
        return None
    return min(nodes, key=lambda n: (haversine_distance(net.intersections[n].location, p), n))


def _bearing_text(b: float | None) -> str:
    if b is None:
        return "unknown"
    return f"~{round(b, 1):g}°"


def direct_distance_m(task: MaskedTask) -> int:
    return int(round(haversine_distance(task.p_s, task.p_e)))


def step_cap(gap_kind: str) -> int:
    return STEP_CAPS.get(gap_kind, STEP_CAPS["large"])


def build_stage1_prompt(
    task: MaskedTask,
    before: ContextSummary,
    after: ContextSummary,
    start: SnapResult,
    end: SnapResult,
    net: RoadNetwork,
    network_text: str,
    max_steps: int | None = None,
) -> str:
    distance = direct_distance_m(task)
    max_steps = max_steps or step_cap(task.gap_kind)
    start_road = net.roads[start.road_id]
    end_road = net.roads[end.road_id]
    next_node = nearest_intersection(net, start.road_id, start.snapped_point)
    junction = nearest_intersection(net, end.road_id, end.snapped_point)
    entry_word = (
        f" ({CARDINAL_WORDS[cardinal_8(start.entry_bearing)]}ward)" if start.entry_bearing is not None else ""
    )
    activity = str(getattr(task.activity, "value", task.activity)).upper()
    return "\n".join(
        [
            "You are a navigation expert. Create a connected path from start to end point.",
            "",
            f"Start: {task.p_s.fmt()}",
            f"End: {task.p_e.fmt()}",
            f"Activity: {activity}",
            f"Distance: {distance}m",
            "",
            "--- CONTEXT BEFORE ---",
            before.narrative,
            "",
            "--- CONTEXT AFTER ---",
            after.narrative,
            "",
            "--- START POINT ANALYSIS ---",
            f"Snapped to: {road_label(start_road)} (id={start.road_id}), confidence = {start.confidence:.2f}",
            f"Bearing at entry: {_bearing_text(start.entry_bearing)}{entry_word}",
            f"Next candidate node: (node_id_original={next_node if next_node is not None else 'none'})",
            "",
            "--- END POINT ANALYSIS ---",
            f"Snapped to: {road_label(end_road)} (id={end.road_id}), confidence = {end.confidence:.2f}",
            f"Required approach bearing: {_bearing_text(end.entry_bearing)}",
            f"Nearest junction: (node_id_original={junction if junction is not None else 'none'})",
            "",
            network_text.rstrip("\n"),
            "",
            "--- TASK ---",
            "Choose a logical path from start to end point based on the activity and distance.",
            "Output step-by-step navigation with road names, IDs, and intersections.",
            "",
            "--- EVALUATION REQUIREMENTS ---",
            "1. Path must be physically connected via shared intersections.",
            f"2. Max {max_steps} steps (distance = {distance}m).",
            "3. Each step must include:",
            "   • Direction (e.g., east, southeast).",
            f"   • Road name + ID (e.g., {road_label(start_road)} (id={start.road_id})).",
            "   • Target intersection ID (node_id_original=XXXX).",
            '4. Prefer "continue straight" over turns.',
            "5. Do not include coordinate lists in step descriptions.",
            "",
            "--- OUTPUT FORMAT ---",
            "REASONING: Justification for path choice.",
            "STEP-BY-STEP NAVIGATION: Structured steps following schema.",
            "",
        ]
    )


# --- stage 2 -----------------------------------------------------------------


@dataclass(frozen=True)
class GeometrySlice:
    roads: tuple[Road, ...]
    intersections: tuple[Intersection, ...] = ()

    @property
    def road_ids(self) -> list[int]:
        return [r.id for r in self.roads]

    def vertices(self) -> list[GeoPoint]:
        seen: dict[GeoPoint, None] = {}
        for road in self.roads:
            for p in road.geometry:
                seen.setdefault(p, None)
        for inter in self.intersections:
            seen.setdefault(inter.location, None)
        return list(seen)


def geometry_slice(net: RoadNetwork, steps: Sequence[NavStep], k: int) -> GeometrySlice:
    """Roads named in step ``k`` plus the next step's road, and the step's target node."""
    wanted = list(steps[k].road_ids)
    if k + 1 < len(steps) and steps[k + 1].road_id is not None:
        wanted.append(steps[k + 1].road_id)
    roads = tuple(net.roads[r] for r in dict.fromkeys(wanted) if r in net.roads)
    target = steps[k].target_intersection_id
    inters = (net.intersections[target],) if target in net.intersections else ()
    return GeometrySlice(roads, inters)


def _coord(p: GeoPoint) -> str:
    return f"[{p.lat:.7f}, {p.lon:.7f}]"


def render_slice(geo: GeometrySlice) -> str:
    lines = ["{", ' "roads": [']
    for i, road in enumerate(geo.roads):
        pts = ",\n".join(f"       {_coord(p)}" for p in road.geometry)
        tail = "," if i < len(geo.roads) - 1 else ""
        lines += [
            "   {",
            f'     "id": {road.id},',
            f'     "name": {json.dumps(road.name or "unnamed", ensure_ascii=False)},',
            '     "geometry": [',
            pts,
            "     ]",
            "   }" + tail,
        ]
    lines.append(" ],")
    lines.append(' "intersections": [')
    inters = [
        f'   {{"id": {x.node_id}, "lat": {x.location.lat:.7f}, "lon": {x.location.lon:.7f}}}'
        for x in geo.intersections
    ]
    lines.append(",\n".join(inters))
    lines += [" ]", "}"]
    return "\n".join(line for line in lines if line)


def build_stage2_prompt(step: NavStep, geo: GeometrySlice, start: GeoPoint, source: str) -> str:
    """``source`` names where the starting coordinate came from, e.g. ``step_1``."""
    name = f"step_{step.index}"
    return "\n".join(
        [
            f"**TASK:** Generate coordinates for {name} from the geometry below.",
            "",
            f"**{name.upper()} DESCRIPTION:**",
            step.text,
            "",
            "**GEOMETRY (excerpt):**",
            render_slice(geo),
            "",
            f"Starting coordinate: {_coord(start)} (from {source})",
            "",
            "**GENERATE ONLY THE CONTINUATION OF THIS LIST, STARTING WITH A COMMA:**",
            f"[{_coord(start)}",
            "",
        ]
    )


# --- preference routing ------------------------------------------------------


@dataclass(frozen=True)
class PreferenceProfile:
    name: str
    description: str
    priorities: tuple[str, ...]
    poi_categories: tuple[str, ...] = ()


@dataclass(frozen=True)
class Poi:
    id: str
    name: str
    category: str
    location: GeoPoint


@dataclass(frozen=True)
class LengthBand:
    direct: float
    low: int
    high: int


ANCHOR_RADIUS_M = 60
ANCHOR_HARD_LIMIT_M = 100
PREFERENCE_STEP_CAP = 10
BAND_RATIOS = (0.95, 1.45)


def length_band(direct: float, ratios: tuple[float, float] = BAND_RATIOS) -> LengthBand:
    return LengthBand(direct, int(round(ratios[0] * direct)), int(round(ratios[1] * direct)))


def attach_pois(net: RoadNetwork, pois: Sequence[Poi], radius: float = 50.0) -> dict[int, list[Poi]]:
    """POIs within ``radius`` of each road's geometry, in input order."""
    out: dict[int, list[Poi]] = {}
    for rid, road in net.roads.items():
        g = road.geometry
        for poi in pois:
            if len(g) == 1:
                d = haversine_distance(poi.location, g[0])
            else:
                d = min(point_to_segment_distance(poi.location, a, b) for a, b in zip(g, g[1:]))
            if d <= radius:
                out.setdefault(rid, []).append(poi)
    return out


def render_preference_network(net: RoadNetwork, pois: Sequence[Poi] = (), radius: float = 50.0) -> str:
    near = attach_pois(net, pois, radius)
    entries = []
    for rid, road in net.roads.items():
        entry: dict = {
            "id": rid,
            "name": road.name or "Unnamed road",
            "type": road.highway_type,
            "connects_to": [{"road_id": nb, "intersection_id": nid} for nb, nid in net.adjacency[rid]],
        }
        if rid in near:
            entry["nearby_pois"] = [{"id": p.id, "name": p.name, "category": p.category} for p in near[rid]]
        entries.append(f'"{rid}":' + json.dumps(entry, separators=(",", ":"), ensure_ascii=False))
    return ",".join(entries)


def _anchor_line(net: RoadNetwork, p: GeoPoint) -> str:
    snap = snap_point(net, p)
    road = net.roads[snap.road_id]
    return f"{road.name or 'Unnamed road'} (id={road.id}), distance={snap.distance:.0f}m"


def build_preference_prompt(
    start: GeoPoint,
    end: GeoPoint,
    activity: str,
    profile: PreferenceProfile,
    net: RoadNetwork,
    network_text: str,
    direct_distance: float | None = None,
) -> str:
    direct = haversine_distance(start, end) if direct_distance is None else direct_distance
    band = length_band(direct)
    activity = str(getattr(activity, "value", activity)).upper()
    return "\n".join(
        [
            "PREFERENCE-AWARE CONTEXT (for planning):",
            "",
            f"USER PROFILE: {profile.name}",
            f"Description: {profile.description}",
            "",
            "ROUTING PRIORITIES (ordered):",
            *[f"- {p}" for p in profile.priorities],
            "",
            "",
            "ROUTE LENGTH + EFFORT CONSTRAINTS:",
            f"- Direct distance: ~{int(direct)} m",
            f"- Target total length: {band.low}-{band.high} m (hard max: {band.high} m)",
            "- Maintain balance between exploration and effort: avoid unnecessary detours, backtracking, or loops",
            "- Prefer corridor-aligned POIs and short deviations only when warranted by preferences",
            f"- Do not exceed {PREFERENCE_STEP_CAP} steps; typical is 3-7",
            "",
            "ANCHORING CONSTRAINTS:",
            f"- step_1 MUST begin on a road within {ANCHOR_RADIUS_M} m of the start coordinate.",
            f"  * Prefer starting on: {_anchor_line(net, start)}",
            f"- The final step MUST end within {ANCHOR_RADIUS_M} m of the destination.",
            f"  * Prefer finishing on: {_anchor_line(net, end)}",
            f"- Rules: Do not start step_1 on any road farther than {ANCHOR_HARD_LIMIT_M} m from the start.",
            "  Do not overshoot the destination; ensure the final coordinates end exactly at the destination point.",
            "",
            f"Start: {start.fmt()}",
            f"End: {end.fmt()}",
            f"Activity: {activity}",
            "",
            "--- ROAD NETWORK ---",
            network_text,
            "",
        ]
    )


__all__ = [
    "ContextSummary",
    "GeometrySlice",
    "LengthBand",
    "Poi",
    "PreferenceProfile",
    "build_context_summary",
    "build_preference_prompt",
    "build_stage1_prompt",
    "build_stage2_prompt",
    "direct_distance_m",
    "geometry_slice",
    "length_band",
    "nearest_intersection",
    "render_preference_network",
    "render_slice",
    "step_cap",
]
