"""Turning model completions into plans and grounded coordinates."""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable, Sequence

import numpy as np

from ..errors import CoordParseError, PlanParseError
from ..geo import GeoPoint, as_array, haversine_matrix
from ..records import NavigationPlan, NavStep

log = logging.getLogger(__name__)

GROUNDING_RADIUS_M = 25.0
VERTEX_TOLERANCE_DEG = 1e-6

_STEP = re.compile(r"^[ \t>*#-]*\**step[_ ]?(\d+)\**\s*:\**", re.I | re.M)
_SECTION_END = re.compile(r"\n\s*\n|\n\s*\*\*[A-Z]")
_ROAD_ID = re.compile(r"\(id=(\d+)\)")
_NODE_ID = re.compile(r"node_id_original\s*=\s*(\d+)")
_REASONING = re.compile(r"REASONING\W*(.*?)(?=\n[^\n]*STEP-BY-STEP|\Z)", re.S | re.I)
_DIRECTIONS = [
    ("northeast", "NE"), ("north-east", "NE"), ("northwest", "NW"), ("north-west", "NW"),
    ("southeast", "SE"), ("south-east", "SE"), ("southwest", "SW"), ("south-west", "SW"),
    ("north", "N"), ("south", "S"), ("east", "E"), ("west", "W"),
]
_DIRECTION_RE = re.compile(
    r"\b(" + "|".join(re.escape(w) for w, _ in _DIRECTIONS) + r")(?:ward|wards|bound|ern)?\b", re.I
)
_DIRECTION_MAP = dict(_DIRECTIONS)
_ROAD_NAME = re.compile(r"(?:along|onto|on|via|follow|take|using)\s+(?:the\s+)?(.+?)\s*\(id=\d+\)", re.I)


def _direction(text: str, previous: str | None) -> str | None:
    m = _DIRECTION_RE.search(text)
    if m:
        return _DIRECTION_MAP[m.group(1).lower()]
    # "continue straight" and unlabelled steps keep the previous heading
    return previous


def _road_name(text: str) -> str:
    m = _ROAD_NAME.search(text)
    if m:
        return " ".join(m.group(1).split())
    before = text.split("(id=", 1)[0].split()
    return before[-1] if before else ""


def parse_plan(text: str, max_steps: int | None = None) -> NavigationPlan:
    """Extract ``step_N:`` lines with their direction, road ids and anchor node."""
    heads = list(_STEP.finditer(text))
    if not heads:
        raise PlanParseError("no step_N lines found in completion")
    steps: list[NavStep] = []
    seen: set[int] = set()
    direction = None
    for i, h in enumerate(heads):
        number = int(h.group(1))
        end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        body = text[h.end() : end]
        stop = _SECTION_END.search(body)
        if stop:
            body = body[: stop.start()]
        if number in seen:
            continue
        seen.add(number)
        roads = tuple(int(x) for x in _ROAD_ID.findall(body))
        nodes = tuple(int(x) for x in _NODE_ID.findall(body))
        direction = _direction(body, direction)
        steps.append(
            NavStep(
                index=len(steps) + 1,
                text=f"step_{len(steps) + 1}: " + " ".join(body.split()),
                direction=direction,
                road_name=_road_name(body),
                road_id=roads[0] if roads else None,
                road_ids=roads,
                target_intersection_id=nodes[-1] if nodes else None,
                intersection_ids=nodes,
                to_endpoint=bool(re.search(r"\b(end ?point|destination)\b", body, re.I)),
            )
        )
    if max_steps is not None and len(steps) > max_steps:
        log.warning("plan has %d steps; keeping the first %d", len(steps), max_steps)
        steps = steps[:max_steps]
    m = _REASONING.search(text[: heads[0].start()])
    reasoning = " ".join(m.group(1).replace("*", " ").split()) if m else ""
    return NavigationPlan(reasoning, tuple(steps))


_PAIR = re.compile(r"\[\s*(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*,\s*(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*\]")


def parse_step_coordinates(text: str) -> list[GeoPoint]:
    """All ``[lat, lon]`` pairs in order; out-of-range pairs are dropped with a warning."""
    points = []
    found = 0
    for m in _PAIR.finditer(text):
        found += 1
        lat, lon = float(m.group(1)), float(m.group(2))
        try:
            points.append(GeoPoint(lat, lon))
        except ValueError:
            log.warning("dropping invalid coordinate [%s, %s]", m.group(1), m.group(2))
    if not found:
        raise CoordParseError("no coordinate list in completion")
    if not points:
        raise CoordParseError("every coordinate pair was invalid")
    return points


def collapse(points: Iterable[GeoPoint]) -> list[GeoPoint]:
    out: list[GeoPoint] = []
    for p in points:
        if not out or out[-1] != p:
            out.append(p)
    return out


def matches_any(points: Sequence[GeoPoint], targets: Sequence[GeoPoint], tol: float = VERTEX_TOLERANCE_DEG) -> np.ndarray:
    """Per point: index of the first target within ``tol`` degrees on both axes, or -1."""
    if not points or not targets:
        return np.full(len(points), -1)
    p, t = as_array(points), as_array(targets)
    close = (np.abs(p[:, None, 0] - t[None, :, 0]) <= tol) & (np.abs(p[:, None, 1] - t[None, :, 1]) <= tol)
    return np.where(close.any(axis=1), close.argmax(axis=1), -1)


def ground_coordinates(
    points: Sequence[GeoPoint],
    vertices: Sequence[GeoPoint],
    anchors: Sequence[GeoPoint] = (),
    radius: float = GROUNDING_RADIUS_M,
) -> list[GeoPoint]:
    """Pin emitted points to road vertices.

    Exact vertex or anchor matches are kept (as the canonical vertex/anchor);
    other points move to the nearest vertex within ``radius`` meters or are
    dropped. Consecutive duplicates are collapsed.
    """
    if not points:
        return []
    anchors = list(anchors)
    anchor_hit = matches_any(points, anchors)
    vertex_hit = matches_any(points, vertices)
    nearest_d = nearest_i = None
    if vertices:
        dist = haversine_matrix(as_array(points), as_array(vertices))
        nearest_i = dist.argmin(axis=1)
        nearest_d = dist[np.arange(len(points)), nearest_i]
    out = []
    for k, p in enumerate(points):
        if vertex_hit[k] >= 0:
            out.append(vertices[vertex_hit[k]])
        elif anchor_hit[k] >= 0:
            out.append(anchors[anchor_hit[k]])
        elif nearest_d is not None and nearest_d[k] <= radius:
            out.append(vertices[nearest_i[k]])
    return collapse(out)
