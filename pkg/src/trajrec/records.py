"""Reconstruction records shared by the runners, evaluation and reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .geo import GeoPoint
from .storage import decode_points, encode_points


@dataclass(frozen=True)
class NavStep:
    index: int
    text: str
    direction: str | None
    road_name: str
    road_id: int | None
    road_ids: tuple[int, ...]
    target_intersection_id: int | None
    intersection_ids: tuple[int, ...] = ()
    to_endpoint: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "text": self.text,
            "direction": self.direction,
            "road_name": self.road_name,
            "road_id": self.road_id,
            "road_ids": list(self.road_ids),
            "target_intersection_id": self.target_intersection_id,
            "intersection_ids": list(self.intersection_ids),
            "to_endpoint": self.to_endpoint,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> NavStep:
        return cls(
            index=d["index"],
            text=d["text"],
            direction=d.get("direction"),
            road_name=d.get("road_name", ""),
            road_id=d.get("road_id"),
            road_ids=tuple(d.get("road_ids", ())),
            target_intersection_id=d.get("target_intersection_id"),
            intersection_ids=tuple(d.get("intersection_ids", ())),
            to_endpoint=d.get("to_endpoint", False),
        )


@dataclass(frozen=True)
class NavigationPlan:
    reasoning: str
    steps: tuple[NavStep, ...]

    @property
    def road_sequence(self) -> list[int]:
        return [s.road_id for s in self.steps if s.road_id is not None]

    def to_dict(self) -> dict[str, Any]:
        return {"reasoning": self.reasoning, "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> NavigationPlan:
        return cls(d.get("reasoning", ""), tuple(NavStep.from_dict(s) for s in d["steps"]))


@dataclass
class Reconstruction:
    """One method's output for one task.

    ``per_step_raw`` keeps the coordinates as the model emitted them (before
    grounding) and ``per_step_start`` the chained starting coordinate offered
    to each step; both feed the stage diagnostics.
    """

    task_id: str
    method: str
    points: list[GeoPoint]
    per_step_points: list[list[GeoPoint]] = field(default_factory=list)
    per_step_raw: list[list[GeoPoint]] = field(default_factory=list)
    per_step_start: list[GeoPoint] = field(default_factory=list)
    per_step_roads: list[list[int]] = field(default_factory=list)
    start_anchor: GeoPoint | None = None
    plan: NavigationPlan | None = None
    road_ids: list[int] = field(default_factory=list)
    fallback_flag: bool = False
    error: str | None = None
    usage: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "method": self.method,
            "points": encode_points(self.points),
            "per_step_points": [encode_points(s) for s in self.per_step_points],
            "per_step_raw": [encode_points(s) for s in self.per_step_raw],
            "per_step_start": encode_points(self.per_step_start),
            "per_step_roads": self.per_step_roads,
            "start_anchor": encode_points([self.start_anchor])[0] if self.start_anchor else None,
            "plan": self.plan.to_dict() if self.plan else None,
            "road_ids": self.road_ids,
            "fallback_flag": self.fallback_flag,
            "error": self.error,
            "usage": self.usage,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Reconstruction:
        def pts(rows):
            return list(decode_points(rows)[0])

        anchor = d.get("start_anchor")
        return cls(
            task_id=d["task_id"],
            method=d["method"],
            points=pts(d["points"]),
            per_step_points=[pts(s) for s in d.get("per_step_points", [])],
            per_step_raw=[pts(s) for s in d.get("per_step_raw", [])],
            per_step_start=pts(d.get("per_step_start", [])),
            per_step_roads=[list(r) for r in d.get("per_step_roads", [])],
            start_anchor=pts([anchor])[0] if anchor else None,
            plan=NavigationPlan.from_dict(d["plan"]) if d.get("plan") else None,
            road_ids=list(d.get("road_ids", [])),
            fallback_flag=bool(d.get("fallback_flag", False)),
            error=d.get("error"),
            usage=dict(d.get("usage") or {}),
        )
