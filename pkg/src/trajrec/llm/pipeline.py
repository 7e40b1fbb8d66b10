"""Two-stage reconstruction: pick a road path, then generate grounded coordinates per step."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from ..baselines import DEFAULT_SPACING_M, linear_interpolate
from ..errors import CoordParseError, NoRoads, PlanParseError, ProviderError
from ..records import Reconstruction
from ..roadnet import Representation, RoadNetwork, render_context, snap_point
from ..traces import MaskedTask
from .parsing import collapse, ground_coordinates, parse_plan, parse_step_coordinates
from .prompts import (
    build_context_summary,
    build_stage1_prompt,
    build_stage2_prompt,
    geometry_slice,
    step_cap,
)
from .provider import Completion, Provider

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineOptions:
    representation: Representation = Representation.TOPOLOGY_DIRECTION
    grounding: bool = True
    small_step_cap: int = 3
    large_step_cap: int = 7
    fallback_spacing: float = DEFAULT_SPACING_M


class _Usage:
    def __init__(self) -> None:
        self.calls = 0
        self.prompt_tokens = 0
        self.completion_tokens = 0
        self.latency_s = 0.0

    def add(self, c: Completion) -> None:
        self.calls += 1
        self.prompt_tokens += c.prompt_tokens
        self.completion_tokens += c.completion_tokens
        self.latency_s += c.latency_s

    def as_dict(self) -> dict[str, float]:
        return {
            "calls": self.calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency_s": round(self.latency_s, 6),
        }


def run_two_stage(
    task: MaskedTask,
    net: RoadNetwork,
    provider: Provider,
    method: str = "llm",
    options: PipelineOptions | None = None,
) -> Reconstruction:
    """Reconstruct ``task``; any parse or provider failure yields a flagged linear fallback."""
    opts = options or PipelineOptions()
    usage = _Usage()
    try:
        return _run(task, net, provider, method, opts, usage)
    except (PlanParseError, CoordParseError, ProviderError, NoRoads) as exc:
        log.warning("task %s: falling back to linear (%s)", task.task_id, exc)
        return Reconstruction(
            task_id=task.task_id,
            method=method,
            points=linear_interpolate(task.p_s, task.p_e, opts.fallback_spacing),
            fallback_flag=True,
            error=f"{type(exc).__name__}: {exc}",
            usage=usage.as_dict(),
        )


def _run(task, net, provider, method, opts, usage) -> Reconstruction:
    if not net.roads:
        raise NoRoads("road network is empty")
    start = snap_point(net, task.p_s)
    end = snap_point(net, task.p_e)
    activity = str(getattr(task.activity, "value", task.activity))
    before = build_context_summary(task.prefix, task.prefix_times, "before", net=net, activity=activity)
    after = build_context_summary(task.suffix, task.suffix_times, "after", net=net, activity=activity)
    cap = opts.small_step_cap if task.gap_kind == "small" else opts.large_step_cap
    cap = cap or step_cap(task.gap_kind)
    network_text = render_context(net, opts.representation, task.p_e)
    prompt = build_stage1_prompt(task, before, after, start, end, net, network_text, cap)
    reply = provider.complete(prompt)
    usage.add(reply)
    plan = parse_plan(reply.text, cap)

    start_anchor = start.snapped_point.rounded(7)
    anchors = [task.p_s, task.p_e, start_anchor]
    per_points, per_raw, per_start, per_roads = [], [], [], []
    cursor, source = start_anchor, "snapped start"
    for k, step in enumerate(plan.steps):
        geo = geometry_slice(net, plan.steps, k)
        reply = provider.complete(build_stage2_prompt(step, geo, cursor, source))
        usage.add(reply)
        raw = parse_step_coordinates(reply.text)
        if opts.grounding:
            kept = ground_coordinates(raw, geo.vertices(), [*anchors, cursor])
        else:
            kept = list(raw)
        pts = [cursor, *kept]
        if k == len(plan.steps) - 1:
            pts.append(task.p_e)
        pts = collapse(pts)
        per_points.append(pts)
        per_raw.append(raw)
        per_start.append(cursor)
        per_roads.append(geo.road_ids)
        cursor, source = pts[-1], f"step_{step.index}"

    points = collapse(p for step_pts in per_points for p in step_pts)
    if points[-1] != task.p_e:
        points.append(task.p_e)
    return Reconstruction(
        task_id=task.task_id,
        method=method,
        points=points,
        per_step_points=per_points,
        per_step_raw=per_raw,
        per_step_start=per_start,
        per_step_roads=per_roads,
        start_anchor=start_anchor,
        plan=plan,
        road_ids=plan.road_sequence,
        usage=usage.as_dict(),
    )
