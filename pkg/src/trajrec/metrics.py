"""Reconstruction metrics (MAE and PoT families), stage diagnostics and aggregation."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import DegenerateBearing, DegenerateGroundTruth, DegenerateTrajectory
from .geo import (
    CARDINAL_BEARINGS,
    GeoPoint,
    as_array,
    circular_angle_error,
    haversine_distance,
    haversine_matrix,
    initial_bearing,
    path_length,
    segment_distance_matrix,
)
from .llm.parsing import matches_any
from .records import NavigationPlan, Reconstruction
from .roadnet import RoadNetwork
from .traces import MaskedTask


@dataclass(frozen=True)
class MetricsConfig:
    tau: float = 10.0
    large_gap_threshold: float = 200.0

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def harmonic(a: float, b: float) -> float:
    """2ab/(a+b), taken as 0 when both are 0."""
    return 0.0 if a + b == 0 else 2 * a * b / (a + b)


def _mae(src: Sequence[GeoPoint], dst: Sequence[GeoPoint], length: float) -> float:
    nearest = haversine_matrix(as_array(src), as_array(dst)).min(axis=1)
    return math.fsum(nearest.tolist()) / (len(src) * length) * 100.0


def mae_gr(G: Sequence[GeoPoint], R: Sequence[GeoPoint]) -> float:
    """Mean nearest-point deviation of G's points from R's, as % of G's length."""
    if not G or not R:
        raise ValueError("both polylines need at least one point")
    length = path_length(G)
    if length == 0:
        raise DegenerateGroundTruth("ground truth has zero length")
    return _mae(G, R, length)


def mae_rg(R: Sequence[GeoPoint], G: Sequence[GeoPoint]) -> float:
    """Mean nearest-point deviation of R's points from G's, as % of R's length."""
    if not G or not R:
        raise ValueError("both polylines need at least one point")
    length = path_length(R)
    if length == 0:
        raise DegenerateTrajectory("reconstruction has zero length")
    return _mae(R, G, length)


def _pot(src: Sequence[GeoPoint], target: Sequence[GeoPoint], tau: float) -> float:
    nearest = segment_distance_matrix(as_array(src), as_array(target)).min(axis=1)
    return float(np.count_nonzero(nearest <= tau)) / len(src) * 100.0


def pot_gr(G: Sequence[GeoPoint], R: Sequence[GeoPoint], tau: float = 10.0) -> float:
    """Share of G's points within ``tau`` meters of R's segments."""
    return _pot(G, R, tau)


def pot_rg(R: Sequence[GeoPoint], G: Sequence[GeoPoint], tau: float = 10.0) -> float:
    """Share of R's points within ``tau`` meters of G's segments."""
    return _pot(R, G, tau)


def mae_f1(a: float, b: float) -> float:
    return harmonic(a, b)


def pot_f1(a: float, b: float) -> float:
    return harmonic(a, b)


# --- stage diagnostics -------------------------------------------------------


def plan_connectivity(plan: NavigationPlan, net: RoadNetwork) -> float:
    """Percent of consecutive distinct plan roads that share an intersection."""
    roads = plan.road_sequence
    pairs = [(a, b) for a, b in zip(roads, roads[1:]) if a != b]
    if not pairs:
        return 100.0
    ok = sum(net.connected(a, b) for a, b in pairs)
    return ok / len(pairs) * 100.0


def network_adherence(plan: NavigationPlan, net: RoadNetwork) -> float:
    """Percent of the distinct road and node ids named by the plan that exist in ``net``."""
    roads = {r for s in plan.steps for r in s.road_ids}
    nodes = {n for s in plan.steps for n in s.intersection_ids}
    total = len(roads) + len(nodes)
    if total == 0 or not net.roads:
        return 0.0
    known_nodes = net.node_locations
    valid = sum(r in net.roads for r in roads) + sum(n in known_nodes for n in nodes)
    return valid / total * 100.0


def geometry_adherence(
    raw_steps: Sequence[Sequence[GeoPoint]],
    step_vertices: Sequence[Sequence[GeoPoint]],
    step_anchors: Sequence[Sequence[GeoPoint]],
) -> float | None:
    """Percent of emitted coordinates that are slice vertices or boundary anchors."""
    total = valid = 0
    for raw, verts, anchors in zip(raw_steps, step_vertices, step_anchors):
        if not raw:
            continue
        hit = (matches_any(raw, verts) >= 0) | (matches_any(raw, anchors) >= 0)
        total += len(raw)
        valid += int(hit.sum())
    return None if total == 0 else valid / total * 100.0


def bearing_error(directions: Sequence[str | None], steps: Sequence[Sequence[GeoPoint]]) -> tuple[float | None, int]:
    """Mean circular error between stated cardinals and step start-to-end bearings.

    Returns ``(mean, skipped)``; steps without a direction or with coincident
    endpoints are skipped.
    """
    errors, skipped = [], 0
    for d, pts in zip(directions, steps):
        if d is None or len(pts) < 2:
            skipped += 1
            continue
        try:
            actual = initial_bearing(pts[0], pts[-1])
        except DegenerateBearing:
            skipped += 1
            continue
        errors.append(circular_angle_error(CARDINAL_BEARINGS[d], actual))
    return (math.fsum(errors) / len(errors) if errors else None), skipped


def step_gap_stats(steps: Sequence[Sequence[GeoPoint]], threshold: float = 200.0) -> tuple[int, int]:
    """``(num_steps, gaps longer than threshold)``, gaps measured between consecutive steps."""
    gaps = 0
    nonempty = [s for s in steps if s]
    for a, b in zip(nonempty, nonempty[1:]):
        if haversine_distance(a[-1], b[0]) > threshold:
            gaps += 1
    return len(steps), gaps


# --- records and aggregation -------------------------------------------------


@dataclass
class EvalRecord:
    task_id: str
    method: str
    gap_kind: str
    region: str
    activity: str
    pot_gr: float | None = None
    pot_rg: float | None = None
    pot_f1: float | None = None
    mae_gr: float | None = None
    mae_rg: float | None = None
    mae_f1: float | None = None
    connectivity: float | None = None
    network_adherence: float | None = None
    geometry_adherence: float | None = None
    bearing_error_mean: float | None = None
    num_steps: int | None = None
    num_large_gaps: int | None = None
    fallback_flag: bool = False
    missing: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {k: (round(v, 9) if isinstance(v, float) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> EvalRecord:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


METRIC_FIELDS = (
    "pot_gr", "pot_rg", "pot_f1", "mae_gr", "mae_rg", "mae_f1",
    "connectivity", "network_adherence", "geometry_adherence", "bearing_error_mean",
    "num_steps", "num_large_gaps",
)


def _slice_vertices(net: RoadNetwork, road_ids: Iterable[int]) -> list[GeoPoint]:
    verts: list[GeoPoint] = []
    for rid in road_ids:
        if rid in net.roads:
            road = net.roads[rid]
            verts.extend(road.geometry)
    return verts


def evaluate(
    task: MaskedTask,
    recon: Reconstruction | None,
    net: RoadNetwork | None = None,
    config: MetricsConfig | None = None,
) -> EvalRecord:
    cfg = config or MetricsConfig()
    rec = EvalRecord(
        task_id=task.task_id,
        method=recon.method if recon else "",
        gap_kind=task.gap_kind,
        region=task.region,
        activity=str(getattr(task.activity, "value", task.activity)),
    )
    if recon is None:
        rec.missing = True
        rec.error = "no reconstruction"
        return rec
    rec.fallback_flag = recon.fallback_flag
    G, R = list(task.ground_truth), recon.points
    rec.pot_gr = pot_gr(G, R, cfg.tau)
    rec.pot_rg = pot_rg(R, G, cfg.tau)
    rec.pot_f1 = pot_f1(rec.pot_gr, rec.pot_rg)
    try:
        rec.mae_gr = mae_gr(G, R)
        rec.mae_rg = mae_rg(R, G)
        rec.mae_f1 = mae_f1(rec.mae_gr, rec.mae_rg)
    except DegenerateTrajectory as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    if recon.plan is not None:
        directions = [s.direction for s in recon.plan.steps]
        rec.bearing_error_mean, _ = bearing_error(directions, recon.per_step_points)
        rec.num_steps, rec.num_large_gaps = step_gap_stats(recon.per_step_raw, cfg.large_gap_threshold)
        if net is not None:
            rec.connectivity = plan_connectivity(recon.plan, net)
            rec.network_adherence = network_adherence(recon.plan, net)
            verts = [_slice_vertices(net, roads) for roads in recon.per_step_roads]
            base = [task.p_s, task.p_e] + ([recon.start_anchor] if recon.start_anchor else [])
            anchors = [base + [start] for start in recon.per_step_start]
            rec.geometry_adherence = geometry_adherence(recon.per_step_raw, verts, anchors)
    return rec


GROUP_KEYS = ("method", "gap_kind", "region", "activity")


def aggregate(records: Iterable[EvalRecord], group_by: Sequence[str] = ("method",)) -> list[dict]:
    """Unweighted per-group means; ``None`` values are left out of their column's mean."""
    for key in group_by:
        if key not in GROUP_KEYS:
            raise ValueError(f"cannot group by {key!r}")
    ordered = sorted(records, key=lambda r: (r.task_id, r.method))
    groups: dict[tuple, list[EvalRecord]] = {}
    for r in ordered:
        groups.setdefault(tuple(getattr(r, k) for k in group_by), []).append(r)
    rows = []
    for key in sorted(groups):
        members = groups[key]
        row: dict = dict(zip(group_by, key))
        row["n"] = len(members)
        row["fallbacks"] = sum(r.fallback_flag for r in members)
        for name in METRIC_FIELDS:
            vals = [getattr(r, name) for r in members if getattr(r, name) is not None]
            row[name] = math.fsum(vals) / len(vals) if vals else None
        rows.append(row)
    return rows


def table1(records: Sequence[EvalRecord], metrics: Sequence[str] = ("pot_gr", "pot_rg", "pot_f1", "mae_gr", "mae_rg", "mae_f1")) -> list[dict]:
    """One row per method with Small / Large / Overall means for each metric."""
    by_gap = {(r["method"], r["gap_kind"]): r for r in aggregate(records, ("method", "gap_kind"))}
    overall = {r["method"]: r for r in aggregate(records, ("method",))}
    rows = []
    for method in sorted(overall):
        row = {"method": method}
        for m in metrics:
            for label, src in (("small", by_gap.get((method, "small"))), ("large", by_gap.get((method, "large"))), ("overall", overall[method])):
                row[f"{m}_{label}"] = src[m] if src else None
        rows.append(row)
    return rows


def to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    header: list[str] = []
    for r in rows:
        for k in r:
            if k not in header:
                header.append(k)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if v is None else (f"{v:.6f}" if isinstance(v, float) else v)) for k, v in r.items()})
    return buf.getvalue()
