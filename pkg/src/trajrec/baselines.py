"""Non-LLM reconstructions: straight-line interpolation and HMM map matching."""

from __future__ import annotations

import dataclasses
import math
import weakref
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import MatchInfeasible, NoRoads
from .geo import (
    GeoPoint,
    Polyline,
    as_array,
    haversine_distance,
    intermediate_point,
    project_to_segment,
    segment_distance_matrix,
)
from .roadnet import ONEWAY_ACTIVITIES, RoadNetwork
from .traces import MaskedTask

DEFAULT_SPACING_M = 25.0


@dataclass(frozen=True)
class HmmParams:
    sigma_z: float = 10.0
    beta: float = 50.0
    max_candidates_per_point: int = 5
    candidate_radius: float = 50.0
    respect_oneway: bool = False
    route_cutoff: float = 5000.0

    def __post_init__(self) -> None:
        for name in ("sigma_z", "beta", "max_candidates_per_point", "candidate_radius", "route_cutoff"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def linear_interpolate(p_s: GeoPoint, p_e: GeoPoint, spacing: float = DEFAULT_SPACING_M) -> list[GeoPoint]:
    """Evenly spaced points on the great circle from ``p_s`` to ``p_e``, both included."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    d = haversine_distance(p_s, p_e)
    if d == 0.0:
        return [p_s, p_e]
    n = math.ceil(d / spacing) + 1
    inner = [intermediate_point(p_s, p_e, k / (n - 1)) for k in range(1, n - 1)]
    return [p_s, *inner, p_e]


# --- routing -----------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    """A snap of one observation onto one road segment, with a travel direction.

    ``forward`` means moving toward ``geometry[segment + 1]``. Routes leave and
    enter a candidate in its direction, so turning round costs a trip through
    a node instead of nothing.
    """

    road_id: int
    segment: int
    fraction: float
    point: GeoPoint
    distance: float
    forward: bool = True


class Router:
    """Shortest paths over road geometry; edge weight is segment length."""

    def __init__(self, net: RoadNetwork, respect_oneway: bool, cutoff: float):
        self.net = net
        self.respect_oneway = respect_oneway
        self.cutoff = cutoff
        self.graph = nx.DiGraph()
        self._trees: dict[int, tuple[dict, dict]] = {}
        for rid, road in net.roads.items():
            nids, pts = road.node_ids, road.geometry
            self.graph.add_node(nids[0])
            for k in range(len(pts) - 1):
                w = haversine_distance(pts[k], pts[k + 1])
                self._add_edge(nids[k], nids[k + 1], w, rid)
                if not self.one_way(rid):
                    self._add_edge(nids[k + 1], nids[k], w, rid)

    def _add_edge(self, u: int, v: int, w: float, rid: int) -> None:
        if u == v:
            return
        old = self.graph.get_edge_data(u, v)
        if old is None or (w, rid) < (old["weight"], old["road"]):
            self.graph.add_edge(u, v, weight=w, road=rid)

    def one_way(self, road_id: int) -> bool:
        return self.respect_oneway and self.net.roads[road_id].oneway

    def tree(self, source: int) -> tuple[dict, dict]:
        if source not in self._trees:
            self._trees[source] = nx.single_source_dijkstra(self.graph, source, cutoff=self.cutoff)
        return self._trees[source]

    def _ends(self, c: Candidate) -> tuple[int, int, float]:
        road = self.net.roads[c.road_id]
        k = c.segment
        return road.node_ids[k], road.node_ids[k + 1], haversine_distance(road.geometry[k], road.geometry[k + 1])

    def _exit(self, c: Candidate) -> tuple[int, float]:
        if len(self.net.roads[c.road_id].geometry) == 1:
            return self.net.roads[c.road_id].node_ids[0], 0.0
        u, v, seg = self._ends(c)
        return (v, (1.0 - c.fraction) * seg) if c.forward else (u, c.fraction * seg)

    def _entry(self, c: Candidate) -> tuple[int, float]:
        if len(self.net.roads[c.road_id].geometry) == 1:
            return self.net.roads[c.road_id].node_ids[0], 0.0
        u, v, seg = self._ends(c)
        return (u, c.fraction * seg) if c.forward else (v, (1.0 - c.fraction) * seg)

    def route(self, a: Candidate, b: Candidate) -> tuple[float, list[int] | None]:
        """Route length from ``a`` to ``b`` and the node path (None = along one segment)."""
        best: tuple[float, list[int] | None] = (math.inf, None)
        if a.road_id == b.road_id and a.segment == b.segment and a.forward == b.forward:
            road = self.net.roads[a.road_id]
            if len(road.geometry) == 1:
                return 0.0, None
            ahead = b.fraction >= a.fraction if a.forward else b.fraction <= a.fraction
            if ahead:
                best = (abs(b.fraction - a.fraction) * self._ends(a)[2], None)
        src, off_a = self._exit(a)
        dst, off_b = self._entry(b)
        dist, paths = self.tree(src)
        if dst in dist:
            total = off_a + dist[dst] + off_b
            if total < best[0] - 1e-9:
                best = (total, paths[dst])
        return best


_routers: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def router_for(net: RoadNetwork, params: HmmParams) -> Router:
    """Router cached per network and routing options."""
    per_net = _routers.setdefault(net, {})
    key = (params.respect_oneway, params.route_cutoff)
    if key not in per_net:
        per_net[key] = Router(net, params.respect_oneway, params.route_cutoff)
    return per_net[key]


class _SegmentIndex:
    """All road segments packed into one coordinate array for vectorized distance."""

    def __init__(self, net: RoadNetwork):
        coords, owner, local = [], [], []
        for rid, road in net.roads.items():
            pts = road.geometry if len(road.geometry) > 1 else road.geometry * 2
            for k, p in enumerate(pts):
                coords.append(p)
                owner.append(rid)
                local.append(k)
        self.line = as_array(coords)
        owner_arr = np.array(owner)
        # a "segment" joining the tail of one road to the head of the next is bogus
        self.valid = owner_arr[:-1] == owner_arr[1:]
        self.owner = owner_arr[:-1]
        self.local = np.array(local[:-1])


_indexes: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def candidates_for(net: RoadNetwork, observations: Polyline, params: HmmParams) -> list[list[Candidate]]:
    """Per observation, the best snap on each road within the radius, nearest first.

    Each snap appears once per permitted travel direction (forward first).
    """
    if net not in _indexes:
        _indexes[net] = _SegmentIndex(net)
    index = _indexes[net]
    dist = segment_distance_matrix(as_array(observations), index.line)
    dist = np.where(index.valid[None, :], dist, np.inf)
    out = []
    for obs, row in zip(observations, dist):
        near = np.flatnonzero(row <= params.candidate_radius)
        per_road: dict[int, Candidate] = {}
        for s in near:
            rid, k = int(index.owner[s]), int(index.local[s])
            road = net.roads[rid]
            if len(road.geometry) == 1:
                cand = Candidate(rid, 0, 0.0, road.geometry[0], float(row[s]))
            else:
                d, foot, t = project_to_segment(obs, road.geometry[k], road.geometry[k + 1])
                cand = Candidate(rid, k, t, foot, d)
            held = per_road.get(rid)
            if held is None or (cand.distance, cand.segment) < (held.distance, held.segment):
                per_road[rid] = cand
        ranked = sorted(per_road.values(), key=lambda c: (c.distance, c.road_id))
        column = []
        for c in ranked[: params.max_candidates_per_point]:
            column.append(c)
            if len(net.roads[c.road_id].geometry) > 1 and not (params.respect_oneway and net.roads[c.road_id].oneway):
                column.append(dataclasses.replace(c, forward=False))
        out.append(column)
    return out


# --- HMM ---------------------------------------------------------------------


@dataclass
class Lattice:
    observations: list[GeoPoint]
    kept: list[int]
    candidates: list[list[Candidate]]
    emissions: list[np.ndarray]
    transitions: list[np.ndarray]
    routes: list[list[list[tuple[float, list[int] | None]]]] = field(repr=False)


def build_lattice(net: RoadNetwork, observations: Polyline, params: HmmParams) -> Lattice:
    """Candidates, emission and transition log-probabilities for ``observations``.

    Observations without any candidate are dropped.
    """
    if not net.roads:
        raise NoRoads("cannot match against an empty network")
    router = router_for(net, params)
    all_cands = candidates_for(net, observations, params)
    kept = [i for i, c in enumerate(all_cands) if c]
    if not kept:
        raise MatchInfeasible("no observation has a road candidate within the radius")
    obs = [observations[i] for i in kept]
    cands = [all_cands[i] for i in kept]
    emissions = [np.array([-0.5 * (c.distance / params.sigma_z) ** 2 for c in col]) for col in cands]
    transitions, routes = [], []
    for t in range(len(obs) - 1):
        gc = haversine_distance(obs[t], obs[t + 1])
        mat = np.full((len(cands[t]), len(cands[t + 1])), -np.inf)
        table = []
        for i, a in enumerate(cands[t]):
            row = []
            for j, b in enumerate(cands[t + 1]):
                length, path = router.route(a, b)
                row.append((length, path))
                if math.isfinite(length):
                    mat[i, j] = -abs(gc - length) / params.beta
            table.append(row)
        transitions.append(mat)
        routes.append(table)
    return Lattice(obs, kept, cands, emissions, transitions, routes)


def viterbi(emissions: list[np.ndarray], transitions: list[np.ndarray]) -> tuple[list[int], float]:
    """Most likely state sequence and its total log-probability.

    When no state of a column is reachable the chain restarts there; the
    returned score is then the sum of the independent chains' maxima. Ties
    resolve to the lowest state index.
    """
    scores = [np.asarray(emissions[0], dtype=float)]
    back: list[np.ndarray | None] = [None]
    for trans, emit in zip(transitions, emissions[1:]):
        total = scores[-1][:, None] + trans
        idx = np.argmax(total, axis=0)
        best = total[idx, np.arange(total.shape[1])]
        if np.isneginf(best).all():
            scores.append(np.asarray(emit, dtype=float))
            back.append(None)
        else:
            scores.append(best + emit)
            back.append(idx)
    path = [0] * len(scores)
    score = 0.0
    t = len(scores) - 1
    state = int(np.argmax(scores[t]))
    score += float(scores[t][state])
    while True:
        path[t] = state
        if t == 0:
            break
        if back[t] is None:
            t -= 1
            state = int(np.argmax(scores[t]))
            score += float(scores[t][state])
        else:
            state = int(back[t][state])
            t -= 1
    return path, score


@dataclass
class MatchResult:
    points: list[GeoPoint]
    road_ids: list[int]
    log_prob: float
    states: list[Candidate]


def _collapse(seq):
    out = []
    for x in seq:
        if not out or out[-1] != x:
            out.append(x)
    return out


def hmm_map_match(net: RoadNetwork, observations: Polyline, params: HmmParams | None = None) -> MatchResult:
    """Viterbi map matching; the output follows road geometry between matched snaps."""
    params = params or HmmParams()
    if len(observations) < 2:
        raise ValueError("need at least two observations")
    lattice = build_lattice(net, observations, params)
    path, score = viterbi(lattice.emissions, lattice.transitions)
    router = router_for(net, params)
    locs = net.node_locations
    states = [lattice.candidates[t][s] for t, s in enumerate(path)]
    points = [states[0].point]
    roads = [states[0].road_id]
    for t in range(len(states) - 1):
        a, b = states[t], states[t + 1]
        length, nodes = lattice.routes[t][path[t]][path[t + 1]]
        if nodes:
            points.extend(locs[n] for n in nodes)
            roads.extend(router.graph.edges[u, v]["road"] for u, v in zip(nodes, nodes[1:]))
        roads.append(b.road_id)
        points.append(b.point)
    return MatchResult(_collapse(points), _collapse(roads), score, states)


@dataclass
class BaselineOutput:
    points: list[GeoPoint]
    road_ids: list[int] = field(default_factory=list)
    fallback: bool = False
    error: str | None = None


def linear_baseline(task: MaskedTask, spacing: float = DEFAULT_SPACING_M) -> BaselineOutput:
    return BaselineOutput(linear_interpolate(task.p_s, task.p_e, spacing))


def linear_plus_hmm(
    task: MaskedTask,
    net: RoadNetwork,
    params: HmmParams | None = None,
    spacing: float = DEFAULT_SPACING_M,
) -> BaselineOutput:
    """Map-match the straight line; falls back to it (flagged) when matching fails."""
    params = params or HmmParams()
    activity = str(getattr(task.activity, "value", task.activity))
    params = dataclasses.replace(params, respect_oneway=activity in ONEWAY_ACTIVITIES)
    line = linear_interpolate(task.p_s, task.p_e, spacing)
    try:
        match = hmm_map_match(net, line, params)
    except (MatchInfeasible, NoRoads) as exc:
        return BaselineOutput(line, fallback=True, error=f"{type(exc).__name__}: {exc}")
    return BaselineOutput(match.points, match.road_ids)
