import math
import random

import pytest
from helpers import make_trajectory, wander

from trajrec.errors import DegenerateGroundTruth, DegenerateTrajectory
from trajrec.geo import GeoPoint, destination_point, haversine_distance, path_length, point_to_segment_distance
from trajrec.metrics import (
    EvalRecord,
    aggregate,
    bearing_error,
    geometry_adherence,
    harmonic,
    mae_f1,
    mae_gr,
    mae_rg,
    network_adherence,
    plan_connectivity,
    pot_f1,
    pot_gr,
    pot_rg,
    step_gap_stats,
    table1,
    to_csv,
)
from trajrec.records import NavigationPlan, NavStep
from trajrec.roadnet import build_graph


def brute_mae(src, dst):
    total = math.fsum(min(haversine_distance(p, q) for q in dst) for p in src)
    return total / (len(src) * path_length(src)) * 100


def brute_pot(src, target, tau):
    def d(p):
        if len(target) == 1:
            return haversine_distance(p, target[0])
        return min(point_to_segment_distance(p, a, b) for a, b in zip(target, target[1:]))

    return sum(d(p) <= tau for p in src) / len(src) * 100


def random_pair(rng):
    origin = GeoPoint(rng.uniform(-60, 60), rng.uniform(-170, 170))
    G = wander(rng, origin, rng.randint(2, 50))
    R = wander(rng, destination_point(origin, rng.uniform(0, 360), rng.uniform(0, 60)), rng.randint(2, 50))
    return G, R


class TestAgainstBruteForce:
    def test_random_instances(self):
        rng = random.Random(0)
        for _ in range(150):
            G, R = random_pair(rng)
            tau = rng.choice([5, 10, 25, 50])
            assert mae_gr(G, R) == pytest.approx(brute_mae(G, R), rel=1e-9)
            assert mae_rg(R, G) == pytest.approx(brute_mae(R, G), rel=1e-9)
            assert pot_gr(G, R, tau) == brute_pot(G, R, tau)
            assert pot_rg(R, G, tau) == brute_pot(R, G, tau)


class TestMae:
    def line(self, n=10, length=1000.0):
        a = GeoPoint(10, 10)
        return [destination_point(a, 90, length * k / (n - 1)) for k in range(n)]

    def test_identity(self):
        G = self.line()
        assert mae_gr(G, G) == 0 and mae_rg(G, G) == 0 and mae_f1(0, 0) == 0

    def test_hand_example(self):
        a = GeoPoint(0, 0)
        b = destination_point(a, 0, 1000)
        assert mae_gr([a, b], [a]) == pytest.approx(50.0, rel=1e-12)

    def test_spur_contribution(self):
        G = self.line()
        R = list(G)
        spur = destination_point(G[4], 0, 100)
        R[4] = spur
        assert len(R) == 10
        expected = 100 / (10 * path_length(R)) * 100
        assert mae_rg(R, G) == pytest.approx(expected, rel=1e-6)

    def test_degenerate(self):
        p = GeoPoint(1, 1)
        with pytest.raises(DegenerateGroundTruth):
            mae_gr([p, p], [p])
        with pytest.raises(DegenerateTrajectory):
            mae_rg([p], [p, GeoPoint(1, 2)])

    def test_harmonic(self):
        assert harmonic(5, 5) == 5
        assert harmonic(4, 12) == 6
        assert harmonic(0, 0) == 0
        assert pot_f1(80, 40) == pytest.approx(53.333, abs=1e-3)


def offset(points, meters, bearing=0.0):
    return [destination_point(p, bearing, meters) for p in points]


class TestPot:
    def test_identity(self):
        G = make_trajectory(1, n=40).points
        assert pot_f1(pot_gr(G, G), pot_rg(G, G)) == 100

    def test_parallel_offset(self):
        G = [destination_point(GeoPoint(20, 20), 90, 50 * k) for k in range(20)]
        R = offset(G, 20)
        assert pot_gr(G, R, 10) == 0
        assert pot_gr(G, R, 25) == 100

    def test_monotone_in_tau(self):
        rng = random.Random(1)
        for _ in range(30):
            G, R = random_pair(rng)
            values = [pot_gr(G, R, t) for t in (1, 5, 10, 20, 50, 100)]
            assert values == sorted(values)

    def test_spur_asymmetry(self):
        G = [destination_point(GeoPoint(0, 0), 90, 50 * k) for k in range(11)]
        spur = [destination_point(G[-1], 0, 50 * k) for k in range(1, 21)]
        R = G + spur
        assert pot_gr(G, R) == 100
        assert pot_rg(R, G) < 40

    def test_densify_changes_mae_not_pot(self):
        G = [destination_point(GeoPoint(5, 5), 90, 100 * k) for k in range(6)]
        R = offset([G[0], G[-1]], 3)
        dense = offset(G, 3)
        assert pot_gr(G, R, 10) == pot_gr(G, dense, 10) == 100
        assert mae_gr(G, R) != pytest.approx(mae_gr(G, dense))

    def test_reversal_invariance(self):
        rng = random.Random(2)
        for _ in range(20):
            G, R = random_pair(rng)
            Rr = R[::-1]
            assert pot_gr(G, R) == pot_gr(G, Rr) and pot_rg(R, G) == pot_rg(Rr, G)
            assert mae_gr(G, R) == pytest.approx(mae_gr(G, Rr), rel=1e-12)
            assert mae_rg(R, G) == pytest.approx(mae_rg(Rr, G), rel=1e-12)


def step(i, road, node=None, direction="E", roads=None, nodes=None):
    return NavStep(i, f"step_{i}", direction, "r", road, tuple(roads or (road,)), node, tuple(nodes or ((node,) if node else ())))


def chain_net():
    els = [
        {"type": "way", "id": 1, "nodes": [10, 11], "tags": {"highway": "path"}, "geometry": [{"lat": 0, "lon": 0}, {"lat": 0, "lon": 0.001}]},
        {"type": "way", "id": 2, "nodes": [11, 12], "tags": {"highway": "path"}, "geometry": [{"lat": 0, "lon": 0.001}, {"lat": 0, "lon": 0.002}]},
        {"type": "way", "id": 3, "nodes": [13, 14], "tags": {"highway": "path"}, "geometry": [{"lat": 1, "lon": 0}, {"lat": 1, "lon": 0.001}]},
    ]
    return build_graph({"elements": els})


class TestStageDiagnostics:
    def test_connectivity(self):
        net = chain_net()
        assert plan_connectivity(NavigationPlan("", (step(1, 1), step(2, 2))), net) == 100
        assert plan_connectivity(NavigationPlan("", (step(1, 1), step(2, 2), step(3, 3))), net) == 50
        assert plan_connectivity(NavigationPlan("", (step(1, 1), step(2, 1))), net) == 100

    def test_network_adherence(self):
        net = chain_net()
        plan = NavigationPlan("", (step(1, 1, 11, roads=(1, 2)), step(2, 3, 12, roads=(3, 999))))
        assert network_adherence(plan, net) == pytest.approx(500 / 6)
        assert network_adherence(plan, build_graph({"elements": []})) == 0

    def test_geometry_adherence(self):
        verts = [GeoPoint(0, k / 1000) for k in range(9)]
        assert geometry_adherence([verts], [verts], [[]]) == 100
        fake = verts + [GeoPoint(0.5, 0.5)]
        assert geometry_adherence([fake], [verts], [[]]) == 90
        near = [GeoPoint(5e-7, 0.0)]
        assert geometry_adherence([near], [verts], [[]]) == 100

    def test_bearing_error(self):
        a = GeoPoint(0, 0)
        b = destination_point(a, 95.7, 100)
        mean, skipped = bearing_error(["E"], [[a, b]])
        assert mean == pytest.approx(5.7, abs=1e-9) and skipped == 0
        mean, _ = bearing_error(["N"], [[a, destination_point(a, 350, 100)]])
        assert mean == pytest.approx(10, abs=1e-6)
        mean, skipped = bearing_error(["N", None], [[a, a], [a, b]])
        assert mean is None and skipped == 2

    def test_step_gaps(self):
        a = GeoPoint(0, 0)
        b = destination_point(a, 90, 100)
        c = destination_point(b, 90, 500)
        assert step_gap_stats([[a, b], [b, a]]) == (2, 0)
        assert step_gap_stats([[a, b], [c]]) == (2, 1)
        exact = destination_point(b, 0, 200.0)
        gap = haversine_distance(b, exact)
        assert step_gap_stats([[a, b], [exact]], threshold=gap) == (2, 0)


def rec(tid, gap, pot, method="m", region="eu", activity="walking"):
    return EvalRecord(tid, method, gap, region, activity, pot_f1=pot)


class TestAggregate:
    def test_overall_mean(self):
        rows = aggregate([rec("a", "small", 60), rec("b", "large", 40)])
        assert rows == [{**rows[0], "method": "m", "n": 2, "pot_f1": 50.0}]

    def test_partition_by_gap(self):
        records = [rec(str(i), "small" if i % 3 else "large", float(i)) for i in range(30)]
        rows = aggregate(records, ("gap_kind",))
        assert sum(r["n"] for r in rows) == 30
        assert {r["gap_kind"] for r in rows} == {"small", "large"}

    def test_order_independent(self):
        rng = random.Random(3)
        records = [rec(f"t{i}", rng.choice(["small", "large"]), rng.uniform(0, 100), region=rng.choice("abc")) for i in range(200)]
        shuffled = records[:]
        rng.shuffle(shuffled)
        assert aggregate(records, ("region",)) == aggregate(shuffled, ("region",))
        for row in aggregate(records, ("region",)):
            vals = [r.pot_f1 for r in reversed(records) if r.region == row["region"]]
            assert row["pot_f1"] == pytest.approx(sum(vals) / len(vals), rel=1e-9)

    def test_table1_and_csv(self):
        rows = table1([rec("a", "small", 60), rec("b", "large", 40), rec("c", "small", 80)], metrics=("pot_f1",))
        assert rows == [{"method": "m", "pot_f1_small": 70.0, "pot_f1_large": 40.0, "pot_f1_overall": 60.0}]
        text = to_csv(rows)
        assert text.splitlines()[0] == "method,pot_f1_small,pot_f1_large,pot_f1_overall"

    def test_bad_group(self):
        with pytest.raises(ValueError):
            aggregate([], ("colour",))
