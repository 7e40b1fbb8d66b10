"""
Baselines on a synthetic city
=============================

Drive random routes through a grid city, hide part of each trace, and fill
the hole with the straight-line baseline and with the line map-matched onto
the streets. No network access is needed.
"""

from __future__ import annotations

import random

from trajrec.baselines import linear_baseline, linear_plus_hmm
from trajrec.geo import expanded_bbox
from trajrec.metrics import EvalRecord, aggregate, evaluate
from trajrec.records import Reconstruction
from trajrec.roadnet import GAP_BUFFERS_M, build_graph
from trajrec.synthetic import clip_payload, grid_city, random_route, route_trace
from trajrec.traces import GAP_RANGES, Rejected, filter_trace, make_masked_task

rng = random.Random(7)
city = grid_city(rows=30, cols=30, block_m=100)

# Long routes so even the large gaps fit with context on both sides
tasks = []
for k in range(10):
    raw = route_trace(city, random_route(city, rng, 45), rng, trace_id=f"demo{k}")
    traj = filter_trace(raw)
    if isinstance(traj, Rejected):
        print("rejected", traj)
        continue
    for kind in GAP_RANGES:
        tasks.append(make_masked_task(traj, kind, seed=k))
print(f"{len(tasks)} masked tasks")

# Each task only sees the streets near its gap, as a bbox query would return
records: list[EvalRecord] = []
for task in tasks:
    box = expanded_bbox(task.p_s, task.p_e, GAP_BUFFERS_M[task.gap_kind])
    net = build_graph(clip_payload(city.payload, box))
    for method, out in (("linear", linear_baseline(task)), ("linear-hmm", linear_plus_hmm(task, net))):
        recon = Reconstruction(task.task_id, method, out.points, road_ids=out.road_ids, fallback_flag=out.fallback)
        records.append(evaluate(task, recon, net))

for row in aggregate(records, group_by=("method", "gap_kind")):
    print(f"{row['method']:>11} {row['gap_kind']:>5}  n={row['n']:<3} pot_f1={row['pot_f1']:6.1f}  mae_f1={row['mae_f1']:7.1f} m")
