"""
Two-stage reconstruction with a recorded model
==============================================

Replays a recorded planner and densifier exchange against a small cycling
network in Melbourne. Swap the stub for a ``ChatProvider`` to query a live
endpoint instead.
"""

from __future__ import annotations

from pathlib import Path

from trajrec import storage
from trajrec.llm import StubProvider, run_two_stage
from trajrec.metrics import evaluate
from trajrec.roadnet import build_graph

fixtures = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
net = build_graph((fixtures / "appd_network.json").read_bytes())
task = storage.load_tasks(fixtures / "appd_task.jsonl")[0]
print(f"task {task.task_id}: {len(task.ground_truth)} hidden points, {len(net.roads)} roads in the extract")

recon = run_two_stage(task, net, StubProvider.from_file(fixtures / "appd_stub.json"))

# Stage 1 output: a route as road ids plus the intersections to turn at
for step in recon.plan.steps:
    print(f"  step {step.index}: {step.direction or '-':>2} road {step.road_id} -> node {step.target_intersection_id}")

# Stage 2 output is snapped onto network vertices before scoring
rec = evaluate(task, recon, net)
print(f"{len(recon.points)} output points, fallback={recon.fallback_flag}")
print(f"pot_f1 {rec.pot_f1:.1f}  mae gr/rg {rec.mae_gr:.2f}/{rec.mae_rg:.2f} m  mae_f1 {rec.mae_f1:.2f} m")
print(f"connectivity {rec.connectivity:.0f}  network adherence {rec.network_adherence:.0f}  geometry adherence {rec.geometry_adherence:.0f}")
print("usage", recon.usage)
