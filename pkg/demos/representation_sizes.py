"""
How big is each road-network prompt?
====================================

Render the same networks in every context format and count
whitespace-delimited tokens. Raw JSON repeats per-vertex structure, the
adjacency list keeps geometry but drops the JSON scaffolding, and the
topology formats drop geometry entirely.
"""

from __future__ import annotations

import sys
from pathlib import Path

from trajrec.roadnet import Representation, build_graph, render_context, token_count

root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(root / "tests"))
from helpers import osm_like_payload, random_network_payload  # noqa: E402

networks = {"melbourne extract": build_graph((root / "tests" / "fixtures" / "appd_network.json").read_bytes())}
for seed in range(3):
    networks[f"osm-like #{seed}"] = build_graph(osm_like_payload(seed))
# every vertex is a junction here, so connection lines outweigh geometry
networks["junction tangle"] = build_graph(random_network_payload(0, n_ways=40))

print(f"{'network':<18}" + "".join(f"{r.value:>20}" for r in Representation))
for name, net in networks.items():
    dest = next(iter(net.roads.values())).geometry[-1]
    print(f"{name:<18}" + "".join(f"{token_count(render_context(net, r, dest)):>20}" for r in Representation))
