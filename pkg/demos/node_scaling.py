"""Latency of each bundled model as the cluster grows from one to five nodes."""
from edgepart import Strategy, bundled_models, default_cluster
from edgepart.harness import sweep_nodes

points = sweep_nodes(default_cluster(), bundled_models(), range(1, 6), [Strategy.HIDP, Strategy.HYBRID_GLOBAL])
table = {(p.model, p.strategy, p.nodes): p.latency for p in points}
for name in sorted({p.model for p in points}):
    print(name)
    for s in ("HiDP", "HybridGlobal"):
        row = "  ".join(f"{table[(name, s, k)] * 1e3:7.1f}" for k in range(1, 6))
        print(f"  {s:12s} {row}   (ms, 1..5 nodes)")
