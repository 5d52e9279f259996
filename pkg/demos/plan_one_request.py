"""Plan one VGG19 request on the bundled cluster and compare every strategy."""
from edgepart import Strategy, bundled_models, default_cluster
from edgepart.harness import plan_strategy

cluster = default_cluster()
model = bundled_models()["VGG19"]

hp = plan_strategy(Strategy.HIDP, model, cluster)
print(f"{model.name}: {model.n_layers} layers, {model.total_flops / 1e9:.1f} GFLOP")
print(f"HiDP global mode {hp.mode.value} over nodes {hp.nodes}")
for unit in hp.units:
    local = hp.locals[unit.node]
    print(f"  unit {unit.index}: node {cluster.node(unit.node).name:7s} layers [{unit.start}, {unit.stop}) "
          f"share {unit.share:.3f} -> local {local.mode.value} on processors {local.targets}")

print()
for s in Strategy:
    print(f"{s.value:14s} {plan_strategy(s, model, cluster).refined_latency * 1e3:8.1f} ms")
