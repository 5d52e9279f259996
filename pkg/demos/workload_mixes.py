"""Throughput of every strategy on the eight progressive-arrival mixes."""
import sys

from edgepart import Strategy, bundled_models, default_cluster
from edgepart.harness import MIXES, run_mix_suite

horizon = float(sys.argv[1]) if len(sys.argv) > 1 else 100.0
report = run_mix_suite(default_cluster(), bundled_models(), MIXES, horizon=horizon)
print(f"{'mix':6s}" + "".join(f"{s.value:>15s}" for s in Strategy))
for mix in MIXES:
    cells = "".join(f"{report.aggregate(mix, s).throughput_per_100s:15.1f}" for s in Strategy)
    print(f"{mix:6s}{cells}")
