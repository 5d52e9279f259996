"""Strategies, experiment scenarios and CSV reporting."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .cluster import Cluster, default_processor, fastest_processor
from .cost import NodeView, global_context, local_context
from .dnn import DnnModel, bundled_models, load_model_dir
from .errors import ConfigError, NoTargetError
from .partitioner import (HierPlan, WorkUnit, assemble, best_data_partition, dp_model_partition,
                          hierarchical_partition, leader_only_plan, select_mode,
                          single_processor_plan)
from .simnet import InferenceRequest, SimMetrics, Simulator, StatusChange, load_trace, trace_from_list


class Strategy(str, Enum):
    HIDP = "HiDP"
    DATA_ONLY = "DataOnly"
    MODEL_ONLY = "ModelOnly"
    HYBRID_GLOBAL = "HybridGlobal"
    LEADER_GPU_ONLY = "LeaderGpuOnly"


BASELINES = tuple(s for s in Strategy if s is not Strategy.HIDP)
# baselines that partition across nodes (the leader-only one does not)
PARTITIONING_BASELINES = (Strategy.DATA_ONLY, Strategy.MODEL_ONLY, Strategy.HYBRID_GLOBAL)


def parse_strategy(name: str) -> Strategy:
    for s in Strategy:
        if s.value.lower() == name.lower():
            return s
    raise ConfigError(f"unknown strategy {name!r}; expected one of {[s.value for s in Strategy]}")


def _single_local(cluster: Cluster, model: DnnModel, costs, pick):
    def local_for(u: WorkUnit):
        node = cluster.node(u.node)
        return single_processor_plan(costs.slice(u.start, u.stop, u.share),
                                     local_context(node, model.compute_intensity), pick(node).id)
    return local_for


def plan_strategy(strategy: Strategy, model: DnnModel, cluster: Cluster,
                  avail: Optional[Sequence[int]] = None, leader: int = 0) -> HierPlan:
    """Plan one request under ``strategy``.

    Baselines see each node as its fastest processor at the global level and run
    their share there; the leader-only baseline runs everything on the leader's
    default processor.
    """
    strategy = Strategy(strategy)
    if strategy is Strategy.HIDP:
        return hierarchical_partition(model, cluster, avail, leader)
    if avail is not None and not avail[[n.id for n in cluster.nodes].index(leader)]:
        raise NoTargetError(f"leader {leader} is not available")
    costs = model.costs()
    delta = model.compute_intensity
    if strategy is Strategy.LEADER_GPU_ONLY:
        gctx = global_context(cluster, delta, leader, avail, NodeView.AGGREGATE)
        return assemble(leader_only_plan(costs, gctx), model, costs, gctx,
                        _single_local(cluster, model, costs, default_processor))
    gctx = global_context(cluster, delta, leader, avail, NodeView.FASTEST)
    search = {Strategy.DATA_ONLY: best_data_partition,
              Strategy.MODEL_ONLY: dp_model_partition,
              Strategy.HYBRID_GLOBAL: select_mode}[strategy]
    return assemble(search(costs, gctx), model, costs, gctx,
                    _single_local(cluster, model, costs, fastest_processor))


def planner_for(strategy: Strategy):
    """A simulator planner callable bound to ``strategy``."""
    return partial(plan_strategy, Strategy(strategy))


# -- reports ------------------------------------------------------------------

ROW_FIELDS = ("scenario", "request_id", "model", "strategy", "latency_s", "energy_J", "gflop")
AGG_FIELDS = ("scenario", "strategy", "mean_latency", "total_energy", "throughput_per_100s",
              "gigaflops_per_s")


@dataclass(frozen=True)
class ReportRow:
    scenario: str
    request_id: int
    model: str
    strategy: str
    latency_s: float
    energy_J: float
    gflop: float


@dataclass(frozen=True)
class AggregateRow:
    scenario: str
    strategy: str
    mean_latency: float
    total_energy: float
    throughput_per_100s: float
    gigaflops_per_s: float


@dataclass
class MetricsReport:
    rows: list[ReportRow] = field(default_factory=list)
    horizons: dict = field(default_factory=dict)      # (scenario, strategy) -> seconds

    def add(self, scenario: str, strategy: Strategy, metrics: SimMetrics, models: dict):
        self.horizons[(scenario, Strategy(strategy).value)] = metrics.horizon
        for r in metrics.records:
            self.rows.append(ReportRow(scenario, r.request_id, r.model, Strategy(strategy).value,
                                       r.latency, r.energy, models[r.model].total_flops / 1e9))

    def merge(self, other: "MetricsReport"):
        self.rows += other.rows
        self.horizons.update(other.horizons)
        return self

    def sorted_rows(self) -> list[ReportRow]:
        return sorted(self.rows, key=lambda r: (r.scenario, r.request_id, r.strategy))

    def aggregates(self) -> list[AggregateRow]:
        out = []
        for key in sorted(self.horizons):
            scenario, strategy = key
            rows = [r for r in self.rows if (r.scenario, r.strategy) == key]
            horizon = self.horizons[key]
            lat = [r.latency_s for r in rows]
            busy = sum(lat)
            out.append(AggregateRow(
                scenario, strategy,
                mean_latency=float(np.mean(lat)) if rows else 0.0,
                total_energy=float(sum(r.energy_J for r in rows)),
                throughput_per_100s=100.0 * len(rows) / horizon if horizon > 0 else 0.0,
                gigaflops_per_s=sum(r.gflop for r in rows) / busy if busy > 0 else 0.0))
        return out

    def aggregate(self, scenario: str, strategy: Strategy) -> AggregateRow:
        for a in self.aggregates():
            if (a.scenario, a.strategy) == (scenario, Strategy(strategy).value):
                return a
        raise KeyError((scenario, strategy))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def report_csv(r: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for row in r.sorted_rows():
        w.writerow([_fmt(getattr(row, f)) for f in ROW_FIELDS])
    aggs = r.aggregates()
    if aggs:
        w.writerow([])
        w.writerow(AGG_FIELDS)
        for a in aggs:
            w.writerow([_fmt(getattr(a, f)) for f in AGG_FIELDS])
    return buf.getvalue()


def write_report(r: MetricsReport, path) -> None:
    Path(path).write_text(report_csv(r))


# -- scenarios ----------------------------------------------------------------

DEFAULT_HORIZON = 100.0
ARRIVAL_SPACING = 0.5

# Mixes 1-4 combine two models, mixes 5-8 three.
MIXES = {
    "Mix1": ("EfficientNetB0", "VGG19"),
    "Mix2": ("InceptionNetV3", "ResNet152"),
    "Mix3": ("EfficientNetB0", "ResNet152"),
    "Mix4": ("InceptionNetV3", "VGG19"),
    "Mix5": ("EfficientNetB0", "InceptionNetV3", "ResNet152"),
    "Mix6": ("InceptionNetV3", "ResNet152", "VGG19"),
    "Mix7": ("EfficientNetB0", "ResNet152", "VGG19"),
    "Mix8": ("EfficientNetB0", "InceptionNetV3", "VGG19"),
}


def load_models(model_dir=None) -> dict[str, DnnModel]:
    return bundled_models() if model_dir is None else load_model_dir(model_dir)


def progressive_trace(models: Sequence[str], spacing: float = ARRIVAL_SPACING,
                      horizon: Optional[float] = None, node: int = 0) -> list[InferenceRequest]:
    """Requests every ``spacing`` seconds cycling through ``models``.

    Without a horizon each model is requested once; with one, arrivals continue
    until the horizon.
    """
    if not models:
        return []
    count = len(models) if horizon is None else int(np.floor(horizon / spacing))
    return [InferenceRequest(i, models[i % len(models)], i * spacing, node) for i in range(count)]


def bundled_trace(name: str = "progressive") -> list[InferenceRequest]:
    path = resources.files("edgepart") / "data" / "traces" / f"{name}.json"
    with resources.as_file(path) as p:
        return load_trace(p)


def random_trace(models: Sequence[str], count: int, seed: int, mean_gap: float = ARRIVAL_SPACING,
                 nodes: Sequence[int] = (0,)) -> list[InferenceRequest]:
    """Poisson arrivals of uniformly drawn models on uniformly drawn nodes."""
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.exponential(mean_gap, size=count))
    picks = rng.integers(len(models), size=count)
    where = rng.integers(len(nodes), size=count)
    return [InferenceRequest(i, models[int(picks[i])], float(times[i]), int(nodes[int(where[i])]))
            for i in range(count)]


def simulate(cluster: Cluster, models: dict, trace: Iterable[InferenceRequest], strategy: Strategy,
             horizon: float = DEFAULT_HORIZON, status_changes: Iterable[StatusChange] = (),
             planner_overhead: Optional[float] = None) -> SimMetrics:
    kwargs = {} if planner_overhead is None else {"planner_overhead": planner_overhead}
    sim = Simulator(cluster, models, planner_for(strategy), **kwargs)
    for change in status_changes:
        sim.inject_status(change)
    for req in trace:
        sim.submit_request(req)
    return sim.run(horizon)


def run_scenario(cluster: Cluster, models: dict, trace: Sequence[InferenceRequest],
                 strategies: Iterable[Strategy] = tuple(Strategy), horizon: float = DEFAULT_HORIZON,
                 scenario: str = "trace") -> MetricsReport:
    missing = sorted({r.model for r in trace} - set(models))
    if missing:
        raise ConfigError(f"trace references unknown models {missing}")
    report = MetricsReport()
    for s in strategies:
        report.add(scenario, s, simulate(cluster, models, trace, s, horizon), models)
    return report


def run_mix_suite(cluster: Cluster, models: dict, mixes: Optional[dict] = None,
                  strategies: Iterable[Strategy] = tuple(Strategy),
                  horizon: float = DEFAULT_HORIZON) -> MetricsReport:
    """Progressive arrivals (one request every 0.5 s on node 0) for each mix."""
    mixes = MIXES if mixes is None else mixes
    report = MetricsReport()
    for name, mix in mixes.items():
        trace = progressive_trace(mix, horizon=horizon)
        report.merge(run_scenario(cluster, models, trace, strategies, horizon, scenario=name))
    return report


@dataclass(frozen=True)
class SweepPoint:
    nodes: int
    model: str
    strategy: str
    latency: float
    exec_latency: float


def sweep_nodes(cluster: Cluster, models: dict, sizes: Iterable[int],
                strategies: Iterable[Strategy] = tuple(Strategy)) -> list[SweepPoint]:
    """Single isolated requests per model on the first ``k`` nodes for each ``k``."""
    points = []
    for k in sizes:
        sub = cluster.subset(k)
        for name in sorted(models):
            for s in strategies:
                m = simulate(sub, models, [InferenceRequest(0, name, 0.0, sub.nodes[0].id)], s)
                (rec,) = m.records
                points.append(SweepPoint(k, name, Strategy(s).value, rec.latency, rec.exec_latency))
    return points


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    fields = ("nodes", "model", "strategy", "latency_s", "exec_latency_s")
    w.writerow(fields)
    for p in sorted(points, key=lambda p: (p.nodes, p.model, p.strategy)):
        w.writerow([p.nodes, p.model, p.strategy, _fmt(p.latency), _fmt(p.exec_latency)])
    return buf.getvalue()


def isolated_latencies(cluster: Cluster, models: dict, strategies: Iterable[Strategy] = tuple(Strategy),
                       leader: int = 0) -> dict:
    """``{(strategy, model): SimMetrics record}`` for one request of each model run alone."""
    out = {}
    for name in sorted(models):
        for s in strategies:
            (rec,) = simulate(cluster, models, [InferenceRequest(0, name, 0.0, leader)], s).records
            out[(Strategy(s), name)] = rec
    return out
