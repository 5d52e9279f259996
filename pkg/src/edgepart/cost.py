"""Latency and energy model shared by the planner and the simulator.

Both partitioning levels use the same abstraction: an ordered list of
``Target``s (nodes or processors) with a compute rate and a link rate to a
hub.  At the global level the hub is the leader node itself; at the local
level it is the node's shared memory, which is not a target.  Traffic between
two non-hub targets crosses the hub, so it pays both links.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .cluster import (Cluster, EdgeNode, NodeStatus, default_processor, fastest_processor,
                      node_rate, processor_rate)
from .errors import AvailabilityError, CoverageError, DomainError, RangeError

SHARE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LayerCosts:
    """Prefix-summed per-layer costs of a (possibly sliced and scaled) layer chain.

    ``boundary_bytes[i]`` is the tensor entering layer ``i``; the last entry is the
    chain's output.  Halo bytes are not scaled by a data share: the overlap depends
    on the tensor width, not on how many rows a partition holds.
    """
    prefix_flops: np.ndarray
    boundary_bytes: np.ndarray
    prefix_halo: np.ndarray

    @classmethod
    def from_arrays(cls, flops, out_bytes, in_bytes=0.0, halo=None) -> "LayerCosts":
        flops = np.asarray(flops, dtype=float)
        out_bytes = np.asarray(out_bytes, dtype=float)
        if flops.shape != out_bytes.shape or flops.ndim != 1 or flops.size == 0:
            raise ValueError("flops and out_bytes must be equal-length non-empty vectors")
        halo = np.zeros_like(flops) if halo is None else np.asarray(halo, dtype=float)
        if (flops < 0).any() or (out_bytes < 0).any() or (halo < 0).any() or in_bytes < 0:
            raise DomainError("costs must be non-negative")
        return cls(prefix_flops=np.concatenate([[0.0], np.cumsum(flops)]),
                   boundary_bytes=np.concatenate([[float(in_bytes)], out_bytes]),
                   prefix_halo=np.concatenate([[0.0], np.cumsum(halo)]))

    @property
    def n_layers(self) -> int:
        return self.prefix_flops.size - 1

    @property
    def total_flops(self) -> float:
        return float(self.prefix_flops[-1] - self.prefix_flops[0])

    def block_flops(self, start: int, stop: int) -> float:
        return float(self.prefix_flops[stop] - self.prefix_flops[start])

    def halo_bytes(self, start: int, stop: int) -> float:
        return float(self.prefix_halo[stop] - self.prefix_halo[start])

    def slice(self, start: int, stop: int, share: float = 1.0) -> "LayerCosts":
        if not (0 <= start < stop <= self.n_layers):
            raise RangeError(f"invalid layer range [{start}, {stop})")
        return LayerCosts(
            prefix_flops=(self.prefix_flops[start:stop + 1] - self.prefix_flops[start]) * share,
            boundary_bytes=self.boundary_bytes[start:stop + 1] * share,
            prefix_halo=self.prefix_halo[start:stop + 1] - self.prefix_halo[start])


@dataclass(frozen=True)
class Target:
    id: int
    rate: float   # flops/s
    link: float   # bytes/s to the hub


@dataclass(frozen=True)
class RateContext:
    """Ordered, available resources for one planning problem.

    ``home`` is the id of the target that owns the input and receives the result;
    ``None`` means an external hub (node memory) that is not itself a target.
    """
    targets: tuple[Target, ...]
    home: Optional[int] = None

    def __post_init__(self):
        ids = [t.id for t in self.targets]
        if len(set(ids)) != len(ids):
            raise DomainError(f"duplicate target ids {ids}")
        if self.home is not None and self.home not in ids:
            raise DomainError(f"home {self.home} is not a target")
        for t in self.targets:
            if not (t.rate > 0 and t.link > 0):
                raise DomainError(f"target {t.id}: rate and link must be > 0")
        object.__setattr__(self, "_index", {t.id: t for t in self.targets})

    def target(self, tid: int) -> Target:
        try:
            return self._index[tid]
        except KeyError:
            raise AvailabilityError(f"target {tid} is not available in this context") from None

    @property
    def ids(self) -> list[int]:
        return [t.id for t in self.targets]

    def transfer(self, nbytes: float, src: Optional[int], dst: Optional[int]) -> float:
        """Star-routed transfer time; ``None`` stands for the hub."""
        if src == dst:
            return 0.0
        t = 0.0
        for end in (src, dst):
            if end is None or end == self.home:
                continue
            t += nbytes / self.target(end).link
        return t

    def restrict(self, ids: Sequence[int]) -> "RateContext":
        keep = set(ids)
        home = self.home if self.home in keep else None
        return RateContext(tuple(t for t in self.targets if t.id in keep), home)


class NodeView(str, Enum):
    """How the global planner sees a node's compute capacity."""
    AGGREGATE = "aggregate"   # sum over all processors
    FASTEST = "fastest"       # the single fastest processor
    DEFAULT = "default"       # the framework default (GPU)


def view_rate(node: EdgeNode, delta: float, view: NodeView) -> float:
    if view is NodeView.AGGREGATE:
        return node_rate(node, delta)
    if view is NodeView.FASTEST:
        return processor_rate(fastest_processor(node), delta)
    return processor_rate(default_processor(node), delta)


def global_context(cluster: Cluster, delta: float, leader: int,
                   avail: Optional[Sequence[int]] = None,
                   view: NodeView = NodeView.AGGREGATE) -> RateContext:
    """Available nodes ordered by descending aggregate compute/communication ratio.

    The ordering uses the aggregate rate whatever ``view`` is, so every strategy
    searches over the same node order.
    """
    if avail is None:
        avail = [0 if n.status is NodeStatus.OFFLINE else 1 for n in cluster.nodes]
    nodes = [n for n, a in zip(cluster.nodes, avail) if a or n.id == leader]
    ordered = sorted(nodes, key=lambda n: -node_rate(n, delta) / n.link_rate)
    return RateContext(tuple(Target(n.id, view_rate(n, delta, view), n.link_rate) for n in ordered),
                       home=leader)


def local_context(node: EdgeNode, delta: float) -> RateContext:
    """Processors of one node ordered by descending local compute/communication ratio."""
    ordered = sorted(node.processors, key=lambda p: -processor_rate(p, delta) / p.intra_node_rate)
    return RateContext(tuple(Target(p.id, processor_rate(p, delta), p.intra_node_rate) for p in ordered))


class Mode(str, Enum):
    MODEL = "Model"
    DATA = "Data"


@dataclass(frozen=True)
class BlockAssignment:
    start: int
    stop: int
    target: int


@dataclass(frozen=True)
class DataSplit:
    shares: tuple[float, ...]
    targets: tuple[int, ...]

    @property
    def sigma(self) -> int:
        return len(self.targets)

    @classmethod
    def proportional(cls, targets: Sequence[Target]) -> "DataSplit":
        total = sum(t.rate for t in targets)
        return cls(tuple(t.rate / total for t in targets), tuple(t.id for t in targets))


@dataclass(frozen=True)
class PartitionPlan:
    mode: Mode
    predicted_latency: float
    model_blocks: Optional[tuple[BlockAssignment, ...]] = None
    data_split: Optional[DataSplit] = None

    def __post_init__(self):
        if (self.mode is Mode.MODEL) != (self.model_blocks is not None) or \
                (self.mode is Mode.DATA) != (self.data_split is not None):
            raise ValueError("exactly the field matching the mode must be populated")

    @property
    def targets(self) -> tuple[int, ...]:
        if self.mode is Mode.MODEL:
            return tuple(b.target for b in self.model_blocks)
        return self.data_split.targets


def _check_blocks(blocks: Sequence[BlockAssignment], n: int, ctx: RateContext):
    if not blocks:
        raise CoverageError("empty plan")
    pos = 0
    for b in blocks:
        if b.start != pos or b.stop <= b.start:
            raise CoverageError(f"block [{b.start}, {b.stop}) breaks contiguity at layer {pos}")
        pos = b.stop
        ctx.target(b.target)
    if pos != n:
        raise CoverageError(f"plan covers {pos} of {n} layers")


def model_plan_latency(blocks: Sequence[BlockAssignment], costs: LayerCosts, ctx: RateContext,
                       block_times: Optional[Sequence[float]] = None) -> float:
    """Serial latency of contiguous layer blocks run one after another.

    Each block pays the transfer of its input from the previous holder (the hub
    for the first block), then its compute time; the result returns to the hub.
    ``block_times`` overrides the per-block compute term (used when a block's
    time comes from a nested plan).
    """
    _check_blocks(blocks, costs.n_layers, ctx)
    x = costs.boundary_bytes
    t = 0.0
    prev = None
    for k, b in enumerate(blocks):
        t += ctx.transfer(x[b.start], prev, b.target)
        if block_times is None:
            t += (costs.prefix_flops[b.stop] - costs.prefix_flops[b.start]) / ctx.target(b.target).rate
        else:
            t += block_times[k]
        prev = b.target
    t += ctx.transfer(x[-1], prev, None)
    return float(t)


def _check_split(split: DataSplit, ctx: RateContext):
    if split.sigma == 0 or len(split.shares) != split.sigma:
        raise CoverageError("data split needs one share per target")
    if any(not s > 0 for s in split.shares) or abs(sum(split.shares) - 1.0) > SHARE_TOL:
        raise CoverageError(f"shares must be positive and sum to 1, got {split.shares}")
    if len(set(split.targets)) != split.sigma:
        raise CoverageError("a target may hold only one data partition")
    if split.sigma > len(ctx.targets):
        raise DomainError(f"sigma={split.sigma} exceeds {len(ctx.targets)} available targets")
    for t in split.targets:
        ctx.target(t)


def halo_time(split: DataSplit, p: int, halo: float, ctx: RateContext) -> float:
    """Overlap exchange of partition ``p`` with its neighbours in split order."""
    t = 0.0
    for q in (p - 1, p + 1):
        if 0 <= q < split.sigma:
            t += ctx.transfer(halo, split.targets[p], split.targets[q])
    return t


def data_partition_times(split: DataSplit, costs: LayerCosts, ctx: RateContext,
                         part_times: Optional[Sequence[float]] = None) -> list[float]:
    _check_split(split, ctx)
    n = costs.n_layers
    total = costs.prefix_flops[n] - costs.prefix_flops[0]
    halo = costs.halo_bytes(0, n)
    x_in, x_out = costs.boundary_bytes[0], costs.boundary_bytes[n]
    out = []
    for p, (share, tid) in enumerate(zip(split.shares, split.targets)):
        t = ctx.transfer(share * x_in, None, tid)
        t += share * total / ctx.target(tid).rate if part_times is None else part_times[p]
        t += halo_time(split, p, halo, ctx)
        t += ctx.transfer(share * x_out, tid, None)
        out.append(float(t))
    return out


def data_plan_latency(split: DataSplit, costs: LayerCosts, ctx: RateContext,
                      part_times: Optional[Sequence[float]] = None) -> float:
    """Parallel latency of a spatial split: the slowest partition finishes last."""
    return max(data_partition_times(split, costs, ctx, part_times))


def plan_latency(plan: PartitionPlan, costs: LayerCosts, ctx: RateContext,
                 unit_times: Optional[Sequence[float]] = None) -> float:
    if plan.mode is Mode.MODEL:
        return model_plan_latency(plan.model_blocks, costs, ctx, unit_times)
    return data_plan_latency(plan.data_split, costs, ctx, unit_times)


# -- energy ---------------------------------------------------------------

@dataclass(frozen=True)
class PowerModel:
    active_power: tuple[float, ...]
    idle_power: tuple[float, ...]
    net_energy_per_byte: float = 0.0

    def __post_init__(self):
        if len(self.active_power) != len(self.idle_power):
            raise DomainError("need one active and one idle power per processor")
        if min(self.active_power + self.idle_power, default=0.0) < 0 or self.net_energy_per_byte < 0:
            raise DomainError("power parameters must be non-negative")

    @classmethod
    def for_node(cls, node: EdgeNode, net_energy_per_byte: float = 0.0) -> "PowerModel":
        return cls(tuple(p.active_power for p in node.processors),
                   tuple(p.idle_power for p in node.processors), net_energy_per_byte)


@dataclass
class Timeline:
    horizon: float
    busy: list[list[tuple[float, float]]]   # per processor (start, end) intervals
    link_bytes: list[float] = field(default_factory=list)


def schedule_energy(timeline: Timeline, pm: PowerModel) -> float:
    """Active energy while busy, idle energy otherwise, plus per-byte network energy."""
    if timeline.horizon < 0:
        raise DomainError("negative horizon")
    if len(timeline.busy) != len(pm.active_power):
        raise DomainError("timeline and power model disagree on processor count")
    energy = 0.0
    for intervals, active, idle in zip(timeline.busy, pm.active_power, pm.idle_power):
        busy = 0.0
        for start, end in intervals:
            if end < start:
                raise DomainError(f"negative busy interval ({start}, {end})")
            busy += end - start
        energy += active * busy + idle * (timeline.horizon - busy)
    if any(b < 0 for b in timeline.link_bytes):
        raise DomainError("negative byte count")
    return energy + pm.net_energy_per_byte * sum(timeline.link_bytes)
