"""Partition search: cut-point DP, data-split enumeration, mode selection and the
two-level (node, then processor) refinement.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cluster import Cluster, EdgeNode, default_processor, fastest_processor
from .cost import (BlockAssignment, DataSplit, LayerCosts, Mode, NodeView, PartitionPlan,
                   RateContext, data_plan_latency, global_context, local_context,
                   model_plan_latency, plan_latency)
from .dnn import DnnModel
from .errors import NoTargetError, SizeError

logger = logging.getLogger(__name__)

BRUTE_MAX_LAYERS = 12
BRUTE_MAX_TARGETS = 4
# beyond this many available nodes the data-mode search keeps only top-sigma subsets
SUBSET_SEARCH_MAX_NODES = 6


def _transfer_vec(ctx: RateContext, x: np.ndarray, src, dst) -> np.ndarray:
    # must add the legs in the same order as RateContext.transfer
    if src == dst:
        return np.zeros_like(x)
    t = np.zeros_like(x)
    for end in (src, dst):
        if end is None or end == ctx.home:
            continue
        t = t + x / ctx.target(end).link
    return t


def _block_matrix(prefix: np.ndarray) -> np.ndarray:
    """``F[c, i]`` = flops of layers ``[c, i)``; ``inf`` where the block is empty."""
    F = prefix[None, :] - prefix[:, None]
    F[np.tril_indices(prefix.size)] = np.inf
    return F


def _chain_dp(block_cost: Sequence[np.ndarray], x: np.ndarray, ctx: RateContext):
    """Cheapest chain of contiguous blocks over an ordered subsequence of targets.

    ``block_cost[j][c, i]`` is the time target ``j`` needs for layers ``[c, i)``.
    ``G[i, j]`` holds the best time to finish layers ``[0, i)`` with the last
    block on target ``j``; each target is used at most once, in context order.
    """
    ids = ctx.ids
    m = len(ids)
    n = x.size - 1
    G = np.full((n + 1, m), np.inf)
    from_j = np.full((n + 1, m), -1, dtype=int)
    from_c = np.zeros((n + 1, m), dtype=int)
    for j, tj in enumerate(ids):
        L = block_cost[j]
        G[:, j] = ctx.transfer(x[0], None, tj) + L[0, :]
        for jp in range(j):
            S = (G[:, jp] + _transfer_vec(ctx, x, ids[jp], tj))[:, None] + L
            c_best = np.argmin(S, axis=0)
            vals = S[c_best, np.arange(n + 1)]
            better = vals < G[:, j]
            G[better, j] = vals[better]
            from_j[better, j] = jp
            from_c[better, j] = c_best[better]
    totals = [G[n, j] + ctx.transfer(x[n], tj, None) for j, tj in enumerate(ids)]
    j = int(np.argmin(totals))
    best = float(totals[j])
    blocks = []
    i = n
    while True:
        jp = from_j[i, j]
        c = 0 if jp < 0 else int(from_c[i, j])
        blocks.append(BlockAssignment(c, i, ids[j]))
        if jp < 0:
            break
        i, j = c, jp
    return best, tuple(reversed(blocks))


def _require_targets(ctx: RateContext):
    if not ctx.targets:
        raise NoTargetError("no available target")


def dp_model_partition(costs: LayerCosts, ctx: RateContext) -> PartitionPlan:
    """Optimal layer-block pipeline over the context's targets, in context order."""
    _require_targets(ctx)
    F = _block_matrix(costs.prefix_flops)
    value, blocks = _chain_dp([F / t.rate for t in ctx.targets], costs.boundary_bytes, ctx)
    latency = model_plan_latency(blocks, costs, ctx)
    return PartitionPlan(Mode.MODEL, latency, model_blocks=blocks)


def _top_rate(ctx: RateContext, sigma: int):
    # stable: among equal rates the earlier target wins; keep context order
    ranked = sorted(range(len(ctx.targets)), key=lambda k: -ctx.targets[k].rate)[:sigma]
    return [ctx.targets[k] for k in sorted(ranked)]


def best_data_partition(costs: LayerCosts, ctx: RateContext) -> PartitionPlan:
    """Try sigma = 1..|targets| rate-proportional splits over the fastest targets."""
    _require_targets(ctx)
    best = None
    for sigma in range(1, len(ctx.targets) + 1):
        split = DataSplit.proportional(_top_rate(ctx, sigma))
        lat = data_plan_latency(split, costs, ctx)
        if best is None or lat < best.predicted_latency:
            best = PartitionPlan(Mode.DATA, lat, data_split=split)
    return best


def select_mode(costs: LayerCosts, ctx: RateContext) -> PartitionPlan:
    """The faster of the best model-mode and data-mode plans; ties go to data mode."""
    model = dp_model_partition(costs, ctx)
    data = best_data_partition(costs, ctx)
    return data if data.predicted_latency <= model.predicted_latency else model


def brute_force_partition(costs: LayerCosts, ctx: RateContext, mode: Mode) -> PartitionPlan:
    """Exhaustive reference search for small instances.

    Model mode enumerates every cut set and every ordered target subsequence.
    Data mode enumerates every target subset in every order with rate-proportional
    shares, which is a superset of what ``best_data_partition`` explores.
    """
    n, m = costs.n_layers, len(ctx.targets)
    if n > BRUTE_MAX_LAYERS or m > BRUTE_MAX_TARGETS:
        raise SizeError(f"brute force limited to {BRUTE_MAX_LAYERS} layers and "
                        f"{BRUTE_MAX_TARGETS} targets, got {n} and {m}")
    _require_targets(ctx)
    best = None
    if Mode(mode) is Mode.MODEL:
        for r in range(1, min(n, m) + 1):
            for cuts in itertools.combinations(range(1, n), r - 1):
                bounds = (0,) + cuts + (n,)
                for tgts in itertools.combinations(ctx.ids, r):
                    blocks = tuple(BlockAssignment(bounds[k], bounds[k + 1], tgts[k]) for k in range(r))
                    lat = model_plan_latency(blocks, costs, ctx)
                    if best is None or lat < best.predicted_latency:
                        best = PartitionPlan(Mode.MODEL, lat, model_blocks=blocks)
    else:
        for sigma in range(1, m + 1):
            for tgts in itertools.permutations(ctx.targets, sigma):
                split = DataSplit.proportional(tgts)
                lat = data_plan_latency(split, costs, ctx)
                if best is None or lat < best.predicted_latency:
                    best = PartitionPlan(Mode.DATA, lat, data_split=split)
    return best


# -- local (processor-level) planning ---------------------------------------

def local_cost_table(costs: LayerCosts, ctx: RateContext) -> np.ndarray:
    """Best local latency of every layer slice ``[c, i)`` at full share.

    Covers the same space as ``select_mode`` on each slice: ordered processor
    pipelines plus rate-proportional splits over the fastest processors.  The
    pipeline part uses a running minimum over the cut point, which is valid
    because a processor's rate is the same for every layer.
    """
    P = costs.prefix_flops
    x = costs.boundary_bytes
    H = costs.prefix_halo
    N = P.size
    F = _block_matrix(P)
    valid = np.isfinite(F)
    tg = ctx.targets
    k = len(tg)
    E = []
    for p, t in enumerate(tg):
        Ep = x[:, None] / t.link + F / t.rate
        for pp in range(p):
            A = E[pp] + (x / tg[pp].link + x / t.link)[None, :] - (P / t.rate)[None, :]
            M = np.minimum.accumulate(A, axis=1)
            excl = np.full_like(M, np.inf)
            excl[:, 1:] = M[:, :-1]
            Ep = np.minimum(Ep, excl + (P / t.rate)[None, :])
        Ep[~valid] = np.inf
        E.append(Ep)
    best = np.full((N, N), np.inf)
    for p, t in enumerate(tg):
        best = np.minimum(best, E[p] + (x / t.link)[None, :])

    halo = H[None, :] - H[:, None]
    for sigma in range(1, k + 1):
        chosen = _top_rate(ctx, sigma)
        split = DataSplit.proportional(chosen)
        worst = np.zeros((N, N))
        for p, (share, t) in enumerate(zip(split.shares, chosen)):
            tp = (share * x)[:, None] / t.link + share * F / t.rate
            for q in (p - 1, p + 1):
                if 0 <= q < sigma:
                    tp = tp + halo / t.link + halo / chosen[q].link
            tp = tp + (share * x)[None, :] / t.link
            worst = np.maximum(worst, tp)
        best = np.minimum(best, worst)
    best[~valid] = np.inf
    return best


def single_processor_plan(costs: LayerCosts, ctx: RateContext, proc: int) -> PartitionPlan:
    blocks = (BlockAssignment(0, costs.n_layers, proc),)
    return PartitionPlan(Mode.MODEL, model_plan_latency(blocks, costs, ctx), model_blocks=blocks)


class LocalPlanner:
    """Processor-level planner for one node, with per-slice caching.

    Pipeline block choices do not depend on the data share (every cost term of
    a pipeline scales linearly with it), so they are searched once per layer
    range at full share and re-evaluated for other shares.
    """

    def __init__(self, node: EdgeNode, delta: float, costs: LayerCosts):
        self.node = node
        self.ctx = local_context(node, delta)
        self.costs = costs
        self._blocks: dict[tuple[int, int], tuple[BlockAssignment, ...]] = {}
        self._plans: dict[tuple[int, int, float], PartitionPlan] = {}
        self._table: Optional[np.ndarray] = None

    @property
    def table(self) -> np.ndarray:
        if self._table is None:
            self._table = local_cost_table(self.costs, self.ctx)
        return self._table

    def _pipeline(self, start: int, stop: int):
        key = (start, stop)
        if key not in self._blocks:
            self._blocks[key] = dp_model_partition(self.costs.slice(start, stop), self.ctx).model_blocks
        return self._blocks[key]

    def plan(self, start: int, stop: int, share: float = 1.0) -> PartitionPlan:
        key = (start, stop, share)
        if key not in self._plans:
            sl = self.costs.slice(start, stop, share)
            blocks = self._pipeline(start, stop)
            model = PartitionPlan(Mode.MODEL, model_plan_latency(blocks, sl, self.ctx), model_blocks=blocks)
            data = best_data_partition(sl, self.ctx)
            best = data if data.predicted_latency <= model.predicted_latency else model
            # the pipeline was searched at full share; re-check the one-processor
            # plans at this share so rounding can never let them beat the choice
            for proc in {fastest_processor(self.node).id, default_processor(self.node).id}:
                single = single_processor_plan(sl, self.ctx, proc)
                if single.predicted_latency < best.predicted_latency:
                    best = single
            self._plans[key] = best
        return self._plans[key]


# -- hierarchical plans ------------------------------------------------------

@dataclass(frozen=True)
class WorkUnit:
    """One node's share of a request: a layer range at a data share."""
    index: int
    node: int
    start: int
    stop: int
    share: float
    rows: tuple[int, int]
    in_bytes: float
    out_bytes: float


def work_units(plan: PartitionPlan, costs: LayerCosts, height: int) -> tuple[WorkUnit, ...]:
    x = costs.boundary_bytes
    n = costs.n_layers
    if plan.mode is Mode.MODEL:
        return tuple(WorkUnit(k, b.target, b.start, b.stop, 1.0, (0, height),
                              float(x[b.start]), float(x[b.stop]))
                     for k, b in enumerate(plan.model_blocks))
    split = plan.data_split
    edges = np.rint(np.concatenate([[0.0], np.cumsum(split.shares)]) * height).astype(int)
    edges[-1] = height
    return tuple(WorkUnit(k, t, 0, n, s, (int(edges[k]), int(edges[k + 1])),
                          float(s * x[0]), float(s * x[n]))
                 for k, (s, t) in enumerate(zip(split.shares, split.targets)))


@dataclass(frozen=True)
class HierPlan:
    leader: int
    global_plan: PartitionPlan
    units: tuple[WorkUnit, ...]
    locals: dict          # node id -> PartitionPlan over that node's processors
    refined_latency: float
    global_ctx: RateContext = field(repr=False, compare=False)

    @property
    def mode(self) -> Mode:
        return self.global_plan.mode

    @property
    def nodes(self) -> tuple[int, ...]:
        return tuple(u.node for u in self.units)


def refine(global_plan: PartitionPlan, costs: LayerCosts, gctx: RateContext,
           local_plans: dict) -> float:
    """Latency of a global plan when each node runs its unit with ``local_plans``."""
    times = [local_plans[t].predicted_latency for t in global_plan.targets]
    return plan_latency(global_plan, costs, gctx, times)


def assemble(global_plan: PartitionPlan, model: DnnModel, costs: LayerCosts, gctx: RateContext,
             local_for) -> HierPlan:
    """Attach a local plan to every unit (``local_for(unit) -> PartitionPlan``)."""
    units = work_units(global_plan, costs, model.input_shape.height)
    locals_ = {u.node: local_for(u) for u in units}
    return HierPlan(gctx.home, global_plan, units, locals_,
                    refine(global_plan, costs, gctx, locals_), gctx)


def _data_candidates(gctx: RateContext, costs: LayerCosts):
    m = len(gctx.targets)
    if m <= SUBSET_SEARCH_MAX_NODES:
        groups = (c for r in range(1, m + 1) for c in itertools.combinations(gctx.targets, r))
    else:
        groups = (_top_rate(gctx, r) for r in range(1, m + 1))
    for group in groups:
        split = DataSplit.proportional(group)
        yield PartitionPlan(Mode.DATA, data_plan_latency(split, costs, gctx), data_split=split)


def leader_only_plan(costs: LayerCosts, gctx: RateContext) -> PartitionPlan:
    blocks = (BlockAssignment(0, costs.n_layers, gctx.home),)
    return PartitionPlan(Mode.MODEL, model_plan_latency(blocks, costs, gctx), model_blocks=blocks)


def hierarchical_partition(model: DnnModel, cluster: Cluster, avail: Optional[Sequence[int]] = None,
                           leader: int = 0) -> HierPlan:
    """Two-level plan: global split over available nodes, refined per node over processors.

    The global pipeline search scores each candidate block by the node's best
    local plan for it, so block sizes follow core-level capacity.  Data-mode
    splits over every node subset, and the flat plans a single-level planner
    would pick under aggregate or fastest-processor capacity, are refined the
    same way; the lowest refined latency wins.
    """
    if avail is not None and not avail[[n.id for n in cluster.nodes].index(leader)]:
        raise NoTargetError(f"leader {leader} is not available")
    delta = model.compute_intensity
    costs = model.costs()
    agg = global_context(cluster, delta, leader, avail, NodeView.AGGREGATE)
    fast = global_context(cluster, delta, leader, avail, NodeView.FASTEST)
    _require_targets(agg)
    planners = {t.id: LocalPlanner(cluster.node(t.id), delta, costs) for t in agg.targets}

    def local_for(u: WorkUnit) -> PartitionPlan:
        return planners[u.node].plan(u.start, u.stop, u.share)

    _, blocks = _chain_dp([planners[t.id].table for t in agg.targets], costs.boundary_bytes, agg)
    hier = PartitionPlan(Mode.MODEL, model_plan_latency(blocks, costs, agg), model_blocks=blocks)

    candidates = [(hier, agg),
                  (best_data_partition(costs, agg), agg),
                  (dp_model_partition(costs, agg), agg),
                  (dp_model_partition(costs, fast), fast),
                  (best_data_partition(costs, fast), fast),
                  (leader_only_plan(costs, agg), agg)]
    candidates += [(p, agg) for p in _data_candidates(agg, costs)]
    candidates += [(p, fast) for p in _data_candidates(fast, costs)]

    best = None
    for plan, gctx in candidates:
        hp = assemble(plan, model, costs, gctx, local_for)
        if best is None or hp.refined_latency < best.refined_latency:
            best = hp
    logger.debug("%s: %s plan over nodes %s, refined %.6g s", model.name, best.mode.value,
                 best.nodes, best.refined_latency)
    return best
