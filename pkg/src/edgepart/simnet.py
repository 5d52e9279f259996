"""Deterministic discrete-event simulation of the cluster running the scheduler FSMs.

Links are pure delays (no bandwidth sharing) and every processor serves its
tasks first-come first-served.  Durations come from the same cost helpers the
planner uses, so a request that meets no contention finishes exactly when the
plan says it will, measured from the moment its plan is ready.
"""
from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import protocol as proto
from .cluster import Cluster, NodeStatus, probe_availability, probe_rtt
from .cost import (LayerCosts, Mode, PartitionPlan, PowerModel, RateContext, Timeline,
                   data_partition_times, halo_time, local_context, schedule_energy)
from .dnn import DnnModel
from .errors import DuplicateIdError, ParseError, ProtocolError, ValidationError
from .partitioner import HierPlan, WorkUnit

logger = logging.getLogger(__name__)

DEFAULT_PLANNER_OVERHEAD = 0.015   # seconds charged to the leader per global plan

Planner = Callable[[DnnModel, Cluster, Sequence[int], int], HierPlan]


class EventKind(str, Enum):
    MSG_DELIVERY = "MsgDelivery"
    COMPUTE_DONE = "ComputeDone"
    REQUEST_ARRIVAL = "RequestArrival"
    STATUS_CHANGE = "StatusChange"
    PROBE_TIMEOUT = "ProbeTimeout"
    PLAN_DONE = "PlanDone"       # leader finished running the planner
    HALO_DONE = "HaloDone"       # a data partition finished its overlap exchange


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    target: int = field(compare=False)
    payload: object = field(compare=False, default=None)


@dataclass(frozen=True)
class InferenceRequest:
    id: int
    model: str
    arrival_time: float
    arrival_node: int = 0
    input_hw: Optional[tuple[int, int]] = None    # None keeps the model's own input size

    def __post_init__(self):
        if not 0 <= self.id < 2 ** 32:
            raise ValidationError(f"request id {self.id} does not fit in 32 bits")
        if self.arrival_time < 0:
            raise ValidationError("arrival_time must be >= 0")


@dataclass(frozen=True)
class StatusChange:
    time: float
    node: int
    status: NodeStatus


def transfer_time(nbytes: float, src: int, dst: int, cluster: Cluster, leader: int) -> float:
    """Star-routed delay between two nodes; traffic not touching ``leader`` pays both links."""
    if src == dst:
        return 0.0
    t = 0.0
    for end in (src, dst):
        if end != leader:
            t += nbytes / cluster.node(end).link_rate
    return t


def unit_tasks(local: PartitionPlan, costs: LayerCosts, lctx: RateContext):
    """Processor tasks that realise a local plan.

    Returns ``("serial", tasks)`` for a processor pipeline and
    ``("parallel", tasks)`` for a spatial split, ``tasks`` being
    ``(processor_id, duration)`` pairs.
    """
    if local.mode is Mode.DATA:
        times = data_partition_times(local.data_split, costs, lctx)
        return "parallel", list(zip(local.data_split.targets, times))
    x = costs.boundary_bytes
    tasks, prev = [], None
    for b in local.model_blocks:
        d = lctx.transfer(x[b.start], prev, b.target)
        d += (costs.prefix_flops[b.stop] - costs.prefix_flops[b.start]) / lctx.target(b.target).rate
        tasks.append([b.target, d])
        prev = b.target
    tasks[-1][1] += lctx.transfer(x[-1], prev, None)
    return "serial", [tuple(t) for t in tasks]


@dataclass(frozen=True)
class RequestRecord:
    request_id: int
    model: str
    leader: int
    arrival: float
    exec_start: float
    finish: float
    energy: float
    mode: Mode
    nodes: tuple[int, ...]

    @property
    def latency(self) -> float:
        return self.finish - self.arrival

    @property
    def exec_latency(self) -> float:
        """Time from plan readiness to the merged result; what the planner predicts."""
        return self.finish - self.exec_start


@dataclass(frozen=True)
class SimMetrics:
    horizon: float
    records: tuple[RequestRecord, ...]
    node_energy: tuple[float, ...]
    busy_time: dict
    diagnostics: tuple[str, ...] = ()

    @property
    def completed(self) -> int:
        return len(self.records)

    @property
    def throughput_per_100s(self) -> float:
        return 100.0 * self.completed / self.horizon if self.horizon > 0 else 0.0

    @property
    def mean_latency(self) -> float:
        return sum(r.latency for r in self.records) / self.completed if self.records else 0.0


@dataclass
class _Run:
    request: InferenceRequest
    model: DnnModel
    costs: LayerCosts
    pending_probes: set = field(default_factory=set)
    rtts: dict = field(default_factory=dict)
    probe_time: float = 0.0
    explored: bool = False
    plan: Optional[HierPlan] = None
    exec_start: float = math.nan
    busy: dict = field(default_factory=dict)        # (node, proc) -> [(start, end)]
    sent: dict = field(default_factory=dict)        # node -> bytes sent


class Simulator:
    """Event loop owning every node's leader and follower FSM state."""

    def __init__(self, cluster: Cluster, models: dict, planner: Planner,
                 planner_overhead: float = DEFAULT_PLANNER_OVERHEAD):
        self.cluster = cluster
        self.models = dict(models)
        self.planner = planner
        self.planner_overhead = planner_overhead
        self.now = 0.0
        self.on_complete: list[Callable[["Simulator", RequestRecord], None]] = []
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self._runs: dict[int, _Run] = {}
        self._ids = [n.id for n in cluster.nodes]
        self._leader = {i: proto.LeaderState(i) for i in self._ids}
        self._waiting = {i: deque() for i in self._ids}        # requests queued at a leader
        self._follower = {i: proto.FollowerState(i) for i in self._ids}
        self._inbox = {i: deque() for i in self._ids}          # assignments queued at a follower
        self._proc_queue = {(n.id, p.id): deque() for n in cluster.nodes for p in n.processors}
        self._proc_busy = {k: False for k in self._proc_queue}
        self._intervals = {k: [] for k in self._proc_queue}
        self._sent = {i: 0.0 for i in self._ids}
        self._records: list[RequestRecord] = []
        self._diagnostics: list[str] = []
        self._plan_cache: dict = {}

    # -- public API ---------------------------------------------------------

    def submit_request(self, r: InferenceRequest):
        if r.id in self._runs:
            raise DuplicateIdError(f"request id {r.id} already submitted")
        if r.arrival_time < self.now:
            raise ValidationError(f"request {r.id} arrives at {r.arrival_time} before now={self.now}")
        if r.model not in self.models:
            raise ValidationError(f"unknown model {r.model!r}")
        if r.arrival_node not in self._leader:
            raise ValidationError(f"unknown arrival node {r.arrival_node}")
        model = self.models[r.model]
        if r.input_hw is not None:
            model = model.with_input_size(*r.input_hw)
        self._runs[r.id] = _Run(r, model, model.costs())
        self._schedule(r.arrival_time, EventKind.REQUEST_ARRIVAL, r.arrival_node, r.id)

    def inject_status(self, change: StatusChange):
        self._schedule(change.time, EventKind.STATUS_CHANGE, change.node, NodeStatus(change.status))

    def run(self, horizon: float) -> SimMetrics:
        while self._queue and self._queue[0].time <= horizon:
            ev = heapq.heappop(self._queue)
            self.now = ev.time
            try:
                self._dispatch(ev)
            except ProtocolError as exc:
                self._diagnostics.append(f"t={ev.time:.9f} node {ev.target}: {exc}")
                logger.warning("protocol error: %s", exc)
        return self._metrics(horizon)

    # -- plumbing -----------------------------------------------------------

    def _schedule(self, time, kind, target, payload=None):
        heapq.heappush(self._queue, SimEvent(time, next(self._seq), kind, target, payload))

    def _dispatch(self, ev: SimEvent):
        K = EventKind
        if ev.kind is K.REQUEST_ARRIVAL:
            self._arrive(ev.target, ev.payload)
        elif ev.kind is K.STATUS_CHANGE:
            self.cluster = self.cluster.with_status(ev.target, ev.payload)
        elif ev.kind is K.MSG_DELIVERY:
            self._deliver(ev.target, ev.payload)
        elif ev.kind is K.PROBE_TIMEOUT:
            run = self._runs[ev.payload]
            if not run.explored:
                self._explored(run)
        elif ev.kind is K.PLAN_DONE:
            self._plan_done(self._runs[ev.payload])
        elif ev.kind in (K.COMPUTE_DONE, K.HALO_DONE):
            ev.payload()

    def _send(self, run: _Run, src: int, msg: proto.Message, nbytes: float):
        leader = run.request.arrival_node
        delay = transfer_time(nbytes, src, msg_dst(msg, run), self.cluster, leader)
        self._sent[src] += nbytes
        run.sent[src] = run.sent.get(src, 0.0) + nbytes
        wire = proto.decode_message(proto.encode_message(msg))
        self._schedule(self.now + delay, EventKind.MSG_DELIVERY, msg_dst(msg, run), (run.request.id, wire))

    # -- leader side --------------------------------------------------------

    def _arrive(self, node: int, rid: int):
        if self._leader[node].phase is proto.LeaderPhase.ANALYZE and not self._waiting[node]:
            self._begin(node, rid)
        else:
            self._waiting[node].append(rid)

    def _begin(self, node: int, rid: int):
        run = self._runs[rid]
        state, actions = proto.leader_step(self._leader[node], proto.InferenceRequest(rid, tuple(self._ids)))
        self._leader[node] = state
        run.rtts = {node: 0.0}
        run.probe_time = self.now
        for act in actions:
            peer = self.cluster.node(act.dst)
            run.pending_probes.add(act.dst)
            if peer.status is not NodeStatus.OFFLINE:
                rtt = probe_rtt(peer, self.cluster.probe_base_latency)
                ack = proto.Message(proto.MsgType.STATUS_ACK, rid, act.dst,
                                    proto.StatusAck(0 if peer.status is NodeStatus.AVAILABLE else 1))
                self._schedule(self.now + rtt, EventKind.MSG_DELIVERY, node,
                               (rid, proto.decode_message(proto.encode_message(ack))))
        if run.pending_probes:
            self._schedule(self.now + self.cluster.probe_timeout, EventKind.PROBE_TIMEOUT, node, rid)
        else:
            self._explored(run)

    def _probe_ack(self, run: _Run, msg: proto.Message):
        if run.explored:
            return                       # late reply, already counted as unavailable
        run.rtts[msg.sender] = self.now - run.probe_time
        run.pending_probes.discard(msg.sender)
        if not run.pending_probes:
            self._explored(run)

    def _explored(self, run: _Run):
        run.explored = True
        leader = run.request.arrival_node
        rtts = [run.rtts.get(i) for i in self._ids]
        avail = tuple(probe_availability(self.cluster, rtts))
        state, actions = proto.leader_step(self._leader[leader], proto.ProbeReplies(avail))
        self._leader[leader] = state
        (act,) = actions
        key = (run.model.name, run.model.input_shape, act.availability, leader,
               tuple(n.status for n in self.cluster.nodes))
        if key not in self._plan_cache:
            self._plan_cache[key] = self.planner(run.model, self.cluster, act.availability, leader)
        run.plan = self._plan_cache[key]
        self._schedule(self.now + self.planner_overhead, EventKind.PLAN_DONE, leader, run.request.id)

    def _plan_done(self, run: _Run):
        leader = run.request.arrival_node
        run.exec_start = self.now
        self._leader_actions(run, *proto.leader_step(self._leader[leader], proto.PlanReady(run.plan)))

    def _leader_actions(self, run: _Run, state: proto.LeaderState, actions: list):
        leader = run.request.arrival_node
        self._leader[leader] = state
        rid = run.request.id
        for act in actions:
            if isinstance(act, proto.Send):
                unit = run.plan.units[act.message.payload.block_id]
                self._send(run, leader, act.message, unit.in_bytes)
            elif isinstance(act, proto.RunLocalPlanner):
                # the leader's local plan is part of the precomputed hierarchical plan
                self._leader_actions(run, *proto.leader_step(self._leader[leader], proto.PlanReady(
                    None if act.block_id is None else run.plan.locals[leader])))
            elif isinstance(act, proto.ExecuteLocal):
                unit = run.plan.units[act.block_id]
                self._run_unit(run, unit, lambda res: self._leader_actions(
                    run, *proto.leader_step(self._leader[leader], proto.BlockDone(res))))
            elif isinstance(act, proto.Merge):
                self._leader_actions(run, *proto.leader_step(self._leader[leader], proto.MergeDone()))
            elif isinstance(act, proto.Report):
                self._finish(run)
        state = self._leader[leader]
        if state.phase is proto.LeaderPhase.EXECUTE and state.pending_request == rid and state.all_gathered:
            self._leader_actions(run, *proto.leader_step(state, proto.AllGathered()))

    def _finish(self, run: _Run):
        leader = run.request.arrival_node
        latency = self.now - run.request.arrival_time
        energy = 0.0
        for node in self.cluster.nodes:
            keys = [(node.id, p.id) for p in node.processors]
            if node.id != leader and not any(k in run.busy for k in keys):
                continue
            tl = Timeline(latency, [run.busy.get(k, []) for k in keys], [run.sent.get(node.id, 0.0)])
            energy += schedule_energy(tl, PowerModel.for_node(node, self.cluster.net_energy_per_byte))
        rec = RequestRecord(run.request.id, run.request.model, leader, run.request.arrival_time,
                            run.exec_start, self.now, energy, run.plan.mode, run.plan.nodes)
        self._records.append(rec)
        for hook in self.on_complete:
            hook(self, rec)
        if self._waiting[leader]:
            self._begin(leader, self._waiting[leader].popleft())

    # -- follower side ------------------------------------------------------

    def _deliver(self, node: int, item):
        rid, msg = item
        run = self._runs[rid]
        T = proto.MsgType
        if msg.type is T.STATUS_ACK:
            self._probe_ack(run, msg)
        elif msg.type is T.GLOBAL_ASSIGN:
            if self._follower[node].phase is proto.FollowerPhase.ANALYZE and not self._inbox[node]:
                self._follow(node, run, msg)
            else:
                self._inbox[node].append((run, msg))
        elif msg.type is T.PARTIAL_RESULT:
            leader = run.request.arrival_node
            self._leader_actions(run, *proto.leader_step(self._leader[leader], proto.PartialResultMsg(msg)))
        else:
            raise ProtocolError(f"node {node} cannot handle {msg.type.name}")

    def _follow(self, node: int, run: _Run, msg: proto.Message):
        state, actions = proto.follower_step(self._follower[node], proto.GlobalAssignMsg(msg))
        (plan_act,) = actions
        state, actions = proto.follower_step(state, proto.LocalPlanReady(run.plan.locals[node]))
        self._follower[node] = state
        (exec_act,) = actions
        unit = run.plan.units[exec_act.block_id]
        self._run_unit(run, unit, lambda res: self._follower_done(node, run, unit, res))

    def _follower_done(self, node: int, run: _Run, unit: WorkUnit, res: proto.PartialResult):
        state, actions = proto.follower_step(self._follower[node], proto.ComputeDone(res))
        self._follower[node] = state
        for act in actions:
            self._send(run, node, act.message, unit.out_bytes)
        if self._inbox[node]:
            self._follow(node, *self._inbox[node].popleft())

    # -- execution ----------------------------------------------------------

    def _run_unit(self, run: _Run, unit: WorkUnit, done: Callable[[proto.PartialResult], None]):
        node = self.cluster.node(unit.node)
        lctx = local_context(node, run.model.compute_intensity)
        kind, tasks = unit_tasks(run.plan.locals[unit.node], run.costs.slice(unit.start, unit.stop, unit.share), lctx)
        t0 = self.now

        def finished():
            res = proto.PartialResult(unit.index, unit.rows[0], unit.rows[1],
                                      int(math.ceil(unit.out_bytes)), self.now - t0)
            halo = 0.0
            if run.plan.mode is Mode.DATA:
                gp = run.plan.global_plan
                halo = halo_time(gp.data_split, unit.index, run.costs.halo_bytes(0, run.costs.n_layers),
                                 run.plan.global_ctx)
                run.sent[unit.node] = run.sent.get(unit.node, 0.0) + _halo_bytes(gp, unit.index, run.costs)
            if halo > 0:
                self._schedule(self.now + halo, EventKind.HALO_DONE, unit.node, lambda: done(res))
            else:
                done(res)

        if kind == "serial":
            def step(k):
                if k == len(tasks):
                    finished()
                    return
                proc, d = tasks[k]
                self._submit_task(run, (unit.node, proc), d, lambda: step(k + 1))
            step(0)
        else:
            remaining = [len(tasks)]

            def one_done():
                remaining[0] -= 1
                if remaining[0] == 0:
                    finished()
            for proc, d in tasks:
                self._submit_task(run, (unit.node, proc), d, one_done)

    def _submit_task(self, run: _Run, key, duration: float, callback):
        self._proc_queue[key].append((run, duration, callback))
        if not self._proc_busy[key]:
            self._start_next(key)

    def _start_next(self, key):
        if not self._proc_queue[key]:
            self._proc_busy[key] = False
            return
        run, duration, callback = self._proc_queue[key].popleft()
        self._proc_busy[key] = True
        start = self.now

        def complete():
            interval = (start, self.now)
            self._intervals[key].append(interval)
            run.busy.setdefault(key, []).append(interval)
            self._start_next(key)
            callback()
        self._schedule(start + duration, EventKind.COMPUTE_DONE, key[0], complete)

    # -- metrics ------------------------------------------------------------

    def _metrics(self, horizon: float) -> SimMetrics:
        node_energy = []
        busy_time = {}
        for node in self.cluster.nodes:
            busy = []
            for p in node.processors:
                key = (node.id, p.id)
                clipped = [(s, min(e, horizon)) for s, e in self._intervals[key] if s < horizon]
                busy.append(clipped)
                busy_time[key] = sum(e - s for s, e in clipped)
            tl = Timeline(horizon, busy, [self._sent[node.id]])
            node_energy.append(schedule_energy(tl, PowerModel.for_node(node, self.cluster.net_energy_per_byte)))
        records = tuple(sorted((r for r in self._records if r.finish <= horizon),
                               key=lambda r: r.request_id))
        return SimMetrics(horizon, records, tuple(node_energy), busy_time, tuple(self._diagnostics))


def msg_dst(msg: proto.Message, run: _Run) -> int:
    if msg.type is proto.MsgType.GLOBAL_ASSIGN:
        return run.plan.units[msg.payload.block_id].node
    return run.request.arrival_node


def _halo_bytes(plan: PartitionPlan, p: int, costs: LayerCosts) -> float:
    sigma = plan.data_split.sigma
    return costs.halo_bytes(0, costs.n_layers) * sum(1 for q in (p - 1, p + 1) if 0 <= q < sigma)


# -- workload traces --------------------------------------------------------

def trace_from_list(entries) -> list[InferenceRequest]:
    reqs = []
    try:
        for i, e in enumerate(entries):
            hw = None
            if "input_h" in e or "input_w" in e:
                hw = (int(e["input_h"]), int(e.get("input_w", e["input_h"])))
            reqs.append(InferenceRequest(int(e.get("id", i)), str(e["model"]), float(e["arrival_time"]),
                                         int(e.get("arrival_node", 0)), hw))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ParseError(f"malformed trace entry: {exc}") from None
    return reqs


def load_trace(path: str | Path) -> list[InferenceRequest]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"trace is not valid JSON: {exc}") from None
    if isinstance(doc, dict):
        doc = doc.get("requests")
    if not isinstance(doc, list):
        raise ParseError("trace must be a JSON list of requests")
    return trace_from_list(doc)
