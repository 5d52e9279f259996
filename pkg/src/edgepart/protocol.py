"""Leader/follower run-time scheduler FSMs and their wire messages.

Step functions are pure: ``(state, event) -> (state, actions)``.  They never
touch a clock or a socket; the simulator turns actions into timed events.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from types import MappingProxyType
from typing import Any, Mapping, Optional, Union

from .cost import Mode
from .errors import BusyError, FrameError, IncompleteError, OverlapError, ProtocolError

# -- wire format ------------------------------------------------------------

HEADER = struct.Struct(">BIHI")     # type, request_id, sender, payload_len
HEADER_BYTES = HEADER.size           # 11


class MsgType(IntEnum):
    STATUS_PROBE = 1
    STATUS_ACK = 2
    GLOBAL_ASSIGN = 3
    INTERMEDIATE_DATA = 4
    PARTIAL_RESULT = 5
    FINAL_RESULT = 6


_MODE_CODE = {Mode.MODEL: 0, Mode.DATA: 1}
_CODE_MODE = {v: k for k, v in _MODE_CODE.items()}


@dataclass(frozen=True)
class StatusAck:
    status: int            # 0 available, 1 busy, 2 offline
    _fmt = struct.Struct(">B")

    def pack(self):
        return (self.status,)

    def __post_init__(self):
        if self.status not in (0, 1, 2):
            raise FrameError(f"bad status code {self.status}")


@dataclass(frozen=True)
class GlobalAssign:
    mode: Mode
    block_id: int
    n_blocks: int
    layer_start: int
    layer_stop: int
    row_start: int
    row_stop: int
    share: float
    input_bytes: int
    _fmt = struct.Struct(">BHHHHIIdQ")

    def pack(self):
        return (_MODE_CODE[self.mode], self.block_id, self.n_blocks, self.layer_start,
                self.layer_stop, self.row_start, self.row_stop, self.share, self.input_bytes)

    @classmethod
    def unpack(cls, fields):
        code, *rest = fields
        if code not in _CODE_MODE:
            raise FrameError(f"bad partition mode code {code}")
        return cls(_CODE_MODE[code], *rest)


@dataclass(frozen=True)
class IntermediateData:
    boundary_id: int
    byte_count: int
    _fmt = struct.Struct(">HQ")

    def pack(self):
        return (self.boundary_id, self.byte_count)


@dataclass(frozen=True)
class PartialResult:
    block_id: int
    row_start: int
    row_stop: int
    byte_count: int
    compute_duration: float
    _fmt = struct.Struct(">HIIQd")

    def pack(self):
        return (self.block_id, self.row_start, self.row_stop, self.byte_count, self.compute_duration)


@dataclass(frozen=True)
class FinalResult:
    row_start: int
    row_stop: int
    byte_count: int
    compute_duration: float
    _fmt = struct.Struct(">IIQd")

    def pack(self):
        return (self.row_start, self.row_stop, self.byte_count, self.compute_duration)


Payload = Union[None, StatusAck, GlobalAssign, IntermediateData, PartialResult, FinalResult]

PAYLOAD_TYPES = {
    MsgType.STATUS_PROBE: None,
    MsgType.STATUS_ACK: StatusAck,
    MsgType.GLOBAL_ASSIGN: GlobalAssign,
    MsgType.INTERMEDIATE_DATA: IntermediateData,
    MsgType.PARTIAL_RESULT: PartialResult,
    MsgType.FINAL_RESULT: FinalResult,
}


@dataclass(frozen=True)
class Message:
    type: MsgType
    request_id: int
    sender: int
    payload: Payload = None

    def __post_init__(self):
        object.__setattr__(self, "type", MsgType(self.type))
        cls = PAYLOAD_TYPES[self.type]
        if (cls is None) != (self.payload is None) or (cls and not isinstance(self.payload, cls)):
            raise FrameError(f"{self.type.name} cannot carry {type(self.payload).__name__}")

    @property
    def frame_bytes(self) -> int:
        cls = PAYLOAD_TYPES[self.type]
        return HEADER_BYTES + (cls._fmt.size if cls else 0)


def encode_message(m: Message) -> bytes:
    try:
        body = b"" if m.payload is None else m.payload._fmt.pack(*m.payload.pack())
        return HEADER.pack(int(m.type), m.request_id, m.sender, len(body)) + body
    except struct.error as exc:
        raise FrameError(f"cannot encode {m.type.name}: {exc}") from None


def decode_message(buf: bytes) -> Message:
    buf = bytes(buf)
    if len(buf) < HEADER_BYTES:
        raise FrameError(f"short frame: {len(buf)} bytes")
    code, request_id, sender, length = HEADER.unpack_from(buf)
    try:
        mtype = MsgType(code)
    except ValueError:
        raise FrameError(f"unknown message type {code}") from None
    if len(buf) - HEADER_BYTES != length:
        raise FrameError(f"payload_len {length} but {len(buf) - HEADER_BYTES} bytes follow")
    cls = PAYLOAD_TYPES[mtype]
    expected = cls._fmt.size if cls else 0
    if length != expected:
        raise FrameError(f"{mtype.name} payload must be {expected} bytes, got {length}")
    payload = None
    if cls is not None:
        fields = cls._fmt.unpack_from(buf, HEADER_BYTES)
        payload = cls.unpack(fields) if hasattr(cls, "unpack") else cls(*fields)
    return Message(mtype, request_id, sender, payload)


def merge_results(mode: Mode, partials, n_parts: int, total_rows: int) -> FinalResult:
    """Combine partial results into the request's final result.

    Pipelines only need the last block's output; spatial splits must tile
    ``[0, total_rows)`` exactly once.
    """
    by_block: dict[int, PartialResult] = {}
    for p in partials:
        if p.block_id in by_block:
            raise OverlapError(f"duplicate result for block {p.block_id}")
        by_block[p.block_id] = p
    duration = sum(p.compute_duration for p in by_block.values())
    if Mode(mode) is Mode.MODEL:
        last = by_block.get(n_parts - 1)
        if last is None:
            raise IncompleteError(f"missing result of final block {n_parts - 1}")
        return FinalResult(last.row_start, last.row_stop, last.byte_count, duration)
    missing = set(range(n_parts)) - set(by_block)
    if missing:
        raise IncompleteError(f"missing partitions {sorted(missing)}")
    pos = 0
    for p in sorted(by_block.values(), key=lambda p: (p.row_start, p.row_stop)):
        if p.row_start < pos:
            raise OverlapError(f"rows [{p.row_start}, {p.row_stop}) overlap previous partition")
        if p.row_start > pos:
            raise IncompleteError(f"rows [{pos}, {p.row_start}) not covered")
        pos = p.row_stop
    if pos != total_rows:
        raise IncompleteError(f"rows [{pos}, {total_rows}) not covered")
    return FinalResult(0, total_rows, sum(p.byte_count for p in by_block.values()), duration)


# -- events and actions -------------------------------------------------------

@dataclass(frozen=True)
class InferenceRequest:
    request_id: int
    peers: tuple[int, ...] = ()


@dataclass(frozen=True)
class ProbeReplies:
    availability: tuple[int, ...]


@dataclass(frozen=True)
class PlanReady:
    plan: Any           # HierPlan when leaving GlobalOffload, local plan (or None) in LocalMap


@dataclass(frozen=True)
class BlockDone:
    result: PartialResult


@dataclass(frozen=True)
class PartialResultMsg:
    message: Message


@dataclass(frozen=True)
class AllGathered:
    pass


@dataclass(frozen=True)
class MergeDone:
    pass


@dataclass(frozen=True)
class GlobalAssignMsg:
    message: Message


@dataclass(frozen=True)
class LocalPlanReady:
    plan: Any


@dataclass(frozen=True)
class ComputeDone:
    result: PartialResult


@dataclass(frozen=True)
class Send:
    dst: int
    message: Message


@dataclass(frozen=True)
class RunGlobalPlanner:
    availability: tuple[int, ...]


@dataclass(frozen=True)
class RunLocalPlanner:
    request_id: int
    block_id: Optional[int]     # None: the leader holds no unit of its own


@dataclass(frozen=True)
class ExecuteLocal:
    request_id: int
    block_id: int


@dataclass(frozen=True)
class Merge:
    mode: Mode
    partials: tuple[PartialResult, ...]


@dataclass(frozen=True)
class Report:
    """Hand the merged result to the application."""
    request_id: int
    result: FinalResult


# -- leader -----------------------------------------------------------------

class LeaderPhase(str, Enum):
    ANALYZE = "Analyze"
    EXPLORE = "Explore"
    GLOBAL_OFFLOAD = "GlobalOffload"
    LOCAL_MAP = "LocalMap"
    EXECUTE = "Execute"


@dataclass(frozen=True)
class LeaderState:
    node: int
    phase: LeaderPhase = LeaderPhase.ANALYZE
    pending_request: Optional[int] = None
    outstanding: frozenset = frozenset()                # (node, block) awaiting a result
    gathered: Mapping[int, PartialResult] = field(default_factory=lambda: MappingProxyType({}))
    plan: Any = None
    merging: bool = False
    merged: Optional[FinalResult] = None

    @property
    def all_gathered(self) -> bool:
        return self.plan is not None and len(self.gathered) == len(self.plan.units)


def _invalid(state, ev):
    return ProtocolError(f"{type(ev).__name__} not valid in phase {state.phase.value}")


def _assign_message(state: LeaderState, unit) -> Message:
    plan = state.plan
    payload = GlobalAssign(plan.mode, unit.index, len(plan.units), unit.start, unit.stop,
                           unit.rows[0], unit.rows[1], float(unit.share), int(-(-unit.in_bytes // 1)))
    return Message(MsgType.GLOBAL_ASSIGN, state.pending_request, state.node, payload)


def _issue(state: LeaderState, unit, executing: bool):
    """Actions that hand ``unit`` to its node, plus the updated outstanding set."""
    outstanding = state.outstanding | {(unit.node, unit.index)}
    if unit.node == state.node:
        acts = [ExecuteLocal(state.pending_request, unit.index)] if executing else []
    else:
        acts = [Send(unit.node, _assign_message(state, unit))]
    return outstanding, acts


def _ready_units(plan):
    return plan.units if plan.mode is Mode.DATA else plan.units[:1]


def leader_step(state: LeaderState, ev) -> tuple[LeaderState, list]:
    P = LeaderPhase
    ph = state.phase
    if ph is P.ANALYZE and isinstance(ev, InferenceRequest):
        probes = [Send(dst, Message(MsgType.STATUS_PROBE, ev.request_id, state.node))
                  for dst in ev.peers if dst != state.node]
        return replace(state, phase=P.EXPLORE, pending_request=ev.request_id), probes

    if ph is P.EXPLORE and isinstance(ev, ProbeReplies):
        return replace(state, phase=P.GLOBAL_OFFLOAD), [RunGlobalPlanner(tuple(ev.availability))]

    if ph is P.GLOBAL_OFFLOAD and not state.merging and isinstance(ev, PlanReady):
        plan = ev.plan
        s = replace(state, plan=plan, gathered=MappingProxyType({}), outstanding=frozenset())
        actions, own = [], None
        for unit in _ready_units(plan):
            if unit.node == s.node:
                own = unit
                continue
            out, acts = _issue(s, unit, executing=False)
            s = replace(s, outstanding=out)
            actions += acts
        own_unit = next((u for u in plan.units if u.node == s.node), None)
        actions.append(RunLocalPlanner(s.pending_request, None if own_unit is None else own_unit.index))
        if own is not None:
            s = replace(s, outstanding=s.outstanding | {(own.node, own.index)})
        return replace(s, phase=P.LOCAL_MAP), actions

    if ph is P.LOCAL_MAP and isinstance(ev, PlanReady):
        actions = [ExecuteLocal(state.pending_request, b) for (n, b) in sorted(state.outstanding)
                   if n == state.node]
        return replace(state, phase=P.EXECUTE), actions

    if ph is P.EXECUTE and isinstance(ev, (BlockDone, PartialResultMsg)):
        if isinstance(ev, BlockDone):
            result, sender = ev.result, state.node
        else:
            msg = ev.message
            if msg.type is not MsgType.PARTIAL_RESULT or msg.request_id != state.pending_request:
                raise ProtocolError(f"unexpected {msg.type.name} for request {msg.request_id}")
            result, sender = msg.payload, msg.sender
        key = (sender, result.block_id)
        if key not in state.outstanding:
            raise ProtocolError(f"result for block {result.block_id} from node {sender} was not expected")
        gathered = dict(state.gathered)
        gathered[result.block_id] = result
        s = replace(state, outstanding=state.outstanding - {key}, gathered=MappingProxyType(gathered))
        actions = []
        if s.plan.mode is Mode.MODEL and result.block_id + 1 < len(s.plan.units):
            out, actions = _issue(s, s.plan.units[result.block_id + 1], executing=True)
            s = replace(s, outstanding=out)
        return s, actions

    if ph is P.EXECUTE and isinstance(ev, AllGathered):
        if not state.all_gathered:
            raise ProtocolError("AllGathered before every partial result arrived")
        partials = tuple(state.gathered[k] for k in sorted(state.gathered))
        return replace(state, phase=P.GLOBAL_OFFLOAD, merging=True), [Merge(state.plan.mode, partials)]

    if ph is P.GLOBAL_OFFLOAD and state.merging and isinstance(ev, MergeDone):
        plan = state.plan
        rows = plan.units[-1].rows[1] if plan.mode is Mode.DATA else plan.units[0].rows[1]
        final = merge_results(plan.mode, state.gathered.values(), len(plan.units), rows)
        return LeaderState(state.node), [Report(state.pending_request, final)]

    raise _invalid(state, ev)


# -- follower ---------------------------------------------------------------

class FollowerPhase(str, Enum):
    ANALYZE = "Analyze"
    LOCAL_MAP = "LocalMap"
    EXECUTE = "Execute"


@dataclass(frozen=True)
class FollowerState:
    node: int
    phase: FollowerPhase = FollowerPhase.ANALYZE
    current: Optional[tuple[int, int]] = None      # (request_id, block_id)
    leader: Optional[int] = None
    assignment: Optional[GlobalAssign] = None


def follower_step(state: FollowerState, ev) -> tuple[FollowerState, list]:
    F = FollowerPhase
    if isinstance(ev, GlobalAssignMsg):
        if state.current is not None:
            raise BusyError(f"node {state.node} already holds block {state.current}")
        msg = ev.message
        if msg.type is not MsgType.GLOBAL_ASSIGN:
            raise ProtocolError(f"expected GLOBAL_ASSIGN, got {msg.type.name}")
        a = msg.payload
        s = replace(state, phase=F.LOCAL_MAP, current=(msg.request_id, a.block_id),
                    leader=msg.sender, assignment=a)
        return s, [RunLocalPlanner(msg.request_id, a.block_id)]
    if state.phase is F.LOCAL_MAP and isinstance(ev, LocalPlanReady):
        rid, block = state.current
        return replace(state, phase=F.EXECUTE), [ExecuteLocal(rid, block)]
    if state.phase is F.EXECUTE and isinstance(ev, ComputeDone):
        rid, block = state.current
        if ev.result.block_id != block:
            raise ProtocolError(f"completion for block {ev.result.block_id}, holding {block}")
        msg = Message(MsgType.PARTIAL_RESULT, rid, state.node, ev.result)
        return FollowerState(state.node), [Send(state.leader, msg)]
    raise _invalid(state, ev)
