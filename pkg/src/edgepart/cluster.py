"""Hardware model of a heterogeneous edge cluster and its rate vectors."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, LengthError, ParseError, ValidationError

# StatusProbe frame: 11-byte header, empty payload.
PROBE_FRAME_BYTES = 11


class ProcessorKind(str, Enum):
    CPU = "CPU"
    GPU = "GPU"
    NPU = "NPU"


class NodeStatus(str, Enum):
    AVAILABLE = "Available"
    BUSY = "Busy"
    OFFLINE = "Offline"


@dataclass(frozen=True)
class Processor:
    kind: ProcessorKind
    frequency: float          # effective cycles/s
    intra_node_rate: float    # bytes/s to the node's shared memory
    active_power: float = 0.0
    idle_power: float = 0.0
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProcessorKind(self.kind))
        if not self.frequency > 0:
            raise ValidationError("processor frequency must be > 0")
        if not self.intra_node_rate > 0:
            raise ValidationError("processor intra_node_rate must be > 0")
        if not self.active_power >= self.idle_power >= 0:
            raise ValidationError("need active_power >= idle_power >= 0")


@dataclass(frozen=True)
class EdgeNode:
    name: str
    processors: tuple[Processor, ...]
    link_rate: float          # bytes/s to the leader (star topology)
    status: NodeStatus = NodeStatus.AVAILABLE
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "status", NodeStatus(self.status))
        if not self.processors:
            raise ValidationError(f"node {self.name!r} has no processors")
        if not self.link_rate > 0:
            raise ValidationError(f"node {self.name!r}: link_rate must be > 0")
        procs = tuple(replace(p, id=i) if p.id != i else p for i, p in enumerate(self.processors))
        object.__setattr__(self, "processors", procs)


@dataclass(frozen=True)
class Cluster:
    nodes: tuple[EdgeNode, ...]
    probe_timeout: Optional[float] = None
    probe_base_latency: float = 1e-3
    net_energy_per_byte: float = 0.0

    def __post_init__(self):
        if not self.nodes:
            raise ValidationError("cluster has no nodes")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate node ids {ids}")
        if self.probe_timeout is None:
            object.__setattr__(self, "probe_timeout", 3.0 * self.mean_probe_rtt)
        if not self.probe_timeout > 0:
            raise ValidationError("probe_timeout must be > 0")

    @property
    def mean_probe_rtt(self) -> float:
        return float(np.mean([probe_rtt(n, self.probe_base_latency) for n in self.nodes]))

    def node(self, node_id: int) -> EdgeNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def subset(self, count: int) -> "Cluster":
        """First ``count`` nodes, keeping the configured timeout."""
        return replace(self, nodes=self.nodes[:count])

    def with_status(self, node_id: int, status: NodeStatus) -> "Cluster":
        nodes = tuple(replace(n, status=status) if n.id == node_id else n for n in self.nodes)
        return replace(self, nodes=nodes)


def probe_rtt(node: EdgeNode, base_latency: float) -> float:
    return 2.0 * PROBE_FRAME_BYTES / node.link_rate + base_latency


def _check_delta(delta: float):
    if not delta > 0:
        raise DomainError(f"compute intensity must be > 0, got {delta}")


def processor_rate(p: Processor, delta: float) -> float:
    """Computation rate in flops/s: frequency over compute intensity."""
    _check_delta(delta)
    return p.frequency / delta


def node_rate(n: EdgeNode, delta: float) -> float:
    _check_delta(delta)
    return sum(processor_rate(p, delta) for p in n.processors)


def fastest_processor(n: EdgeNode) -> Processor:
    # first one wins ties; the rate order does not depend on delta
    return max(n.processors, key=lambda p: p.frequency)


def default_processor(n: EdgeNode) -> Processor:
    """What a stock framework would pick: the first GPU, else the fastest unit."""
    for p in n.processors:
        if p.kind is ProcessorKind.GPU:
            return p
    return fastest_processor(n)


def local_ratio(n: EdgeNode, delta: float) -> list[float]:
    _check_delta(delta)
    return [processor_rate(p, delta) / p.intra_node_rate for p in n.processors]


def global_ratio(c: Cluster, delta: float) -> list[float]:
    _check_delta(delta)
    return [node_rate(n, delta) / n.link_rate for n in c.nodes]


def probe_availability(c: Cluster, rtts: Sequence[Optional[float]]) -> list[int]:
    """Availability flags from probe round-trip times (``None`` = no reply)."""
    if len(rtts) != len(c.nodes):
        raise LengthError(f"{len(rtts)} rtts for {len(c.nodes)} nodes")
    flags = []
    for node, rtt in zip(c.nodes, rtts):
        ok = rtt is not None and rtt <= c.probe_timeout and node.status is not NodeStatus.OFFLINE
        flags.append(1 if ok else 0)
    return flags


# -- cluster-spec documents -----------------------------------------------

def cluster_from_dict(doc: dict) -> Cluster:
    try:
        nodes = []
        for j, nd in enumerate(doc["nodes"]):
            procs = tuple(
                Processor(kind=ProcessorKind(pd["kind"]),
                          frequency=float(pd["frequency"]),
                          intra_node_rate=float(pd["intra_node_rate"]),
                          active_power=float(pd.get("active_power", 0.0)),
                          idle_power=float(pd.get("idle_power", 0.0)),
                          id=i)
                for i, pd in enumerate(nd["processors"]))
            nodes.append(EdgeNode(name=str(nd["name"]), processors=procs,
                                  link_rate=float(nd["link_rate"]),
                                  status=NodeStatus(nd.get("status", "Available")), id=j))
        timeout = doc.get("probe_timeout")
        return Cluster(nodes=tuple(nodes),
                       probe_timeout=None if timeout is None else float(timeout),
                       probe_base_latency=float(doc.get("probe_base_latency", 1e-3)),
                       net_energy_per_byte=float(doc.get("net_energy_per_byte", 0.0)))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed cluster spec: missing or mistyped field {exc}") from None
    except ValueError as exc:
        if isinstance(exc, (ValidationError, ParseError)):
            raise
        raise ConfigError(f"bad cluster spec value: {exc}") from None


def load_cluster_spec(text: str) -> Cluster:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"cluster spec is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("cluster spec must be a JSON object")
    return cluster_from_dict(doc)


def load_cluster_file(path: str | Path) -> Cluster:
    return load_cluster_spec(Path(path).read_text())


def default_cluster() -> Cluster:
    """The bundled five-device cluster (Orin NX, TX2, Nano, RPi5, RPi4)."""
    text = (resources.files("edgepart") / "data" / "clusters" / "default.json").read_text()
    return load_cluster_spec(text)
