"""Quantum Wrapper switching routers and edge nodes.

Core nodes only ever see header and tail octets: they decode, look up
``(in_port, label)``, swap the label, regenerate the tail and hand the very
same payload object on after the delay-line time.  Only an edge node may
unseal a payload, and only once.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .frame_codec import (
    DecodeError,
    EntanglementType,
    HeaderClass,
    HeaderFields,
    QwDatagram,
    ServiceType,
    WavelengthAssignment,
    decode_header,
    decode_tail,
    encode_tail,
    swap_label,
)
from .photonics import (
    Calibration,
    ChannelState,
    CoincidenceStats,
    HeaderMode,
    LinkMetrics,
    coincidence_stats,
    header_ber,
    load_calibration,
    received_power,
)
from .transport import AckKind, AckMessage, on_egress_header

LOCAL_PORT = "local"


class NodeKind(str, enum.Enum):
    EDGE = "edge"
    CORE = "core"


class DropReason(str, enum.Enum):
    NO_ROUTE = "no_route"
    RESERVED_CLASS = "reserved_class"
    CORRUPT = "corrupt"


class MeasurementViolation(RuntimeError):
    """A payload was unsealed somewhere other than once at an edge node."""


class UnknownCircuit(LookupError):
    pass


class LabelCollision(ValueError):
    pass


def _empty_path() -> ChannelState:
    return ChannelState(attenuation_db=0.0, length_km=0.0, wdm_crosstalk_db=-math.inf)


@dataclass(eq=False)
class QuantumPayloadDescriptor:
    """Statistical stand-in for a packet of entangled photons.

    Nodes treat it as an opaque handle.  Links extend ``accumulated_channel``
    as the payload propagates; nothing else changes until an edge unseals it.
    """

    payload_id: str
    entanglement_type: EntanglementType
    duration_us: int
    source_model_ref: str = "default"
    accumulated_channel: ChannelState = field(default_factory=_empty_path)
    sealed: bool = True
    empty: bool = False
    unsealed_by: str | None = None

    def traverse(self, ch: ChannelState) -> None:
        self.accumulated_channel = self.accumulated_channel.compose(ch)

    def unseal(self, node: "QwNode") -> ChannelState:
        if node.kind is not NodeKind.EDGE:
            raise MeasurementViolation(f"{node.node_id} ({node.kind.value}) tried to unseal {self.payload_id}")
        if not self.sealed:
            raise MeasurementViolation(f"{self.payload_id} already unsealed by {self.unsealed_by}")
        self.sealed = False
        self.unsealed_by = node.node_id
        return self.accumulated_channel

    def snapshot(self) -> dict:
        """Fields that must not change between ingress and egress."""
        return {
            "payload_id": self.payload_id,
            "entanglement_type": int(self.entanglement_type),
            "duration_us": self.duration_us,
            "source_model_ref": self.source_model_ref,
            "empty": self.empty,
        }


@dataclass(frozen=True)
class ForwardingEntry:
    in_port: str
    in_label: int
    out_port: str
    out_label: int

    def to_dict(self) -> dict:
        return {"in_port": self.in_port, "in_label": self.in_label,
                "out_port": self.out_port, "out_label": self.out_label}


class ForwardingTable:
    def __init__(self):
        self._entries: dict[tuple[str, int], ForwardingEntry] = {}

    def install(self, entry: ForwardingEntry) -> None:
        key = (entry.in_port, entry.in_label)
        existing = self._entries.get(key)
        if existing is not None and existing != entry:
            raise LabelCollision(f"label {entry.in_label} already bound on port {entry.in_port}")
        self._entries[key] = entry

    def remove(self, in_port: str, in_label: int) -> ForwardingEntry | None:
        return self._entries.pop((in_port, in_label), None)

    def lookup(self, in_port: str, in_label: int) -> ForwardingEntry | None:
        return self._entries.get((in_port, in_label))

    def entries(self) -> list[ForwardingEntry]:
        return sorted(self._entries.values(), key=lambda e: (e.in_port, e.in_label))

    def dump(self) -> list[dict]:
        return [e.to_dict() for e in self.entries()]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries


COUNTER_NAMES = ("forwarded", "delivered", "dropped_no_route", "dropped_reserved_class",
                 "dropped_corrupt", "probes_received")


@dataclass
class SwapModuleState:
    delay_us: float = 102.4
    processing_latency_us: float = 102.4
    counters: dict[str, int] = field(default_factory=lambda: dict.fromkeys(COUNTER_NAMES, 0))

    def __post_init__(self):
        if self.delay_us < self.processing_latency_us:
            raise ValueError("delay line must cover header processing latency")

    @property
    def delay_ns(self) -> int:
        return round(self.delay_us * 1000)


@dataclass
class QwNode:
    node_id: str
    kind: NodeKind = NodeKind.CORE
    table: ForwardingTable = field(default_factory=ForwardingTable)
    swap: SwapModuleState = field(default_factory=SwapModuleState)
    # edge-only state
    circuits: dict[int, str] = field(default_factory=dict)
    calibration: Calibration | None = None
    launch_dbm: float = -21.0
    wavelength_assignment: WavelengthAssignment = WavelengthAssignment.TIME_MULTIPLEXED_SAME_WAVELENGTH
    measurement_integration_s: float = 100.0
    _next_payload: int = 0

    def __post_init__(self):
        self.kind = NodeKind(self.kind)
        self.wavelength_assignment = WavelengthAssignment(self.wavelength_assignment)

    def new_payload_id(self) -> str:
        self._next_payload += 1
        return f"{self.node_id}#{self._next_payload}"

    def counters_dump(self) -> dict[str, int]:
        return dict(self.swap.counters)

    def cal(self) -> Calibration:
        return self.calibration or load_calibration()


@dataclass(frozen=True)
class ForwardDecision:
    out_port: str
    datagram: QwDatagram
    depart_time_ns: int
    entry: ForwardingEntry


@dataclass(frozen=True)
class Drop:
    reason: DropReason


def process_datagram(node: QwNode, in_port: str, dg: QwDatagram, now_ns: int) -> ForwardDecision | Drop:
    """Unwrap, look up, swap and rewrap; the payload handle passes through untouched."""
    counters = node.swap.counters
    try:
        fields = decode_header(dg.header_bits)
        decode_tail(dg.tail_bits, dg.header_bits)
    except DecodeError:
        counters["dropped_corrupt"] += 1
        return Drop(DropReason.CORRUPT)
    if fields.reserved:
        counters["dropped_reserved_class"] += 1
        return Drop(DropReason.RESERVED_CLASS)
    entry = node.table.lookup(in_port, fields.circuit_id)
    if entry is None:
        counters["dropped_no_route"] += 1
        return Drop(DropReason.NO_ROUTE)
    header = swap_label(dg.header_bits, entry.out_label)
    out = QwDatagram(header, dg.payload, encode_tail(header), dg.wavelength_assignment)
    if entry.out_port != LOCAL_PORT:
        counters["forwarded"] += 1
    return ForwardDecision(entry.out_port, out, now_ns + node.swap.delay_ns, entry)


@dataclass(frozen=True)
class ClientRequest:
    dst: str
    entanglement_type: EntanglementType = EntanglementType.POLARIZATION
    duration_us: int = 1130
    qos: int = 0
    tos: ServiceType = ServiceType.NON_REAL_TIME
    priority: int = 0


def edge_ingress(edge: QwNode, request: ClientRequest, circuit_id: int) -> QwDatagram:
    if edge.kind is not NodeKind.EDGE:
        raise ValueError(f"{edge.node_id} is not an edge node")
    if edge.circuits.get(circuit_id) != request.dst:
        raise UnknownCircuit(f"no circuit {circuit_id} to {request.dst!r} at {edge.node_id}")
    payload = QuantumPayloadDescriptor(
        payload_id=edge.new_payload_id(),
        entanglement_type=EntanglementType(request.entanglement_type),
        duration_us=int(request.duration_us),
    )
    fields = HeaderFields(
        header_class=HeaderClass.A,
        circuit_id=circuit_id,
        priority=request.priority,
        payload_duration_us=int(request.duration_us),
        entanglement_type=EntanglementType(request.entanglement_type),
        qos=request.qos,
        tos=ServiceType(request.tos),
    )
    return QwDatagram.wrap(fields, payload, edge.wavelength_assignment)


def header_mode_for(assignment: WavelengthAssignment) -> HeaderMode:
    """Same-wavelength time multiplexing leaves no header light in the payload
    slot; a separate header wavelength leaks through the demultiplexer."""
    if WavelengthAssignment(assignment) is WavelengthAssignment.SEPARATE_WAVELENGTH:
        return HeaderMode.BURST
    return HeaderMode.NONE


@dataclass(frozen=True)
class DeliveredPayload:
    descriptor: QuantumPayloadDescriptor
    measured: LinkMetrics


@dataclass(frozen=True)
class EgressOutcome:
    ack: AckMessage
    delivered: DeliveredPayload | None = None


def _sample_stats(expected: CoincidenceStats, rng: np.random.Generator) -> CoincidenceStats:
    cc = int(rng.poisson(expected.cc_total))
    ac = int(rng.poisson(expected.accidentals))
    if ac == 0:
        return CoincidenceStats(cc, 0, cc, math.inf, math.inf, expected.integration_s, zero_accidentals=True)
    cc = max(cc, ac)
    car = cc / ac
    return CoincidenceStats(cc, ac, cc - ac, car, 10 * math.log10(car), expected.integration_s)


def edge_egress(edge: QwNode, dg: QwDatagram, *, last_hop: ChannelState | None = None,
                rng: np.random.Generator | None = None) -> EgressOutcome:
    """Validate the wrapper, then unseal and measure the payload exactly once.

    The ACK/NACK decision is taken from header and tail bits alone.  Metrics
    are the coincidence statistics an egress analyser accumulates over
    ``measurement_integration_s`` for a flow on this path; with ``rng`` the
    counts are Poisson-sampled instead of expected values.
    """
    payload_id = getattr(dg.payload, "payload_id", None)
    ack = on_egress_header(dg.header_bits, dg.tail_bits, payload_id)
    if ack.kind is AckKind.NACK:
        edge.swap.counters["dropped_corrupt"] += 1
        return EgressOutcome(ack)
    path = dg.payload.unseal(edge)
    cal = edge.cal()
    mode = header_mode_for(dg.wavelength_assignment)
    expected = coincidence_stats(cal.source, cal.detector, path, mode, edge.launch_dbm, cal.duty,
                                 edge.measurement_integration_s)
    measured_stats = _sample_stats(expected, rng) if rng is not None else expected
    hop = last_hop if last_hop is not None else path
    rx_dbm = received_power(edge.launch_dbm, hop)
    metrics = LinkMetrics(header_ber=header_ber(rx_dbm, cal.receiver), received_power_dbm=rx_dbm,
                          stats=measured_stats, attenuation_db=path.attenuation_db)
    edge.swap.counters["delivered"] += 1
    return EgressOutcome(ack, DeliveredPayload(dg.payload, metrics))


def node_dump(node: QwNode) -> dict[str, Any]:
    return {"id": node.node_id, "kind": node.kind.value, "counters": node.counters_dump(),
            "table": node.table.dump()}
