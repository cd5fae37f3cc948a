"""Centralised NC&M controller and its out-of-band DCC.

The controller is one logical actor inside the simulator.  It reaches every
node over its own DCC link (star topology).  Over those links it distributes
labels and forwarding entries, collects header-BER telemetry and probe
results, and keeps a per-link state map with alarms.

CAR inference is a model inversion.  It is only as honest as the calibrated
model: a noise source that never reaches the header receiver cannot show up
in the inferred band.  Supervisory probes exist to catch exactly that case.
"""

from __future__ import annotations

import enum
import math
import statistics
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Sequence

import networkx as nx

from .node import LOCAL_PORT, ForwardingEntry, LabelCollision, NodeKind, QwNode, node_dump
from .photonics import (
    Calibration,
    ChannelState,
    HeaderMode,
    LinkMetrics,
    expected_car,
    header_ber,
    noise_count_rate,
    rx_power_for_ber,
)
from .simkit.engine import Simulator, s_to_ns
from .transport import AckKind, AckMessage, NackReason

MAX_LABEL = (1 << 20) - 1


class UnreachablePath(ValueError):
    pass


class NodeTimeout(RuntimeError):
    pass


class InsufficientSamples(LookupError):
    pass


class ProbeLost(RuntimeError):
    pass


class DccKind(str, enum.Enum):
    INSTALL_ENTRY = "InstallEntry"
    REMOVE_ENTRY = "RemoveEntry"
    TELEMETRY_REPORT = "TelemetryReport"
    PROBE_REQUEST = "ProbeRequest"
    PROBE_RESULT = "ProbeResult"
    COUNTER_REPORT = "CounterReport"
    TRANSPORT_ACK = "TransportAck"


DOWN = "down"   # controller -> node
UP = "up"       # node -> controller


@dataclass(frozen=True)
class DccMessage:
    kind: DccKind
    node_id: str
    body: dict
    seq: int
    direction: str = DOWN


@dataclass
class _Pending:
    msg: DccMessage
    attempts: int
    on_acked: Callable[[DccMessage], None] | None
    on_failed: Callable[[DccMessage], None] | None


class DccLink:
    """Reliable, ordered message channel between the controller and one node.

    Each direction has its own sequence space.  Every copy of a message may be
    lost, and so may its acknowledgement.  The sender retransmits after
    ``rto_ns`` until the message is acknowledged or ``max_attempts`` is used
    up.  The receiver delivers in seq order and drops duplicates.
    """

    def __init__(self, sim: Simulator, node_id: str, delay_ns: int, loss_prob: float = 0.0,
                 max_attempts: int = 8, rto_ns: int | None = None):
        self.sim = sim
        self.node_id = node_id
        self.delay_ns = int(delay_ns)
        self.loss_prob = float(loss_prob)
        self.max_attempts = int(max_attempts)
        self.rto_ns = int(rto_ns) if rto_ns is not None else max(4 * self.delay_ns, 1000)
        self.rng = sim.streams.stream(f"dcc:{node_id}")
        self.receivers: dict[str, Callable[[DccMessage], None] | None] = {DOWN: None, UP: None}
        self.node_responsive = True
        self._next_seq = {DOWN: 1, UP: 1}
        self._unacked: dict[str, dict[int, _Pending]] = {DOWN: {}, UP: {}}
        self._expected = {DOWN: 1, UP: 1}
        self._buffer: dict[str, dict[int, DccMessage]] = {DOWN: {}, UP: {}}
        self.delivered_log: dict[str, list[int]] = {DOWN: [], UP: []}
        self.stats = dict(sent=0, transmissions=0, retransmissions=0, lost=0, duplicates=0,
                          delivered=0, failed=0)

    def send(self, direction: str, kind: DccKind, body: dict,
             on_acked: Callable[[DccMessage], None] | None = None,
             on_failed: Callable[[DccMessage], None] | None = None) -> DccMessage:
        seq = self._next_seq[direction]
        self._next_seq[direction] += 1
        msg = DccMessage(DccKind(kind), self.node_id, dict(body), seq, direction)
        self._unacked[direction][seq] = _Pending(msg, 1, on_acked, on_failed)
        self.stats["sent"] += 1
        self._transmit(msg, 1)
        return msg

    def _lost(self) -> bool:
        return self.loss_prob > 0 and self.rng.random() < self.loss_prob

    def _transmit(self, msg: DccMessage, attempt: int) -> None:
        self.stats["transmissions"] += 1
        if self._lost():
            self.stats["lost"] += 1
        else:
            self.sim.schedule(self.delay_ns, self._arrive, msg, label=f"dcc-{msg.direction}:{self.node_id}")
        self.sim.schedule(self.rto_ns, self._check, msg.direction, msg.seq, attempt,
                          label=f"dcc-rto:{self.node_id}")

    def _arrive(self, msg: DccMessage) -> None:
        d = msg.direction
        if d == DOWN and not self.node_responsive:
            return
        if msg.seq < self._expected[d] or msg.seq in self._buffer[d]:
            self.stats["duplicates"] += 1
        else:
            self._buffer[d][msg.seq] = msg
            while self._expected[d] in self._buffer[d]:
                m = self._buffer[d].pop(self._expected[d])
                self._expected[d] += 1
                self.delivered_log[d].append(m.seq)
                self.stats["delivered"] += 1
                handler = self.receivers[d]
                if handler is not None:
                    handler(m)
        if self._lost():
            self.stats["lost"] += 1
        else:
            self.sim.schedule(self.delay_ns, self._ack_arrive, d, msg.seq, label=f"dcc-ack:{self.node_id}")

    def _ack_arrive(self, direction: str, seq: int) -> None:
        pending = self._unacked[direction].pop(seq, None)
        if pending is not None and pending.on_acked is not None:
            pending.on_acked(pending.msg)

    def _check(self, direction: str, seq: int, attempt: int) -> None:
        pending = self._unacked[direction].get(seq)
        if pending is None or pending.attempts != attempt:
            return
        if pending.attempts >= self.max_attempts:
            del self._unacked[direction][seq]
            self.stats["failed"] += 1
            if pending.on_failed is not None:
                pending.on_failed(pending.msg)
            return
        pending.attempts += 1
        self.stats["retransmissions"] += 1
        self._transmit(pending.msg, pending.attempts)

    def unacked(self, direction: str) -> int:
        return len(self._unacked[direction])


# ---------------------------------------------------------------------------
# BER -> CAR inference

@dataclass(frozen=True)
class CarBand:
    car_db: float
    lower_db: float
    upper_db: float            # +inf when the band is open-ended
    attenuation_db: float
    ber_median: float
    samples: int
    ber_floor: bool = False

    def contains(self, car_db: float) -> bool:
        return self.lower_db <= car_db <= self.upper_db

    def to_dict(self) -> dict:
        return {"car_db": self.car_db, "lower_db": self.lower_db,
                "upper_db": None if math.isinf(self.upper_db) else self.upper_db,
                "attenuation_db": self.attenuation_db, "ber_median": self.ber_median,
                "samples": self.samples, "ber_floor": self.ber_floor}


@dataclass(frozen=True)
class LinkModel:
    """What the controller knows about a link from inventory and calibration."""

    link_id: str
    upstream: str
    downstream: str
    channel: ChannelState
    header_mode: HeaderMode
    launch_dbm: float
    bits_per_sample: int

    def car_db_at(self, cal: Calibration, attenuation_db: float) -> float:
        ch = replace(self.channel, attenuation_db=max(0.0, attenuation_db), injected_noise_rate_per_ns=0.0)
        return 10.0 * math.log10(expected_car(cal.source, cal.detector, ch, self.header_mode,
                                              self.launch_dbm, cal.duty))


def _attenuation_for_ber(ber: float, launch_dbm: float, cal: Calibration) -> float:
    ber = min(max(ber, 1e-300), 0.5 - 1e-12)
    return max(0.0, launch_dbm - rx_power_for_ber(ber, cal.receiver))


def infer_car_band(error_counts: Sequence[int], bits_per_sample: int, model: LinkModel, cal: Calibration,
                   *, min_samples: int = 10, delta_floor_db: float = 0.05,
                   floor_errors: float = 3.0) -> CarBand:
    """Invert the calibrated attenuation -> (BER, CAR) family.

    The attenuation estimate comes from the median BER.  The band edges come
    from the extreme samples.  A sample with zero errors only says the BER is
    below the floor, so it bounds attenuation from above and leaves the lower
    end at 0 dB.  When the median sample has no errors the band is open-ended
    above the CAR at the floor.
    """
    n = len(error_counts)
    if n < min_samples:
        raise InsufficientSamples(f"{model.link_id}: {n} BER samples, need {min_samples}")
    bers = [e / bits_per_sample for e in error_counts]
    median = statistics.median(bers)
    floor_ber = floor_errors / bits_per_sample
    att_floor = _attenuation_for_ber(floor_ber, model.launch_dbm, cal)
    if median * bits_per_sample < 1.0:
        lower = model.car_db_at(cal, att_floor)
        return CarBand(lower, lower, math.inf, att_floor, median, n, ber_floor=True)
    att = _attenuation_for_ber(median, model.launch_dbm, cal)
    att_lo = 0.0 if min(error_counts) == 0 else _attenuation_for_ber(min(bers), model.launch_dbm, cal)
    att_hi = _attenuation_for_ber(max(bers), model.launch_dbm, cal)
    car = model.car_db_at(cal, att)
    lower = min(car - delta_floor_db, model.car_db_at(cal, att_hi))
    upper = max(car + delta_floor_db, model.car_db_at(cal, att_lo))
    return CarBand(car, lower, upper, att, median, n)


# ---------------------------------------------------------------------------
# supervisory probes

@dataclass(frozen=True)
class ProbeResult:
    link_id: str
    probe_id: int
    noise_photon_rate_hz: float
    rx_power_dbm: float
    counts: int
    window_s: float

    @property
    def noise_photon_rate_per_ns(self) -> float:
        return self.noise_photon_rate_hz * 1e-9

    def to_dict(self) -> dict:
        return {"link_id": self.link_id, "probe_id": self.probe_id,
                "noise_photon_rate_hz": self.noise_photon_rate_hz, "rx_power_dbm": self.rx_power_dbm,
                "counts": self.counts, "window_s": self.window_s}


def measure_probe(link_id: str, probe_id: int, cal: Calibration, ch: ChannelState, mode: HeaderMode,
                  launch_dbm: float, rng, window_s: float | None = None) -> ProbeResult:
    """Count signal-detector clicks during a probe's empty payload window.

    The reported rate is ``counts/window`` minus the dark-count rate, divided
    by the detector efficiency.  It is a photon rate at the detector input.
    """
    window_s = cal.duty.payload_us * 1e-6 if window_s is None else window_s
    mean = noise_count_rate(cal.source, cal.detector, ch, mode, launch_dbm, cal.duty) * window_s
    counts = rng.poisson(mean)
    rate = max(0.0, (counts / window_s - cal.detector.dark_count_rate_hz) / cal.detector.efficiency)
    return ProbeResult(link_id, probe_id, rate, launch_dbm - ch.attenuation_db, counts, window_s)


# ---------------------------------------------------------------------------
# link-state map and alarms

class Alarm(str, enum.Enum):
    OK = "ok"
    DEGRADED = "degraded"
    BLIND_SPOT_SUSPECTED = "blind_spot_suspected"


@dataclass(frozen=True)
class AlarmThresholds:
    degraded_car_db: float = 6.0
    blind_spot_rate_per_ns: float = 1e-3


@dataclass
class LinkRecord:
    model: LinkModel
    history_len: int = 64
    latest: LinkMetrics | None = None
    ber_history: deque = field(default=None)
    inferred: CarBand | None = None
    probe_noise_rate_hz: float | None = None
    alarm: Alarm = Alarm.OK
    probes_sent: int = 0
    probes_lost: int = 0
    series: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.ber_history is None:
            self.ber_history = deque(maxlen=self.history_len)

    def to_dict(self) -> dict:
        latest = None
        if self.latest is not None:
            latest = {"header_ber": self.latest.header_ber, "received_power_dbm": self.latest.received_power_dbm,
                      "noise_photon_rate_hz": self.latest.noise_photon_rate_hz}
        return {
            "upstream": self.model.upstream,
            "downstream": self.model.downstream,
            "header_mode": self.model.header_mode.value,
            "latest": latest,
            "ber_samples": len(self.ber_history),
            "inferred_car_db": None if self.inferred is None else self.inferred.to_dict(),
            "probe_noise_rate_hz": self.probe_noise_rate_hz,
            "alarm": self.alarm.value,
            "probes_sent": self.probes_sent,
            "probes_lost": self.probes_lost,
        }


LinkStateMap = dict  # link_id -> LinkRecord


def classify(record: LinkRecord, thresholds: AlarmThresholds = AlarmThresholds()) -> Alarm:
    band = record.inferred
    if band is not None and band.upper_db < thresholds.degraded_car_db:
        return Alarm.DEGRADED
    healthy = band is not None and band.upper_db >= thresholds.degraded_car_db
    rate = record.probe_noise_rate_hz
    if healthy and rate is not None and rate * 1e-9 > thresholds.blind_spot_rate_per_ns:
        return Alarm.BLIND_SPOT_SUSPECTED
    return Alarm.OK


def evaluate_alarms(link_map: LinkStateMap, thresholds: AlarmThresholds = AlarmThresholds()) -> list[tuple[str, Alarm]]:
    return [(link_id, classify(link_map[link_id], thresholds)) for link_id in sorted(link_map)]


# ---------------------------------------------------------------------------
# circuits

class CircuitState(str, enum.Enum):
    PENDING = "pending"
    UP = "up"
    FAILED = "failed"
    REMOVED = "removed"


@dataclass
class CircuitHandle:
    circuit_id: int
    path: list[str]
    labels: list[int]                  # label carried on each hop's link
    entries: dict[str, ForwardingEntry]
    state: CircuitState = CircuitState.PENDING
    error: str | None = None
    awaiting: set[str] = field(default_factory=set)
    up_time_ns: int | None = None

    def to_dict(self) -> dict:
        return {"circuit_id": self.circuit_id, "path": list(self.path), "labels": list(self.labels),
                "state": self.state.value, "error": self.error, "up_time_ns": self.up_time_ns,
                "entries": {n: self.entries[n].to_dict() for n in self.path}}


@dataclass(frozen=True)
class ControlConfig:
    probe_period_s: float = 10.0
    probe_offset_s: float | None = None     # default: half a period
    probe_timeout_s: float = 1.0
    telemetry_interval_s: float = 1.0
    anti_entropy_interval_s: float = 1.0
    min_samples: int = 10
    history_len: int = 64
    first_label: int = 16
    dcc_max_attempts: int = 8
    thresholds: AlarmThresholds = AlarmThresholds()


# ---------------------------------------------------------------------------
# node-side DCC endpoint

class NodeAgent:
    """Applies controller commands to a node and reports back over the DCC."""

    def __init__(self, node: QwNode, link: DccLink):
        self.node = node
        self.link = link
        link.receivers[DOWN] = self.handle
        self.on_probe_request: Callable[[str, int], None] | None = None
        self.on_transport_ack: Callable[[AckMessage], None] | None = None
        self.errors: list[str] = []

    def handle(self, msg: DccMessage) -> None:
        body = msg.body
        if msg.kind is DccKind.INSTALL_ENTRY:
            entry = ForwardingEntry(**body["entry"])
            try:
                self.node.table.install(entry)
            except LabelCollision as exc:
                self.errors.append(str(exc))
            if "circuit_dst" in body:
                self.node.circuits[body["circuit_id"]] = body["circuit_dst"]
        elif msg.kind is DccKind.REMOVE_ENTRY:
            self.node.table.remove(body["in_port"], body["in_label"])
            if "circuit_id" in body and body.get("ingress"):
                self.node.circuits.pop(body["circuit_id"], None)
        elif msg.kind is DccKind.PROBE_REQUEST:
            if self.on_probe_request is not None:
                self.on_probe_request(body["link_id"], body["probe_id"])
        elif msg.kind is DccKind.TRANSPORT_ACK:
            if self.on_transport_ack is not None:
                self.on_transport_ack(_ack_from_body(body))

    def send(self, kind: DccKind, body: dict) -> None:
        if self.link.node_responsive:
            self.link.send(UP, kind, body)

    def report_counters(self) -> None:
        self.send(DccKind.COUNTER_REPORT, node_dump(self.node))

    def report_telemetry(self, link_id: str, errors: int, bits: int, rx_dbm: float) -> None:
        self.send(DccKind.TELEMETRY_REPORT, {"link_id": link_id, "errors": errors, "bits": bits,
                                             "rx_dbm": rx_dbm})

    def report_probe(self, result: ProbeResult) -> None:
        self.send(DccKind.PROBE_RESULT, result.to_dict())

    def report_ack(self, ack: AckMessage, in_port: str) -> None:
        """Send an egress ACK/NACK; the controller maps (in_port, label) back to the circuit."""
        self.send(DccKind.TRANSPORT_ACK, {**_ack_to_body(ack), "in_port": in_port})


def _ack_to_body(ack: AckMessage) -> dict:
    return {"kind": ack.kind.value, "circuit_id": ack.circuit_id, "payload_id": ack.payload_id,
            "reason": None if ack.reason is None else ack.reason.value}


def _ack_from_body(body: dict) -> AckMessage:
    reason = body.get("reason")
    return AckMessage(AckKind(body["kind"]), body["circuit_id"], body["payload_id"],
                      None if reason is None else NackReason(reason))


# ---------------------------------------------------------------------------
# controller

class Controller:
    def __init__(self, sim: Simulator, graph: nx.Graph, nodes: dict[str, QwNode], calibration: Calibration,
                 *, links: Iterable[LinkModel] = (), config: ControlConfig = ControlConfig(),
                 dcc_delay_ns: dict[str, int] | int = 50_000, dcc_loss_prob: float = 0.0):
        self.sim = sim
        self.graph = graph
        self.nodes = nodes
        self.cal = calibration
        self.config = config
        self.dcc: dict[str, DccLink] = {}
        self.agents: dict[str, NodeAgent] = {}
        for node_id in sorted(nodes):
            delay = dcc_delay_ns[node_id] if isinstance(dcc_delay_ns, dict) else dcc_delay_ns
            link = DccLink(sim, node_id, delay, dcc_loss_prob, max_attempts=config.dcc_max_attempts)
            link.receivers[UP] = self._on_message
            self.dcc[node_id] = link
            self.agents[node_id] = NodeAgent(nodes[node_id], link)
        self.link_map: LinkStateMap = {}
        for lm in links:
            self.link_map[lm.link_id] = LinkRecord(lm, history_len=config.history_len)
        self.circuits: dict[int, CircuitHandle] = {}
        self.intended: dict[str, dict[tuple[str, int], ForwardingEntry]] = {n: {} for n in nodes}
        self.alarm_log: list[dict] = []
        self.event_log: list[dict] = []
        self.converged: dict[str, bool] = {n: True for n in nodes}
        self._probe_ids = 0
        self._pending_probes: dict[int, str] = {}
        self.probe_results: list[ProbeResult] = []
        self.counter_snapshots: dict[str, dict] = {}

    # -- helpers -----------------------------------------------------------
    @property
    def now_s(self) -> float:
        return self.sim.now / 1e9

    def _log(self, event: str, **fields: Any) -> None:
        self.event_log.append({"t_ns": self.sim.now, "event": event, **fields})

    def _send(self, node_id: str, kind: DccKind, body: dict, **callbacks) -> DccMessage:
        return self.dcc[node_id].send(DOWN, kind, body, **callbacks)

    # -- provisioning ------------------------------------------------------
    def route(self, src: str, dst: str) -> list[str]:
        """Shortest path by hop count; ties resolve deterministically."""
        if src not in self.graph or dst not in self.graph:
            raise UnreachablePath(f"unknown endpoint {src!r} or {dst!r}")
        try:
            return list(nx.shortest_path(self.graph, src, dst))
        except nx.NetworkXNoPath as exc:
            raise UnreachablePath(f"no path {src} -> {dst}") from exc

    def _validate_path(self, path: Sequence[str]) -> None:
        if len(path) < 2:
            raise UnreachablePath("a circuit path needs at least two nodes")
        if len(set(path)) != len(path):
            raise UnreachablePath(f"path {path} revisits a node")
        for n in path:
            if n not in self.nodes:
                raise UnreachablePath(f"unknown node {n!r}")
        for a, b in zip(path, path[1:]):
            if not self.graph.has_edge(a, b):
                raise UnreachablePath(f"{a} and {b} are not adjacent")
        for end in (path[0], path[-1]):
            if self.nodes[end].kind is not NodeKind.EDGE:
                raise UnreachablePath(f"circuit endpoint {end} is not an edge node")

    def _free_label(self, node_id: str, in_port: str) -> int:
        used = {lbl for (port, lbl) in self.intended[node_id] if port == in_port}
        label = self.config.first_label
        while label in used:
            label += 1
        if label > MAX_LABEL:
            raise LabelCollision(f"label space exhausted on {node_id}:{in_port}")
        return label

    def install_circuit(self, path: Sequence[str], circuit_id: int,
                        on_settled: Callable[[CircuitHandle], None] | None = None) -> CircuitHandle:
        """Compute labels, reserve them, and push one entry per hop over the DCC.

        Returns a pending handle; it becomes ``UP`` once every node has
        acknowledged its InstallEntry.  If a node stops acknowledging, the
        handle fails and all entries are rolled back.
        """
        path = list(path)
        self._validate_path(path)
        if not 0 <= circuit_id <= MAX_LABEL:
            raise ValueError(f"circuit_id {circuit_id} outside 20-bit label space")
        if circuit_id in self.circuits and self.circuits[circuit_id].state in (CircuitState.PENDING, CircuitState.UP):
            raise LabelCollision(f"circuit {circuit_id} already provisioned")
        src, first_hop = path[0], path[1]
        for node_id, port in ((src, LOCAL_PORT), (first_hop, src)):
            if (port, circuit_id) in self.intended[node_id]:
                raise LabelCollision(f"label {circuit_id} already bound on {node_id}:{port}")
        labels = [circuit_id]
        for k in range(2, len(path)):
            labels.append(self._free_label(path[k], path[k - 1]))
        entries: dict[str, ForwardingEntry] = {}
        for k, node_id in enumerate(path):
            if k == 0:
                entries[node_id] = ForwardingEntry(LOCAL_PORT, circuit_id, path[1], labels[0])
            elif k == len(path) - 1:
                entries[node_id] = ForwardingEntry(path[k - 1], labels[k - 1], LOCAL_PORT, labels[k - 1])
            else:
                entries[node_id] = ForwardingEntry(path[k - 1], labels[k - 1], path[k + 1], labels[k])
        handle = CircuitHandle(circuit_id, path, labels, entries, awaiting=set(path))
        self.circuits[circuit_id] = handle
        for node_id, e in entries.items():
            self.intended[node_id][(e.in_port, e.in_label)] = e
        self._log("install_circuit", circuit_id=circuit_id, path=path, labels=labels)

        def acked(msg: DccMessage, h=handle):
            h.awaiting.discard(msg.node_id)
            if h.state is CircuitState.PENDING and not h.awaiting:
                h.state = CircuitState.UP
                h.up_time_ns = self.sim.now
                self._log("circuit_up", circuit_id=h.circuit_id)
                if on_settled:
                    on_settled(h)

        def failed(msg: DccMessage, h=handle):
            if h.state is not CircuitState.PENDING:
                return
            h.state = CircuitState.FAILED
            h.error = f"NodeTimeout: {msg.node_id} did not acknowledge {msg.kind.value}"
            self._log("circuit_failed", circuit_id=h.circuit_id, node=msg.node_id)
            self._withdraw(h)
            if on_settled:
                on_settled(h)

        for node_id in path:
            e = entries[node_id]
            body = {"entry": e.to_dict(), "circuit_id": circuit_id}
            if node_id == src:
                body["circuit_dst"] = path[-1]
            self._send(node_id, DccKind.INSTALL_ENTRY, body, on_acked=acked, on_failed=failed)
        return handle

    def _withdraw(self, handle: CircuitHandle) -> None:
        for node_id in handle.path:
            e = handle.entries[node_id]
            self.intended[node_id].pop((e.in_port, e.in_label), None)
            body = {"in_port": e.in_port, "in_label": e.in_label, "circuit_id": handle.circuit_id,
                    "ingress": node_id == handle.path[0]}
            self._send(node_id, DccKind.REMOVE_ENTRY, body)

    def remove_circuit(self, circuit_id: int) -> None:
        handle = self.circuits[circuit_id]
        if handle.state in (CircuitState.UP, CircuitState.PENDING):
            handle.state = CircuitState.REMOVED
            self._withdraw(handle)

    def provision(self, path: Sequence[str], circuit_id: int, timeout_s: float = 10.0) -> CircuitHandle:
        """Synchronous install: run the simulator until the circuit settles."""
        handle = self.install_circuit(path, circuit_id)
        deadline = self.sim.now + s_to_ns(timeout_s)
        while handle.state is CircuitState.PENDING and self.sim.queue and self.sim.queue.peek_time() <= deadline:
            self.sim.run(until_ns=self.sim.queue.peek_time())
        if handle.state is CircuitState.FAILED:
            raise NodeTimeout(handle.error)
        if handle.state is CircuitState.PENDING:
            raise NodeTimeout(f"circuit {circuit_id} still pending after {timeout_s} s")
        return handle

    # -- monitoring --------------------------------------------------------
    def start_monitoring(self) -> None:
        cfg = self.config
        self.sim.schedule(s_to_ns(cfg.anti_entropy_interval_s), self._anti_entropy_tick, label="ctl-anti-entropy")
        offset = cfg.probe_period_s / 2 if cfg.probe_offset_s is None else cfg.probe_offset_s
        for link_id in sorted(self.link_map):
            self.sim.schedule(s_to_ns(offset), self._probe_tick, link_id, label=f"ctl-probe:{link_id}")

    def _anti_entropy_tick(self) -> None:
        for node_id in sorted(self.agents):
            self.agents[node_id].report_counters()
        self.sim.schedule(s_to_ns(self.config.anti_entropy_interval_s), self._anti_entropy_tick,
                          label="ctl-anti-entropy")

    def _probe_tick(self, link_id: str) -> None:
        self.run_supervisory_probe(link_id)
        self.sim.schedule(s_to_ns(self.config.probe_period_s), self._probe_tick, link_id,
                          label=f"ctl-probe:{link_id}")

    def run_supervisory_probe(self, link_id: str) -> int:
        """Ask the link's upstream node to launch a class-B probe; returns the probe id.

        The result comes back asynchronously as a ProbeResult from the
        downstream node.  If nothing arrives within ``probe_timeout_s`` the
        probe is logged as lost.
        """
        record = self.link_map[link_id]
        self._probe_ids += 1
        probe_id = self._probe_ids
        self._pending_probes[probe_id] = link_id
        record.probes_sent += 1
        self._send(record.model.upstream, DccKind.PROBE_REQUEST, {"link_id": link_id, "probe_id": probe_id})
        self.sim.schedule(s_to_ns(self.config.probe_timeout_s), self._probe_timeout, probe_id,
                          label=f"ctl-probe-timeout:{link_id}")
        return probe_id

    def _probe_timeout(self, probe_id: int) -> None:
        link_id = self._pending_probes.pop(probe_id, None)
        if link_id is None:
            return
        self.link_map[link_id].probes_lost += 1
        self._log("probe_lost", link_id=link_id, probe_id=probe_id)

    def infer_quantum_quality(self, link_id: str) -> CarBand:
        record = self.link_map[link_id]
        return infer_car_band(list(record.ber_history), record.model.bits_per_sample, record.model, self.cal,
                              min_samples=self.config.min_samples)

    def _reevaluate(self) -> None:
        for link_id, alarm in evaluate_alarms(self.link_map, self.config.thresholds):
            record = self.link_map[link_id]
            if alarm is not record.alarm:
                self.alarm_log.append({"t_ns": self.sim.now, "link_id": link_id,
                                       "from": record.alarm.value, "to": alarm.value})
                record.alarm = alarm

    # -- inbound DCC -------------------------------------------------------
    def _on_message(self, msg: DccMessage) -> None:
        body = msg.body
        if msg.kind is DccKind.TELEMETRY_REPORT:
            self._on_telemetry(body)
        elif msg.kind is DccKind.PROBE_RESULT:
            self._on_probe_result(body)
        elif msg.kind is DccKind.COUNTER_REPORT:
            self._reconcile(msg.node_id, body)
        elif msg.kind is DccKind.TRANSPORT_ACK:
            self._relay_ack(msg.node_id, body)

    def _on_telemetry(self, body: dict) -> None:
        record = self.link_map.get(body["link_id"])
        if record is None:
            return
        errors, bits = int(body["errors"]), int(body["bits"])
        record.ber_history.append(errors)
        ber = errors / bits
        record.latest = LinkMetrics(header_ber=ber, received_power_dbm=body["rx_dbm"],
                                    noise_photon_rate_hz=record.probe_noise_rate_hz)
        try:
            record.inferred = self.infer_quantum_quality(body["link_id"])
        except InsufficientSamples:
            record.inferred = None
        band = record.inferred
        record.series.append({
            "t_ns": self.sim.now, "kind": "telemetry", "errors": errors, "bits": bits, "ber": ber,
            "rx_dbm": body["rx_dbm"],
            "car_db": None if band is None else band.car_db,
            "car_lower_db": None if band is None else band.lower_db,
            "car_upper_db": None if band is None or math.isinf(band.upper_db) else band.upper_db,
        })
        self._reevaluate()

    def _on_probe_result(self, body: dict) -> None:
        probe_id = body["probe_id"]
        link_id = self._pending_probes.pop(probe_id, None)
        if link_id is None:
            return
        result = ProbeResult(**body)
        self.probe_results.append(result)
        record = self.link_map[link_id]
        record.probe_noise_rate_hz = result.noise_photon_rate_hz
        if record.latest is not None:
            record.latest = replace(record.latest, noise_photon_rate_hz=result.noise_photon_rate_hz)
        record.series.append({"t_ns": self.sim.now, "kind": "probe", "probe_id": probe_id,
                              "noise_photon_rate_hz": result.noise_photon_rate_hz, "counts": result.counts})
        self._reevaluate()

    def _relay_ack(self, egress: str, body: dict) -> None:
        key = (body["in_port"], body["circuit_id"])
        for h in self.circuits.values():
            e = h.entries.get(egress)
            if h.path[-1] == egress and e is not None and (e.in_port, e.in_label) == key:
                relayed = {k: v for k, v in body.items() if k != "in_port"}
                relayed["circuit_id"] = h.circuit_id
                self._send(h.path[0], DccKind.TRANSPORT_ACK, relayed)
                return
        self._log("ack_unroutable", node=egress, payload_id=body["payload_id"])

    def _reconcile(self, node_id: str, dump: dict) -> None:
        """Anti-entropy: push the node's table toward the controller's intent."""
        self.counter_snapshots[node_id] = dump["counters"]
        settled = {}
        pending_keys = set()
        for h in self.circuits.values():
            if node_id in h.entries:
                e = h.entries[node_id]
                if h.state is CircuitState.UP:
                    settled[(e.in_port, e.in_label)] = e
                elif h.state is CircuitState.PENDING:
                    pending_keys.add((e.in_port, e.in_label))
        actual = {(d["in_port"], d["in_label"]): ForwardingEntry(**d) for d in dump["table"]}
        in_sync = True
        for key, e in sorted(settled.items()):
            if actual.get(key) != e:
                in_sync = False
                h = next(c for c in self.circuits.values() if c.entries.get(node_id) == e)
                body = {"entry": e.to_dict(), "circuit_id": h.circuit_id}
                if node_id == h.path[0]:
                    body["circuit_dst"] = h.path[-1]
                self._send(node_id, DccKind.INSTALL_ENTRY, body)
        for key in sorted(actual):
            if key not in settled and key not in pending_keys:
                in_sync = False
                self._send(node_id, DccKind.REMOVE_ENTRY, {"in_port": key[0], "in_label": key[1]})
        if self.converged.get(node_id) != in_sync:
            self._log("table_sync", node=node_id, in_sync=in_sync)
        self.converged[node_id] = in_sync

    # -- export ------------------------------------------------------------
    def intended_table(self, node_id: str) -> list[dict]:
        return [e.to_dict() for _, e in sorted(self.intended[node_id].items())]

    def export(self) -> dict:
        return {
            "circuits": [self.circuits[c].to_dict() for c in sorted(self.circuits)],
            "links": {link_id: self.link_map[link_id].to_dict() for link_id in sorted(self.link_map)},
            "alarm_log": list(self.alarm_log),
            "event_log": list(self.event_log),
            "probe_results": [p.to_dict() for p in self.probe_results],
            "tables_converged": dict(sorted(self.converged.items())),
            "dcc": {n: dict(self.dcc[n].stats) for n in sorted(self.dcc)},
        }


def telemetry_bits_per_sample(cal: Calibration, interval_s: float, bit_rate_hz: float = 1.25e9) -> int:
    """Header bits a downstream receiver checks per telemetry interval."""
    headers = interval_s * 1e6 / cal.duty.period_us
    return int(round(bit_rate_hz * cal.duty.header_us * 1e-6 * headers))


def sample_header_errors(rng, bits: int, rx_dbm: float, cal: Calibration) -> int:
    return rng.binomial(bits, header_ber(rx_dbm, cal.receiver))
