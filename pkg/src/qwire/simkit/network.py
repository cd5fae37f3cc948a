"""Event-driven network of Quantum Wrapper nodes under one controller.

Datagram life cycle: a client request enters an ingress edge, which wraps
it, waits out the swap delay line, queues on an output port and serialises
for one header+payload slot.  The datagram then crosses the fibre and is
processed hop by hop.  At the egress edge it is unsealed once and
acknowledged through the controller.

Random streams are separated by purpose, so changing one impairment leaves
every other draw unchanged.  Telemetry, link loss, probes, egress
measurements and the DCC each have their own streams.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any

from ..control import (
    AlarmThresholds,
    ControlConfig,
    Controller,
    LinkModel,
    measure_probe,
    sample_header_errors,
    telemetry_bits_per_sample,
)
from ..frame_codec import (
    HEADER_OCTETS,
    TAIL_OCTETS,
    DecodeError,
    EntanglementType,
    HeaderClass,
    HeaderFields,
    QwDatagram,
    WavelengthAssignment,
    decode_header,
)
from ..node import (
    LOCAL_PORT,
    ClientRequest,
    Drop,
    NodeKind,
    QuantumPayloadDescriptor,
    QwNode,
    edge_egress,
    edge_ingress,
    header_mode_for,
    process_datagram,
)
from ..photonics import Calibration, ChannelState, header_ber, load_calibration, received_power
from ..transport import AckKind, AckMessage, RequestState, SenderWindow, TimeoutAction
from .engine import Simulator, s_to_ns, us_to_ns
from .scenario import CircuitSpec, Scenario

PROPAGATION_NS_PER_KM = 5_000
WRAPPER_BITS = 8 * (HEADER_OCTETS + TAIL_OCTETS)


def resolve_calibration(spec: Any) -> Calibration:
    if spec is None:
        return load_calibration()
    if isinstance(spec, str):
        return load_calibration(spec)
    return Calibration.from_dict(spec)


@dataclass
class LinkRuntime:
    link_id: str
    a: str
    b: str
    channel: ChannelState
    dcc_delay_ns: int
    header_loss_prob: float

    @property
    def propagation_ns(self) -> int:
        return round(self.channel.length_km * PROPAGATION_NS_PER_KM)

    def other(self, node_id: str) -> str:
        return self.b if node_id == self.a else self.a


@dataclass
class PortQueue:
    node_id: str
    port: str
    heap: list = field(default_factory=list)
    busy: bool = False
    transmitted: int = 0


@dataclass
class Ledger:
    """Class-A payload accounting: every injected payload ends in exactly one bucket."""

    injected: int = 0
    delivered: int = 0
    dropped: dict[str, int] = field(default_factory=lambda: {"no_route": 0, "reserved_class": 0, "corrupt": 0})
    lost_on_link: int = 0
    live: set = field(default_factory=set)

    def terminal(self, pid: str) -> None:
        self.live.remove(pid)

    def in_flight(self) -> int:
        return len(self.live)

    def balanced(self) -> bool:
        return self.injected == self.delivered + sum(self.dropped.values()) + self.lost_on_link + self.in_flight()


class CircuitSession:
    """Client side of one circuit: request arrivals, the sender window and regeneration."""

    def __init__(self, net: "NetworkRun", spec: CircuitSpec, circuit_id: int, path: list[str]):
        self.net = net
        self.spec = spec
        self.circuit_id = circuit_id
        self.path = path
        t = net.scenario.transport
        self.window = SenderWindow(window_size=t.window, max_retries=t.max_retries,
                                   timeout_us=t.timeout_us or net.derived_timeout_us(path, t.window) * t.timeout_factor)
        self.request = ClientRequest(
            dst=spec.dst,
            entanglement_type=EntanglementType[spec.entanglement_type],
            duration_us=spec.duration_us or int(round(net.duty.payload_us)),
            qos=spec.qos,
            priority=spec.priority,
        )
        self.backlog: deque[str] = deque()
        self.arrived = 0
        self.up = False

    @property
    def src(self) -> str:
        return self.path[0]

    def start(self) -> None:
        self.up = True
        sim = self.net.sim
        if self.spec.rate_hz:
            gap = s_to_ns(1.0 / self.spec.rate_hz)
            for k in range(self.spec.demand):
                sim.schedule(k * gap, self._arrival, label=f"client:{self.circuit_id}")
        else:
            for _ in range(self.spec.demand):
                self._arrival(pump=False)
            self.pump()

    def _arrival(self, pump: bool = True) -> None:
        self.backlog.append(f"c{self.circuit_id}:r{self.arrived}")
        self.arrived += 1
        if pump:
            self.pump()

    def pump(self) -> None:
        while self.backlog and self.window.has_room():
            request_id = self.backlog.popleft()
            dg = self._wrap()
            self.window.send(dg, self.net.sim.now, request_id)
            self._launch(dg)

    def _wrap(self) -> QwDatagram:
        return edge_ingress(self.net.nodes[self.src], self.request, self.circuit_id)

    def _launch(self, dg: QwDatagram) -> None:
        pid = dg.payload.payload_id
        self.net.sim.schedule(self.window.timeout_ns, self._on_timeout, pid, label=f"rto:{self.circuit_id}")
        self.net.inject(self.src, dg)

    def _on_timeout(self, pid: str) -> None:
        self._act(pid, self.window.on_timeout(pid))

    def on_ack(self, ack: AckMessage) -> None:
        if ack.kind is AckKind.NACK:
            self._act(ack.payload_id, self.window.on_nack(ack.payload_id))
        elif self.window.on_ack(ack):
            self.pump()

    def _act(self, pid: str, action: TimeoutAction) -> None:
        if action is TimeoutAction.REGENERATE:
            dg = self._wrap()
            self.window.regenerate(pid, dg, self.net.sim.now)
            self._launch(dg)
        elif action is TimeoutAction.GIVE_UP:
            self.pump()

    def summary(self) -> dict:
        states = {s.value: 0 for s in RequestState}
        for s in self.window.requests.values():
            states[s.value] += 1
        return {
            "demand": self.spec.demand,
            "arrived": self.arrived,
            "unsent": len(self.backlog),
            "requests": states,
            "outstanding": len(self.window.outstanding),
            "window_size": self.window.window_size,
            "timeout_us": self.window.timeout_us,
            "stats": self.window.stats.to_dict(),
        }


class NetworkRun:
    def __init__(self, scenario: Scenario, calibration: Calibration | None = None, keep_trace: bool = False):
        self.scenario = scenario
        self.cal = calibration or resolve_calibration(scenario.calibration)
        self.duty = scenario.duty_cycle()
        self.cal = replace(self.cal, duty=self.duty)
        self.sim = Simulator(scenario.seed, keep_trace=keep_trace)
        self.assignment = WavelengthAssignment(scenario.wavelength_assignment)
        self.header_mode = header_mode_for(self.assignment)
        self.nodes: dict[str, QwNode] = {}
        for n in scenario.nodes:
            self.nodes[n.id] = QwNode(n.id, NodeKind(n.kind), calibration=self.cal,
                                      launch_dbm=scenario.launch_dbm, wavelength_assignment=self.assignment)
        self.links: dict[str, LinkRuntime] = {}
        self._link_between: dict[frozenset, LinkRuntime] = {}
        for spec in scenario.links:
            lr = LinkRuntime(spec.link_id, spec.a, spec.b, spec.channel_state(), us_to_ns(spec.dcc_delay_us),
                             spec.header_loss_prob)
            self.links[lr.link_id] = lr
            self._link_between[frozenset((lr.a, lr.b))] = lr
        self.ports: dict[tuple[str, str], PortQueue] = {}
        self._port_seq = itertools.count()
        self.ledger = Ledger()
        self.accepted: dict[int, set] = {}
        self.duplicate_payloads = 0
        self.redundant_deliveries = 0
        self.unseal_events: dict[str, int] = {n: 0 for n in self.nodes}
        self.label_trace: dict[tuple[str, str, int], int] = {}
        self.probe_node_drops = 0
        self.probe_link_losses = 0
        self.measurements: dict[int, list[dict]] = {}
        self.sessions: dict[int, CircuitSession] = {}

        c = scenario.controller
        self.bits_per_sample = telemetry_bits_per_sample(self.cal, c.telemetry_interval_s)
        config = ControlConfig(
            probe_period_s=c.probe_period_s, probe_timeout_s=c.probe_timeout_s,
            telemetry_interval_s=c.telemetry_interval_s, min_samples=c.min_samples,
            thresholds=AlarmThresholds(c.degraded_car_db, c.blind_spot_rate_per_ns),
        )
        models = [LinkModel(lr.link_id, lr.a, lr.b, lr.channel, self.header_mode, scenario.launch_dbm,
                            self.bits_per_sample) for lr in self.links.values()]
        dcc_delay = {}
        for node_id in self.nodes:
            incident = [lr.dcc_delay_ns for lr in self.links.values() if node_id in (lr.a, lr.b)]
            dcc_delay[node_id] = max(incident, default=50_000)
        self.controller = Controller(self.sim, scenario.graph(), self.nodes, self.cal, links=models,
                                     config=config, dcc_delay_ns=dcc_delay, dcc_loss_prob=c.dcc_loss_prob)
        for node_id, agent in self.controller.agents.items():
            agent.on_probe_request = self.launch_probe
            agent.on_transport_ack = self._on_transport_ack

    # -- timing ------------------------------------------------------------
    def slot_ns(self, payload_us: float) -> int:
        return us_to_ns(self.duty.header_us + payload_us)

    def derived_timeout_us(self, path: list[str], window: int) -> float:
        """Worst-case round trip for a full window on an idle path."""
        slot_us = self.duty.header_us + self.duty.payload_us
        hops = list(zip(path, path[1:]))
        forward = sum(self._link_between[frozenset(h)].propagation_ns / 1000 for h in hops)
        forward += len(path) * self.nodes[path[0]].swap.delay_us + len(hops) * slot_us
        ack = 2 * (self.controller.dcc[path[-1]].delay_ns + self.controller.dcc[path[0]].delay_ns) / 1000
        return forward + window * slot_us + ack

    # -- data path ---------------------------------------------------------
    def inject(self, node_id: str, dg: QwDatagram) -> None:
        pid = dg.payload.payload_id
        self.ledger.injected += 1
        self.ledger.live.add(pid)
        self._arrive(node_id, LOCAL_PORT, dg)

    def _arrive(self, node_id: str, in_port: str, dg: QwDatagram) -> None:
        node = self.nodes[node_id]
        payload = dg.payload
        if payload.empty and in_port != LOCAL_PORT:
            try:
                f = decode_header(dg.header_bits)
            except DecodeError:
                f = None
            if f is not None and f.header_class is HeaderClass.B:
                self._probe_arrival(node_id, in_port, dg)
                return
        decision = process_datagram(node, in_port, dg, self.sim.now)
        if isinstance(decision, Drop):
            if payload.empty:
                self.probe_node_drops += 1
            else:
                self.ledger.dropped[decision.reason.value] += 1
                self.ledger.terminal(payload.payload_id)
            return
        if decision.out_port == LOCAL_PORT:
            self.sim.schedule_at(decision.depart_time_ns, self._egress, node_id, in_port, decision.datagram,
                                 label=f"egress:{node_id}")
        else:
            self.sim.schedule_at(decision.depart_time_ns, self._enqueue, node_id, decision.out_port,
                                 decision.datagram, label=f"enqueue:{node_id}")

    def _enqueue(self, node_id: str, port: str, dg: QwDatagram) -> None:
        q = self.ports.get((node_id, port))
        if q is None:
            q = self.ports[(node_id, port)] = PortQueue(node_id, port)
        prio = decode_header(dg.header_bits).priority
        heapq.heappush(q.heap, (-prio, next(self._port_seq), dg))
        if not q.busy:
            self._port_next(q)

    def _port_next(self, q: PortQueue) -> None:
        if not q.heap:
            q.busy = False
            return
        q.busy = True
        _, _, dg = heapq.heappop(q.heap)
        q.transmitted += 1
        self._transmit(q.node_id, q.port, dg)
        self.sim.schedule(self.slot_ns(dg.payload.duration_us), self._port_next, q, label=f"port:{q.node_id}")

    def _transmit(self, node_id: str, port: str, dg: QwDatagram) -> None:
        link = self._link_between[frozenset((node_id, port))]
        rng = self.sim.streams.stream(f"link:{link.link_id}")
        label = decode_header(dg.header_bits).circuit_id
        key = (node_id, port, label)
        self.label_trace[key] = self.label_trace.get(key, 0) + 1
        if link.header_loss_prob > 0 and rng.random() < link.header_loss_prob:
            if dg.payload.empty:
                self.probe_link_losses += 1
            else:
                self.ledger.lost_on_link += 1
                self.ledger.terminal(dg.payload.payload_id)
            return
        ber = header_ber(received_power(self.scenario.launch_dbm, link.channel), self.cal.receiver)
        p_hit = -math.expm1(WRAPPER_BITS * math.log1p(-min(ber, 0.5)))
        if p_hit > 0 and rng.random() < p_hit:
            dg = _flip_bit(dg, rng.integers(0, WRAPPER_BITS))
        dg.payload.traverse(link.channel)
        self.sim.schedule(link.propagation_ns, self._arrive, port, node_id, dg, label=f"arrive:{port}")

    def _egress(self, node_id: str, in_port: str, dg: QwDatagram) -> None:
        node = self.nodes[node_id]
        last_hop = self._link_between[frozenset((node_id, in_port))].channel
        outcome = edge_egress(node, dg, last_hop=last_hop, rng=self.sim.streams.stream(f"egress:{node_id}").generator)
        pid = dg.payload.payload_id
        if outcome.delivered is None:
            self.ledger.dropped["corrupt"] += 1
            self.ledger.terminal(pid)
            return
        self.ledger.delivered += 1
        self.ledger.terminal(pid)
        self.unseal_events[node_id] += 1
        session_id = self._session_for_egress(node_id, in_port, outcome.ack.circuit_id)
        accepted = self.accepted.setdefault(session_id, set())
        if pid in accepted:
            self.duplicate_payloads += 1
        accepted.add(pid)
        m = outcome.delivered.measured
        self.measurements.setdefault(session_id, []).append({
            "t_ns": self.sim.now, "payload_id": pid,
            "car_db": None if m.stats.zero_accidentals else m.stats.car_db,
            "cc": m.stats.cc_total, "ac": m.stats.accidentals,
            "header_ber": m.header_ber, "rx_dbm": m.received_power_dbm,
            "attenuation_db": m.attenuation_db,
        })
        self.controller.agents[node_id].report_ack(outcome.ack, in_port)

    def _session_for_egress(self, node_id: str, in_port: str, label: int) -> int:
        for cid, s in self.sessions.items():
            e = self.controller.circuits[cid].entries[s.path[-1]]
            if s.path[-1] == node_id and (e.in_port, e.in_label) == (in_port, label):
                return cid
        return -1

    def _on_transport_ack(self, ack: AckMessage) -> None:
        session = self.sessions.get(ack.circuit_id)
        if session is None:
            return
        if ack.kind is AckKind.ACK:
            request = session.window.request_id_of(ack.payload_id)
            if request is not None and session.window.requests.get(request) is RequestState.DELIVERED:
                self.redundant_deliveries += 1
        session.on_ack(ack)

    # -- probes and telemetry ---------------------------------------------
    def launch_probe(self, link_id: str, probe_id: int) -> None:
        link = self.links[link_id]
        duration = int(round(self.duty.payload_us))
        payload = QuantumPayloadDescriptor(f"probe:{link_id}:{probe_id}", EntanglementType.NONE, duration,
                                           empty=True)
        fields = HeaderFields(HeaderClass.B, circuit_id=probe_id % (1 << 20), priority=7,
                              payload_duration_us=duration, entanglement_type=EntanglementType.NONE)
        dg = QwDatagram.wrap(fields, payload, self.assignment)
        self.sim.schedule(self.nodes[link.a].swap.delay_ns, self._enqueue, link.a, link.b, dg,
                          label=f"probe:{link_id}")

    def _probe_arrival(self, node_id: str, in_port: str, dg: QwDatagram) -> None:
        link = self._link_between[frozenset((node_id, in_port))]
        self.nodes[node_id].swap.counters["probes_received"] += 1
        if node_id != link.b:
            return
        probe_id = int(dg.payload.payload_id.rsplit(":", 1)[1])
        result = measure_probe(link.link_id, probe_id, self.cal, link.channel, self.header_mode,
                               self.scenario.launch_dbm, self.sim.streams.stream(f"probe:{link.link_id}"))
        self.controller.agents[node_id].report_probe(result)

    def _telemetry_tick(self) -> None:
        for link_id in sorted(self.links):
            link = self.links[link_id]
            rx = received_power(self.scenario.launch_dbm, link.channel)
            errors = sample_header_errors(self.sim.streams.stream(f"telemetry:{link_id}"), self.bits_per_sample,
                                          rx, self.cal)
            self.controller.agents[link.b].report_telemetry(link_id, errors, self.bits_per_sample, rx)
        self.sim.schedule(s_to_ns(self.scenario.controller.telemetry_interval_s), self._telemetry_tick,
                          label="telemetry")

    def _impair(self, link_id: str, changes: dict) -> None:
        link = self.links[link_id]
        link.channel = replace(link.channel, **changes)
        self.controller._log("impairment", link_id=link_id, set=dict(changes))

    # -- orchestration -----------------------------------------------------
    def setup(self) -> None:
        for i, spec in enumerate(self.scenario.circuits):
            cid = spec.circuit_id if spec.circuit_id is not None else 100 + i
            path = spec.path or self.controller.route(spec.src, spec.dst)
            session = CircuitSession(self, spec, cid, list(path))
            self.sessions[cid] = session
            self.controller.install_circuit(path, cid, on_settled=self._circuit_settled)
        if self.scenario.controller.monitoring:
            self.controller.start_monitoring()
            self.sim.schedule(s_to_ns(self.scenario.controller.telemetry_interval_s), self._telemetry_tick,
                              label="telemetry")
        for m in self.scenario.impairments:
            self.sim.schedule_at(s_to_ns(m.time_s), self._impair, m.link, dict(m.set), label="impairment")

    def _circuit_settled(self, handle) -> None:
        if handle.state.value == "up":
            self.sessions[handle.circuit_id].start()

    def run(self) -> "NetworkRun":
        self.setup()
        self.sim.run(until_ns=s_to_ns(self.scenario.duration_s))
        return self

    # -- export ------------------------------------------------------------
    def conservation(self) -> dict:
        """Reconcile the payload ledger with node counters and transport stats."""
        node_drops = {k: 0 for k in ("no_route", "reserved_class", "corrupt")}
        node_delivered = 0
        for node in self.nodes.values():
            c = node.swap.counters
            node_delivered += c["delivered"]
            for k in node_drops:
                node_drops[k] += c[f"dropped_{k}"]
        sent = sum(s.window.stats.sent for s in self.sessions.values())
        led = self.ledger
        node_side = (node_delivered + sum(node_drops.values()) - self.probe_node_drops
                     + led.lost_on_link + led.in_flight())
        return {
            "transport_sent": sent,
            "injected": led.injected,
            "delivered": led.delivered,
            "dropped": dict(led.dropped),
            "lost_on_link": led.lost_on_link,
            "in_flight": led.in_flight(),
            "node_counters_delivered": node_delivered,
            "node_counters_dropped": node_drops,
            "probe_node_drops": self.probe_node_drops,
            "probe_link_losses": self.probe_link_losses,
            "balanced": bool(led.balanced() and sent == led.injected and node_side == sent
                             and node_delivered == led.delivered),
        }


def _flip_bit(dg: QwDatagram, bit: int) -> QwDatagram:
    wrapper = bytearray(dg.header_bits + dg.tail_bits)
    wrapper[bit // 8] ^= 0x80 >> (bit % 8)
    return QwDatagram(bytes(wrapper[:HEADER_OCTETS]), dg.payload, bytes(wrapper[HEADER_OCTETS:]),
                      dg.wavelength_assignment)
