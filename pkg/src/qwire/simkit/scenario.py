"""Scenario documents: one JSON object per run, validated with field-level diagnostics.

Presets are generated here from code, so there is a single source of truth.
``qwire preset <name>`` prints them.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import networkx as nx

from ..frame_codec import EntanglementType, WavelengthAssignment
from ..photonics import ChannelState, DutyCycle, HeaderMode

SCHEMA_VERSION = 1
DEFAULT_DUTY = {"header_us": 102.4, "payload_us": 1130.0, "period_us": 1232.4}
FIBER_LOSS_DB_PER_KM = 0.2


class ConfigError(ValueError):
    """Invalid scenario; ``errors`` holds ``(field_path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.errors))


class UnknownPreset(ConfigError):
    def __init__(self, name: str):
        super().__init__([("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")])


@dataclass
class NodeSpec:
    id: str
    kind: str = "core"
    ports: list[str] | None = None


@dataclass
class LinkSpec:
    a: str
    b: str
    channel: dict = field(default_factory=dict)
    dcc_delay_us: float = 50.0
    header_loss_prob: float = 0.0

    @property
    def link_id(self) -> str:
        return f"{self.a}-{self.b}"

    def channel_state(self) -> ChannelState:
        return ChannelState(**self.channel)


@dataclass
class CircuitSpec:
    src: str
    dst: str
    demand: int = 0
    circuit_id: int | None = None
    rate_hz: float | None = None
    path: list[str] | None = None
    entanglement_type: str = "POLARIZATION"
    duration_us: int | None = None
    priority: int = 0
    qos: int = 0


@dataclass
class TransportSpec:
    window: int = 8
    max_retries: int = 5
    timeout_us: float | None = None      # None: derived from path latency
    timeout_factor: float = 3.0


@dataclass
class ControllerSpec:
    monitoring: bool = True
    dcc_loss_prob: float = 0.0
    telemetry_interval_s: float = 1.0
    probe_period_s: float = 10.0
    probe_timeout_s: float = 1.0
    min_samples: int = 10
    degraded_car_db: float = 6.0
    blind_spot_rate_per_ns: float = 1e-3


@dataclass
class ImpairmentSpec:
    time_s: float
    link: str
    set: dict


@dataclass
class Scenario:
    name: str
    seed: int = 1
    duration_s: float = 5.0
    launch_dbm: float = -21.0
    wavelength_assignment: str = WavelengthAssignment.SEPARATE_WAVELENGTH.value
    duty: dict = field(default_factory=lambda: dict(DEFAULT_DUTY))
    nodes: list[NodeSpec] = field(default_factory=list)
    links: list[LinkSpec] = field(default_factory=list)
    circuits: list[CircuitSpec] = field(default_factory=list)
    transport: TransportSpec = field(default_factory=TransportSpec)
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    impairments: list[ImpairmentSpec] = field(default_factory=list)
    analyses: dict = field(default_factory=dict)
    calibration: Any = None            # None (shipped fixture), a path, or an inline fixture
    monte_carlo: bool = False

    # -- conversion --------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["topology"] = {"nodes": d.pop("nodes"), "links": d.pop("links")}
        for n in d["topology"]["nodes"]:
            if n["ports"] is None:
                del n["ports"]
        d["schema_version"] = SCHEMA_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Any) -> "Scenario":
        errors: list[tuple[str, str]] = []
        scen = _parse(data, errors)
        if scen is not None:
            _check(scen, errors)
        if errors:
            raise ConfigError(errors)
        return scen

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([("$", f"invalid JSON: {exc}")]) from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError([("$", f"cannot read {path}: {exc.strerror}")]) from exc
        return cls.from_json(text)

    # -- derived -----------------------------------------------------------
    def duty_cycle(self) -> DutyCycle:
        return DutyCycle(**self.duty)

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(n.id for n in self.nodes)
        for link in self.links:
            g.add_edge(link.a, link.b, link_id=link.link_id)
        return g

    def header_mode(self) -> HeaderMode:
        if WavelengthAssignment(self.wavelength_assignment) is WavelengthAssignment.SEPARATE_WAVELENGTH:
            return HeaderMode.BURST
        return HeaderMode.NONE

    def with_seed(self, seed: int) -> "Scenario":
        s = copy.deepcopy(self)
        s.seed = int(seed)
        return s


def _sub(cls, data: Any, path: str, errors: list) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        errors.append((path, "must be an object"))
        return None
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    for k in unknown:
        errors.append((f"{path}.{k}", "unknown field"))
    try:
        return cls(**{k: v for k, v in data.items() if k in known})
    except TypeError as exc:
        errors.append((path, str(exc)))
        return None


def _parse(data: Any, errors: list) -> Scenario | None:
    if not isinstance(data, dict):
        errors.append(("$", "scenario must be a JSON object"))
        return None
    data = dict(data)
    data.pop("schema_version", None)
    topo = data.pop("topology", None)
    if not isinstance(topo, dict):
        errors.append(("topology", "required object with nodes and links"))
        topo = {}
    nodes = [_sub(NodeSpec, n, f"topology.nodes[{i}]", errors) for i, n in enumerate(topo.get("nodes") or [])]
    links = [_sub(LinkSpec, l, f"topology.links[{i}]", errors) for i, l in enumerate(topo.get("links") or [])]
    for k in sorted(set(topo) - {"nodes", "links"}):
        errors.append((f"topology.{k}", "unknown field"))
    circuits = [_sub(CircuitSpec, c, f"circuits[{i}]", errors) for i, c in enumerate(data.pop("circuits", []) or [])]
    impairments = [_sub(ImpairmentSpec, m, f"impairments[{i}]", errors)
                   for i, m in enumerate(data.pop("impairments", []) or [])]
    transport = _sub(TransportSpec, data.pop("transport", None), "transport", errors)
    controller = _sub(ControllerSpec, data.pop("controller", None), "controller", errors)
    if "name" not in data:
        errors.append(("name", "required"))
    known = {f.name for f in fields(Scenario)}
    for k in sorted(set(data) - known):
        errors.append((k, "unknown field"))
    if "name" not in data or any(x is None for x in [*nodes, *links, *circuits, *impairments,
                                                      transport, controller]):
        return None
    try:
        return Scenario(nodes=nodes, links=links, circuits=circuits, impairments=impairments,
                        transport=transport, controller=controller,
                        **{k: v for k, v in data.items() if k in known})
    except TypeError as exc:
        errors.append(("$", str(exc)))
        return None


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _check(s: Scenario, errors: list) -> None:
    def err(path, msg):
        errors.append((path, msg))

    if not isinstance(s.name, str) or not s.name:
        err("name", "must be a non-empty string")
    if not isinstance(s.seed, int) or isinstance(s.seed, bool) or not 0 <= s.seed < 2**64:
        err("seed", "must be an integer in [0, 2^64)")
    if not _is_num(s.duration_s) or s.duration_s <= 0:
        err("duration_s", "must be a positive number")
    if not _is_num(s.launch_dbm):
        err("launch_dbm", "must be a number")
    try:
        WavelengthAssignment(s.wavelength_assignment)
    except ValueError:
        err("wavelength_assignment", f"must be one of {[w.value for w in WavelengthAssignment]}")
    try:
        DutyCycle(**s.duty)
    except (TypeError, ValueError) as exc:
        err("duty", str(exc))

    ids = [n.id for n in s.nodes]
    if not ids:
        err("topology.nodes", "at least one node required")
    if len(set(ids)) != len(ids):
        err("topology.nodes", "duplicate node id")
    kinds = {}
    for i, n in enumerate(s.nodes):
        if n.kind not in ("edge", "core"):
            err(f"topology.nodes[{i}].kind", "must be 'edge' or 'core'")
        if n.id == "local":
            err(f"topology.nodes[{i}].id", "'local' is reserved")
        kinds[n.id] = n.kind
    seen_links = set()
    for i, link in enumerate(s.links):
        p = f"topology.links[{i}]"
        for end in ("a", "b"):
            if getattr(link, end) not in kinds:
                err(f"{p}.{end}", f"unknown node {getattr(link, end)!r}")
        if link.a == link.b:
            err(p, "self-loop")
        key = frozenset((link.a, link.b))
        if key in seen_links:
            err(p, "duplicate link")
        seen_links.add(key)
        try:
            link.channel_state()
        except (TypeError, ValueError) as exc:
            err(f"{p}.channel", str(exc))
        if not _is_num(link.dcc_delay_us) or link.dcc_delay_us < 0:
            err(f"{p}.dcc_delay_us", "must be >= 0")
        if not _is_num(link.header_loss_prob) or not 0 <= link.header_loss_prob < 1:
            err(f"{p}.header_loss_prob", "must be in [0, 1)")
    topology_ok = not any(p.startswith("topology") for p, _ in errors)
    g = s.graph() if topology_ok else nx.Graph()
    for i, n in enumerate(s.nodes):
        if topology_ok and n.ports is not None and sorted(n.ports) != sorted(g.neighbors(n.id)):
            err(f"topology.nodes[{i}].ports", f"must match linked neighbours {sorted(g.neighbors(n.id))}")
    used_ids = set()
    for i, c in enumerate(s.circuits):
        p = f"circuits[{i}]"
        for end in ("src", "dst"):
            node = getattr(c, end)
            if node not in kinds:
                err(f"{p}.{end}", f"unknown node {node!r}")
            elif kinds[node] != "edge":
                err(f"{p}.{end}", f"{node} is not an edge node")
        if not isinstance(c.demand, int) or isinstance(c.demand, bool) or c.demand < 0:
            err(f"{p}.demand", "must be a non-negative integer")
        if c.rate_hz is not None and (not _is_num(c.rate_hz) or c.rate_hz <= 0):
            err(f"{p}.rate_hz", "must be positive or null")
        if c.circuit_id is not None:
            if not isinstance(c.circuit_id, int) or not 0 <= c.circuit_id < 2**20:
                err(f"{p}.circuit_id", "must be a 20-bit integer")
            elif c.circuit_id in used_ids:
                err(f"{p}.circuit_id", "duplicate circuit id")
            used_ids.add(c.circuit_id)
        if c.entanglement_type not in EntanglementType.__members__:
            err(f"{p}.entanglement_type", f"must be one of {list(EntanglementType.__members__)}")
        if c.duration_us is not None and (not isinstance(c.duration_us, int) or not 0 < c.duration_us < 2**20):
            err(f"{p}.duration_us", "must be a positive 20-bit integer")
        if not isinstance(c.priority, int) or not 0 <= c.priority < 8:
            err(f"{p}.priority", "must be in 0..7")
        if not isinstance(c.qos, int) or not 0 <= c.qos < 16:
            err(f"{p}.qos", "must be in 0..15")
        if c.src in g and c.dst in g:
            if c.path is not None:
                if c.path[0] != c.src or c.path[-1] != c.dst or any(
                        not g.has_edge(a, b) for a, b in zip(c.path, c.path[1:])):
                    err(f"{p}.path", "must be a connected path from src to dst")
            elif c.src == c.dst or not nx.has_path(g, c.src, c.dst):
                err(f"{p}", f"no path from {c.src} to {c.dst}")
    t = s.transport
    if not isinstance(t.window, int) or t.window < 1:
        err("transport.window", "must be an integer >= 1")
    if not isinstance(t.max_retries, int) or t.max_retries < 0:
        err("transport.max_retries", "must be an integer >= 0")
    if t.timeout_us is not None and (not _is_num(t.timeout_us) or t.timeout_us <= 0):
        err("transport.timeout_us", "must be positive or null")
    ctl = s.controller
    for name in ("telemetry_interval_s", "probe_period_s", "probe_timeout_s"):
        if not _is_num(getattr(ctl, name)) or getattr(ctl, name) <= 0:
            err(f"controller.{name}", "must be positive")
    if not _is_num(ctl.dcc_loss_prob) or not 0 <= ctl.dcc_loss_prob < 1:
        err("controller.dcc_loss_prob", "must be in [0, 1)")
    link_ids = {link.link_id for link in s.links}
    channel_fields = {f.name for f in fields(ChannelState)}
    for i, m in enumerate(s.impairments):
        p = f"impairments[{i}]"
        if m.link not in link_ids:
            err(f"{p}.link", f"unknown link {m.link!r}")
        if not _is_num(m.time_s) or m.time_s < 0:
            err(f"{p}.time_s", "must be >= 0")
        if not isinstance(m.set, dict) or not set(m.set) <= channel_fields:
            err(f"{p}.set", f"keys must be channel fields {sorted(channel_fields)}")
    _check_analyses(s.analyses, err)


def _check_analyses(a: Any, err) -> None:
    if not isinstance(a, dict):
        err("analyses", "must be an object")
        return
    for k in sorted(set(a) - {"modes", "sweep", "dispersion", "monte_carlo"}):
        err(f"analyses.{k}", "unknown analysis")
    sweep = a.get("sweep")
    if sweep is not None:
        atts = sweep.get("attenuations_db") if isinstance(sweep, dict) else None
        if not isinstance(atts, list) or not atts or not all(_is_num(x) and x >= 0 for x in atts):
            err("analyses.sweep.attenuations_db", "must be a non-empty list of numbers >= 0")
        elif any(b < a_ for a_, b in zip(atts, atts[1:])):
            err("analyses.sweep.attenuations_db", "must be nondecreasing")
        if isinstance(sweep, dict) and sweep.get("header_mode", "burst") not in [m.value for m in HeaderMode]:
            err("analyses.sweep.header_mode", "unknown header mode")
    disp = a.get("dispersion")
    if disp is not None:
        lengths = disp.get("lengths_km") if isinstance(disp, dict) else None
        if not isinstance(lengths, list) or not all(_is_num(x) and x >= 0 for x in lengths):
            err("analyses.dispersion.lengths_km", "must be a list of numbers >= 0")
    mc = a.get("monte_carlo")
    if mc is not None:
        pts = mc.get("attenuations_db") if isinstance(mc, dict) else None
        if not isinstance(pts, list) or not all(_is_num(x) and x >= 0 for x in pts):
            err("analyses.monte_carlo.attenuations_db", "must be a list of numbers >= 0")


# ---------------------------------------------------------------------------
# presets

def _p2p(channel: dict | None = None, **link_kw) -> tuple[list[NodeSpec], list[LinkSpec]]:
    return ([NodeSpec("e1", "edge"), NodeSpec("e2", "edge")],
            [LinkSpec("e1", "e2", channel=dict(channel or {}), **link_kw)])


def _fig3_modes() -> Scenario:
    nodes, links = _p2p()
    return Scenario(
        name="fig3_modes", duration_s=2.0, launch_dbm=-21.0, nodes=nodes, links=links,
        circuits=[CircuitSpec("e1", "e2", demand=100, circuit_id=7)],
        analyses={"modes": {"integration_s": 100.0}},
    )


def _fig4_burst_5km() -> Scenario:
    span = {"length_km": 5.0, "attenuation_db": 5.0 * FIBER_LOSS_DB_PER_KM}
    nodes, links = _p2p(span)
    return Scenario(
        name="fig4_burst_5km", duration_s=2.0, launch_dbm=-21.0, nodes=nodes, links=links,
        circuits=[CircuitSpec("e1", "e2", demand=100, circuit_id=7)],
        analyses={"dispersion": {"lengths_km": [0.0, 5.0], "header_mode": "burst", "integration_s": 100.0,
                                 "fiber_loss_db_per_km": 0.0}},
    )


def _fig5_sweep() -> Scenario:
    nodes, links = _p2p()
    return Scenario(
        name="fig5_sweep", duration_s=2.0, launch_dbm=-28.0, nodes=nodes, links=links,
        circuits=[CircuitSpec("e1", "e2", demand=100, circuit_id=7)],
        analyses={"sweep": {"attenuations_db": [float(x) for x in range(16)], "header_mode": "burst",
                            "integration_s": 1000.0},
                  "monte_carlo": {"attenuations_db": [0.0, 4.0, 8.0, 12.0, 15.0], "integration_s": 5.0}},
    )


def _blindspot() -> Scenario:
    nodes, links = _p2p()
    return Scenario(
        name="blindspot", duration_s=30.0, launch_dbm=-21.0, nodes=nodes, links=links,
        circuits=[CircuitSpec("e1", "e2", demand=290, circuit_id=7, rate_hz=10.0)],
        impairments=[ImpairmentSpec(12.0, "e1-e2", {"injected_noise_rate_per_ns": 1e-2})],
    )


def _multihop() -> Scenario:
    names = ["e1", "c1", "c2", "c3", "e2"]
    nodes = [NodeSpec(n, "edge" if n.startswith("e") else "core") for n in names]
    links = [LinkSpec(a, b, channel={"attenuation_db": 0.2, "length_km": 1.0}) for a, b in zip(names, names[1:])]
    return Scenario(
        name="multihop", duration_s=3.0, launch_dbm=-21.0, nodes=nodes, links=links,
        circuits=[CircuitSpec("e1", "e2", demand=1000, circuit_id=7)],
    )


PRESETS = {
    "fig3_modes": _fig3_modes,
    "fig4_burst_5km": _fig4_burst_5km,
    "fig5_sweep": _fig5_sweep,
    "blindspot": _blindspot,
    "multihop": _multihop,
}


def preset(name: str) -> Scenario:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise UnknownPreset(name) from None
    scen = factory()
    # round-trip through the validator so presets obey the same rules as user files
    return Scenario.from_dict(json.loads(scen.to_json()))
