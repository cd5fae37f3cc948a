"""Run reports: assembly, photonics analyses, export and self-checks.

Reports are plain JSON-able data.  They contain no wall-clock times, no
unordered containers, and no non-finite floats: an open-ended or infinite
value is written as ``null``.  So one ``(scenario, seed)`` always exports to
the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from ..photonics import (
    Calibration,
    ChannelState,
    HeaderMode,
    capture_fraction,
    car_vs_attenuation_sweep,
    coincidence_stats,
    dispersion_spread,
    header_ber,
    received_power,
    simulate_coincidences,
)
from .network import NetworkRun
from .scenario import Scenario

REPORT_VERSION = 1
CSV_COLUMNS = ["source", "header_mode", "attenuation_db", "rx_power_dbm", "header_ber", "cc", "ac",
               "car_db"]


def clean(obj: Any) -> Any:
    """Recursively convert to JSON-safe, order-stable primitives."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(clean(v) for v in obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), (str, int)):
        return obj.value
    return obj


def _stats_row(source: str, mode: HeaderMode, att: float, rx: float, ber: float, s) -> dict:
    return {"source": source, "header_mode": mode.value, "attenuation_db": att, "rx_power_dbm": rx,
            "header_ber": ber, "cc": s.cc_total, "ac": s.accidentals,
            "car_db": None if s.zero_accidentals else s.car_db}


# ---------------------------------------------------------------------------
# photonics analyses

def analyse_modes(cal: Calibration, launch_dbm: float, cfg: dict) -> dict:
    integration = float(cfg.get("integration_s", 100.0))
    out = {}
    for mode in HeaderMode:
        s = coincidence_stats(cal.source, cal.detector, cal.channel, mode, launch_dbm, cal.duty, integration)
        out[mode.value] = {"car_db": s.car_db, "cc": s.cc_total, "ac": s.accidentals,
                           "anchor_db": getattr(cal.anchors, f"{mode.value}_db")}
    return {"launch_dbm": launch_dbm, "integration_s": integration, "modes": out}


def analyse_sweep(cal: Calibration, launch_dbm: float, cfg: dict) -> dict:
    mode = HeaderMode(cfg.get("header_mode", "burst"))
    integration = float(cfg.get("integration_s", 1000.0))
    atts = [float(a) for a in cfg["attenuations_db"]]
    points = car_vs_attenuation_sweep(cal.source, cal.detector, cal.receiver, cal.channel, mode, launch_dbm,
                                      cal.duty, integration, atts)
    rows = []
    for att, m in zip(atts, points):
        rows.append(_stats_row("sweep", mode, att, m.received_power_dbm, m.header_ber, m.stats))
    bers = [r["header_ber"] for r in rows]
    cars = [r["car_db"] for r in rows]
    rho = None
    if len(rows) > 2 and all(c is not None for c in cars):
        rho = float(stats.spearmanr([-math.log10(max(b, 1e-300)) for b in bers], cars).statistic)
    return {"launch_dbm": launch_dbm, "header_mode": mode.value, "integration_s": integration, "points": rows,
            "ber_nondecreasing": all(b2 >= b1 for b1, b2 in zip(bers, bers[1:])),
            "car_nonincreasing": all(c is not None for c in cars)
            and all(c2 <= c1 for c1, c2 in zip(cars, cars[1:])),
            "spearman_neglog_ber_vs_car": rho}


def analyse_dispersion(cal: Calibration, launch_dbm: float, cfg: dict) -> dict:
    mode = HeaderMode(cfg.get("header_mode", "burst"))
    integration = float(cfg.get("integration_s", 100.0))
    loss = float(cfg.get("fiber_loss_db_per_km", 0.0))
    rows = []
    for length in cfg["lengths_km"]:
        ch = replace(cal.channel, length_km=float(length), attenuation_db=cal.channel.attenuation_db + loss * length)
        spread = dispersion_spread(ch, cal.source.signal_bandwidth_nm)
        s = coincidence_stats(cal.source, cal.detector, ch, mode, launch_dbm, cal.duty, integration)
        rows.append({"length_km": float(length), "spread_ps": spread,
                     "capture_fraction": capture_fraction(spread, cal.detector.coincidence_window_ns),
                     "car_db": s.car_db, "cc": s.cc_total, "ac": s.accidentals})
    return {"header_mode": mode.value, "bandwidth_nm": cal.source.signal_bandwidth_nm,
            "dispersion_ps_nm_km": cal.channel.dispersion_ps_nm_km, "fiber_loss_db_per_km": loss,
            "window_ns": cal.detector.coincidence_window_ns, "points": rows}


def analyse_monte_carlo(cal: Calibration, launch_dbm: float, cfg: dict, seed: int,
                        header_mode: str = "burst") -> dict:
    mode = HeaderMode(cfg.get("header_mode", header_mode))
    integration = float(cfg.get("integration_s", 1000.0))
    coverage = 0.9973
    rows = []
    for k, att in enumerate(cfg["attenuations_db"]):
        ch = replace(cal.channel, attenuation_db=float(att))
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x4D43, k)))
        mc = simulate_coincidences(cal.source, cal.detector, ch, mode, launch_dbm, cal.duty, integration, rng)
        s = coincidence_stats(cal.source, cal.detector, ch, mode, launch_dbm, cal.duty, integration)
        cc_lo, cc_hi = stats.poisson.interval(coverage, s.cc_total)
        ac_lo, ac_hi = stats.poisson.interval(coverage, s.accidentals * mc.ac_windows)
        rows.append({"attenuation_db": float(att), "cc_analytic": s.cc_total, "cc_mc": mc.cc,
                     "ac_analytic": s.accidentals, "ac_mc": mc.ac,
                     "cc_within": bool(cc_lo <= mc.cc <= cc_hi),
                     "ac_within": bool(ac_lo <= mc.ac_total <= ac_hi)})
    return {"header_mode": mode.value, "integration_s": integration, "coverage": coverage, "points": rows,
            "all_within": all(r["cc_within"] and r["ac_within"] for r in rows)}


def run_analyses(scenario: Scenario, cal: Calibration, monte_carlo: bool = False) -> dict:
    a = scenario.analyses
    out = {}
    if "modes" in a:
        out["modes"] = analyse_modes(cal, scenario.launch_dbm, a["modes"] or {})
    if "sweep" in a:
        out["sweep"] = analyse_sweep(cal, scenario.launch_dbm, a["sweep"])
    if "dispersion" in a:
        out["dispersion"] = analyse_dispersion(cal, scenario.launch_dbm, a["dispersion"])
    if (monte_carlo or scenario.monte_carlo) and "monte_carlo" in a:
        out["monte_carlo"] = analyse_monte_carlo(cal, scenario.launch_dbm, a["monte_carlo"], scenario.seed)
    return out


# ---------------------------------------------------------------------------
# report assembly

def build_report(net: NetworkRun, analyses: dict) -> dict:
    ctl = net.controller.export()
    circuits = []
    for cid in sorted(net.sessions):
        s = net.sessions[cid]
        handle = net.controller.circuits[cid]
        circuits.append({
            "circuit_id": cid, "src": s.spec.src, "dst": s.spec.dst, "path": handle.path,
            "labels": handle.labels, "state": handle.state.value,
            "transport": s.summary(),
            "accepted_payloads": len(net.accepted.get(cid, ())),
            "measurements": net.measurements.get(cid, []),
        })
    links = {}
    for link_id in sorted(net.links):
        lr = net.links[link_id]
        record = net.controller.link_map[link_id]
        links[link_id] = {
            "a": lr.a, "b": lr.b, "channel": asdict(lr.channel),
            "state": ctl["links"][link_id],
            "series": record.series,
        }
    nodes = {}
    for node_id in sorted(net.nodes):
        n = net.nodes[node_id]
        nodes[node_id] = {"kind": n.kind.value, "counters": n.counters_dump(), "table": n.table.dump(),
                          "unseal_events": net.unseal_events[node_id]}
    report = {
        "report_version": REPORT_VERSION,
        "scenario": net.scenario.to_dict(),
        "seed": net.scenario.seed,
        "sim_time_ns": net.sim.now,
        "calibration": net.cal.to_dict(),
        "circuits": circuits,
        "links": links,
        "nodes": nodes,
        "alarms": ctl["alarm_log"],
        "controller": {k: ctl[k] for k in ("circuits", "links", "event_log", "probe_results",
                                            "tables_converged", "dcc")},
        "conservation": net.conservation(),
        "integrity": {"duplicate_payloads_accepted": net.duplicate_payloads,
                      "redundant_request_deliveries": net.redundant_deliveries,
                      "core_unseal_events": sum(v for k, v in net.unseal_events.items()
                                                if net.nodes[k].kind.value == "core"),
                      "label_trace": [{"node": a, "port": p, "label": l, "count": c}
                                      for (a, p, l), c in sorted(net.label_trace.items())]},
        "analyses": analyses,
        "engine": {"events": net.sim.events_processed, "trace_sha256": net.sim.trace_digest(),
                   "random_draws": net.sim.streams.draw_counts()},
    }
    return clean(report)


def run_scenario(scenario: Scenario, *, monte_carlo: bool = False, calibration: Calibration | None = None,
                 keep_trace: bool = False) -> tuple[dict, NetworkRun]:
    net = NetworkRun(scenario, calibration=calibration, keep_trace=keep_trace).run()
    return build_report(net, run_analyses(scenario, net.cal, monte_carlo)), net


def metrics_rows(report: dict) -> list[dict]:
    """Rows for metrics.csv: the sweep table if present, else one row per link."""
    sweep = report["analyses"].get("sweep")
    if sweep:
        return [dict(r) for r in sweep["points"]]
    cal = Calibration.from_dict(report["calibration"])
    launch = report["scenario"]["launch_dbm"]
    mode = HeaderMode.BURST if report["scenario"]["wavelength_assignment"] == "separate_wavelength" \
        else HeaderMode.NONE
    rows = []
    for link_id, link in report["links"].items():
        ch = ChannelState(**{k: (-math.inf if v is None else v) for k, v in link["channel"].items()})
        rx = received_power(launch, ch)
        s = coincidence_stats(cal.source, cal.detector, ch, mode, launch, cal.duty, 1000.0)
        rows.append(_stats_row(f"link:{link_id}", mode, ch.attenuation_db, rx, header_ber(rx, cal.receiver), s))
    return clean(rows)


# ---------------------------------------------------------------------------
# export

def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def metrics_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in metrics_rows(report):
        w.writerow({k: ("" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k]))
                    for k in CSV_COLUMNS})
    return buf.getvalue()


def alarms_json(report: dict) -> str:
    payload = {"alarm_log": report["alarms"],
               "current": {k: v["state"]["alarm"] for k, v in report["links"].items()}}
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def export(report: dict, fmt: str, path: str | Path) -> Path:
    path = Path(path)
    text = {"json": report_json, "csv": metrics_csv, "alarms": alarms_json}[fmt](report)
    path.write_text(text)
    return path


def write_outputs(report: dict, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {"report": export(report, "json", out / "report.json"),
            "metrics": export(report, "csv", out / "metrics.csv"),
            "alarms": export(report, "alarms", out / "alarms.json")}


def read_metrics_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                if k in ("source", "header_mode"):
                    parsed[k] = v
                else:
                    parsed[k] = None if v == "" else float(v)
            rows.append(parsed)
    return rows


def report_schema() -> dict:
    return json.loads(resources.files("qwire.data").joinpath("report.schema.json").read_text())


# ---------------------------------------------------------------------------
# self-checks for ``qwire run --check``

def checks(report: dict) -> list[tuple[str, bool, str]]:
    out = []
    cons = report["conservation"]
    out.append(("conservation ledger balances", cons["balanced"], json.dumps(cons, sort_keys=True)))
    integ = report["integrity"]
    out.append(("no core-node unseal", integ["core_unseal_events"] == 0, str(integ["core_unseal_events"])))
    out.append(("no duplicate payload accepted", integ["duplicate_payloads_accepted"] == 0,
                str(integ["duplicate_payloads_accepted"])))
    a = report["analyses"]
    if "modes" in a:
        for mode, m in a["modes"]["modes"].items():
            ok = m["car_db"] is not None and abs(m["car_db"] - m["anchor_db"]) <= 1.0
            out.append((f"{mode} CAR within 1 dB of anchor", ok, f"{m['car_db']} vs {m['anchor_db']}"))
    if "sweep" in a:
        s = a["sweep"]
        out.append(("sweep BER nondecreasing", s["ber_nondecreasing"], ""))
        out.append(("sweep CAR nonincreasing", s["car_nonincreasing"], ""))
        rho = s["spearman_neglog_ber_vs_car"]
        out.append(("Spearman >= 0.95", rho is not None and rho >= 0.95, str(rho)))
    if "dispersion" in a:
        pts = a["dispersion"]["points"]
        cars = [p["car_db"] for p in pts]
        ok = all(c2 < c1 for c1, c2 in zip(cars, cars[1:]))
        out.append(("CAR decreases with dispersion length", ok, str(cars)))
    if "monte_carlo" in a:
        out.append(("Monte Carlo within 3 sigma", a["monte_carlo"]["all_within"], ""))
    scen = report["scenario"]
    threshold = scen["controller"]["blind_spot_rate_per_ns"]
    period_ns = round(scen["controller"]["probe_period_s"] * 1e9)
    for m in scen["impairments"]:
        if m["set"].get("injected_noise_rate_per_ns", 0.0) >= threshold:
            start = round(m["time_s"] * 1e9)
            hits = [a["t_ns"] for a in report["alarms"] if a["link_id"] == m["link"]
                    and a["to"] == "blind_spot_suspected" and a["t_ns"] >= start]
            ok = bool(hits) and hits[0] - start <= 2 * period_ns
            out.append((f"blind spot on {m['link']} flagged within 2 probe cycles", ok, str(hits[:1])))
    for c in report["circuits"]:
        req = c["transport"]["requests"]
        done = req["delivered"] + req["gave_up"]
        if c["transport"]["demand"] and c["transport"]["unsent"] == 0 and c["transport"]["outstanding"] == 0:
            ratio = req["delivered"] / max(1, done)
            out.append((f"circuit {c['circuit_id']} >= 99% delivered", ratio >= 0.99, f"{ratio:.4f}"))
    return out
