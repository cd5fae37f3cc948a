import json
from pathlib import Path

import jsonschema
import pytest

from qwire.simkit.cli import main
from qwire.simkit.engine import RandomStreams, SimulationError, Simulator
from qwire.simkit.report import (
    CSV_COLUMNS,
    metrics_csv,
    metrics_rows,
    read_metrics_csv,
    report_json,
    report_schema,
    run_scenario,
    write_outputs,
)
from qwire.simkit.scenario import PRESETS, ConfigError, Scenario, UnknownPreset, preset

FIXTURES = Path(__file__).parent / "fixtures"


# -- engine -----------------------------------------------------------------

def test_event_order_time_then_insertion():
    sim = Simulator()
    seen = []
    for t, tag in [(5, "a"), (1, "b"), (5, "c"), (1, "d"), (0, "e")]:
        sim.schedule_at(t, seen.append, tag)
    sim.run()
    assert seen == ["e", "b", "d", "a", "c"]


def test_no_scheduling_in_the_past():
    sim = Simulator()
    sim.schedule_at(10, lambda: sim.schedule_at(3, lambda: None))
    with pytest.raises(SimulationError):
        sim.run()


def test_run_until_is_inclusive_and_advances_clock():
    sim = Simulator()
    hits = []
    sim.schedule_at(100, hits.append, 1)
    sim.schedule_at(101, hits.append, 2)
    sim.run(until_ns=100)
    assert hits == [1] and sim.now == 100
    sim.run(until_ns=500)
    assert hits == [1, 2] and sim.now == 500


def test_streams_reproducible_independent_and_counted():
    a, b = RandomStreams(42), RandomStreams(42)
    x = [a.stream("x").random() for _ in range(3)]
    b.stream("y").random()  # touching another stream first changes nothing
    assert [b.stream("x").random() for _ in range(3)] == x
    assert a.draw_counts() == {"x": 3}
    assert RandomStreams(43).stream("x").random() != x[0]


# -- scenarios ----------------------------------------------------------------

def test_preset_values():
    assert preset("fig5_sweep").launch_dbm == -28.0
    assert preset("fig3_modes").duty["header_us"] == 102.4
    mh = preset("multihop")
    assert [n.id for n in mh.nodes] == ["e1", "c1", "c2", "c3", "e2"] and len(mh.links) == 4
    with pytest.raises(UnknownPreset):
        preset("fig9")


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_json_round_trip(name):
    s = preset(name)
    assert Scenario.from_json(s.to_json()) == s


def test_config_error_diagnostics():
    doc = json.loads(preset("multihop").to_json())
    doc["duty"]["period_us"] = 1000.0
    doc["circuits"][0]["src"] = "c1"
    doc["transport"]["window"] = 0
    doc["topology"]["links"][0]["header_loss_prob"] = 1.5
    with pytest.raises(ConfigError) as exc:
        Scenario.from_dict(doc)
    paths = {p for p, _ in exc.value.errors}
    assert {"duty", "circuits[0].src", "transport.window", "topology.links[0].header_loss_prob"} <= paths


def test_disconnected_circuit_rejected():
    doc = json.loads(preset("fig3_modes").to_json())
    doc["topology"]["nodes"].append({"id": "e9", "kind": "edge"})
    doc["circuits"][0]["dst"] = "e9"
    with pytest.raises(ConfigError, match="no path"):
        Scenario.from_dict(doc)


# -- runs and export ----------------------------------------------------------

@pytest.fixture(scope="module")
def fig5():
    return run_scenario(preset("fig5_sweep"))[0]


def test_empty_demand_report():
    s = preset("multihop")
    s.circuits[0].demand = 0
    rep, _ = run_scenario(s)
    cons = rep["conservation"]
    assert cons["injected"] == cons["delivered"] == cons["lost_on_link"] == 0
    assert sum(cons["dropped"].values()) == 0 and cons["balanced"]
    assert rep["circuits"][0]["transport"]["stats"]["sent"] == 0


def test_same_seed_identical_different_seed_differs():
    s = preset("blindspot")
    a = report_json(run_scenario(s)[0])
    b = report_json(run_scenario(s)[0])
    c = report_json(run_scenario(s.with_seed(2))[0])
    assert a == b
    assert a != c


def test_fig5_csv_monotone(tmp_path, fig5):
    write_outputs(fig5, tmp_path)
    rows = read_metrics_csv(tmp_path / "metrics.csv")
    assert [r["attenuation_db"] for r in rows] == [float(x) for x in range(16)]
    ber = [r["header_ber"] for r in rows]
    car = [r["car_db"] for r in rows]
    assert all(b2 >= b1 for b1, b2 in zip(ber, ber[1:]))
    assert all(c2 <= c1 for c1, c2 in zip(car, car[1:]))


def test_csv_header_matches_fixture(fig5):
    assert metrics_csv(fig5).splitlines()[0] + "\n" == (FIXTURES / "metrics_header.csv").read_text()
    assert (FIXTURES / "metrics_header.csv").read_text().strip().split(",") == CSV_COLUMNS


def test_export_round_trip_and_reexport(tmp_path, fig5):
    files = write_outputs(fig5, tmp_path)
    assert json.loads(files["report"].read_text()) == fig5
    assert read_metrics_csv(files["metrics"]) == metrics_rows(fig5)
    first = {k: p.read_bytes() for k, p in files.items()}
    again = write_outputs(json.loads(files["report"].read_text()), tmp_path / "again")
    assert {k: p.read_bytes() for k, p in again.items()} == first


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_report_validates_against_schema(name):
    rep, _ = run_scenario(preset(name))
    jsonschema.validate(rep, report_schema())


def test_schema_rejects_broken_report(fig5):
    broken = json.loads(json.dumps(fig5))
    del broken["conservation"]
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(broken, report_schema())


def test_lossy_dcc_still_converges():
    s = preset("multihop")
    s.controller.dcc_loss_prob = 0.2
    s.circuits[0].demand = 200
    rep, net = run_scenario(s)
    assert rep["circuits"][0]["state"] == "up"
    assert all(rep["controller"]["tables_converged"].values())
    for node_id, node in net.nodes.items():
        assert node.table.dump() == net.controller.intended_table(node_id)
    assert rep["conservation"]["balanced"]
    assert sum(d["retransmissions"] for d in rep["controller"]["dcc"].values()) > 0


# -- CLI ------------------------------------------------------------------------

def test_cli_preset_run_and_dump(tmp_path, capsys):
    assert main(["preset", "fig3_modes"]) == 0
    text = capsys.readouterr().out
    scen = tmp_path / "s.json"
    scen.write_text(text)
    assert Scenario.load(scen) == preset("fig3_modes")
    out = tmp_path / "run"
    assert main(["run", str(scen), "--seed", "9", "--out", str(out), "--check"]) == 0
    for name in ("report.json", "metrics.csv", "alarms.json", "modes.png"):
        assert (out / name).exists()
    assert json.loads((out / "report.json").read_text())["seed"] == 9
    capsys.readouterr()
    assert main(["ctl", "dump", str(out)]) == 0
    dump = json.loads(capsys.readouterr().out)
    assert dump["circuits"][0]["state"] == "up" and "e1-e2" in dump["links"]


def test_cli_config_error_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x", "topology": {"nodes": [], "links": []}, "seed": -1}')
    assert main(["run", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "seed" in err and "topology.nodes" in err
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert main(["preset", "nope"]) == 2


def test_cli_check_failure_exit_3(tmp_path):
    doc = json.loads(preset("fig3_modes").to_json())
    doc["topology"]["links"][0]["header_loss_prob"] = 0.9
    doc["transport"]["max_retries"] = 0
    doc["duration_s"] = 5.0
    scen = tmp_path / "lossy.json"
    scen.write_text(json.dumps(doc))
    assert main(["run", str(scen), "--out", str(tmp_path / "o"), "--check", "--no-plots"]) == 3


def test_cli_calibrate(tmp_path, capsys):
    anchors = tmp_path / "a.json"
    anchors.write_text(json.dumps({"none_db": 16.0, "continuous_db": 3.7, "burst_db": 12.6}))
    assert main(["calibrate", "--anchors", str(anchors)]) == 0
    fixture = json.loads(capsys.readouterr().out)
    assert fixture["source"]["pair_rate_hz"] > 0
    anchors.write_text("not json")
    assert main(["calibrate", "--anchors", str(anchors)]) == 2
