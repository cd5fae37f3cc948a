"""Command-line entry point: ``qwire run | preset | calibrate | ctl dump``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..photonics import CarAnchors, calibrate
from .scenario import PRESETS, ConfigError, Scenario, preset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3


def _cmd_run(args) -> int:
    from .report import checks, run_scenario, write_outputs

    scenario = Scenario.load(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    report, _ = run_scenario(scenario, monte_carlo=args.monte_carlo)
    out = Path(args.out or f"qwire-run-{scenario.name}")
    files = write_outputs(report, out)
    if not args.no_plots:
        from .plotting import render_figures
        render_figures(report, out)
    print(f"wrote {', '.join(str(p) for p in files.values())}")
    print("---- summary ----")
    for c in report["circuits"]:
        req = c["transport"]["requests"]
        print(f"circuit {c['circuit_id']} {'->'.join(c['path'])} labels={c['labels']} "
              f"delivered={req['delivered']} gave_up={req['gave_up']} in_flight={req['in_flight']}")
    for link_id, link in report["links"].items():
        print(f"link {link_id}: alarm={link['state']['alarm']}")
    if args.check:
        results = checks(report)
        print("---- checks ----")
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail and not ok else ""))
        if not all(ok for _, ok, _ in results):
            return EXIT_CHECK
    return EXIT_OK


def _cmd_preset(args) -> int:
    sys.stdout.write(preset(args.name).to_json())
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    anchors = CarAnchors()
    if args.anchors:
        try:
            anchors = CarAnchors.from_dict(json.loads(Path(args.anchors).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError([("anchors", str(exc))]) from exc
    try:
        cal = calibrate(anchors)
    except ValueError as exc:
        raise ConfigError([("anchors", f"calibration failed: {exc}")]) from exc
    text = json.dumps(cal.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_ctl_dump(args) -> int:
    path = Path(args.run_dir) / "report.json"
    try:
        report = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError([("run_dir", f"cannot read {path}: {exc}")]) from exc
    ctl = report["controller"]
    dump = {
        "circuits": ctl["circuits"],
        "links": ctl["links"],
        "alarms": report["alarms"],
        "tables": {n: v["table"] for n, v in report["nodes"].items()},
        "tables_converged": ctl["tables_converged"],
    }
    sys.stdout.write(json.dumps(dump, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qwire", description="Quantum Wrapper network simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write report.json, metrics.csv, alarms.json")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default ./qwire-run-<name>)")
    run.add_argument("--check", action="store_true", help="exit 3 if any self-check fails")
    run.add_argument("--monte-carlo", action="store_true", help="also run the Monte Carlo cross-check")
    run.add_argument("--no-plots", action="store_true")
    run.set_defaults(func=_cmd_run)

    pre = sub.add_parser("preset", help="print a preset scenario as JSON")
    pre.add_argument("name", help=", ".join(PRESETS))
    pre.set_defaults(func=_cmd_preset)

    cal = sub.add_parser("calibrate", help="fit the photonics model to CAR anchors")
    cal.add_argument("--anchors", help="JSON file with none_db/continuous_db/burst_db/...")
    cal.add_argument("--out", help="write the fixture here instead of stdout")
    cal.set_defaults(func=_cmd_calibrate)

    ctl = sub.add_parser("ctl", help="controller state tools")
    ctl_sub = ctl.add_subparsers(dest="ctl_command", required=True)
    dump = ctl_sub.add_parser("dump", help="print link-state map, alarms and circuits of a run")
    dump.add_argument("run_dir")
    dump.set_defaults(func=_cmd_ctl_dump)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for path, msg in exc.errors:
            print(f"  {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
