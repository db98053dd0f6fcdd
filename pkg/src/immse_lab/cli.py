"""Command-line entry point: ``immse verify | sweep | list``.

Exit codes: 0 when every verdict passes, 1 when any verdict fails, 2 for
configuration or usage errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

from .catalog import (
    BUILTINS, ConfigError, Scenario, config_hash, resolve, scenario_to_dict, with_overrides,
)
from .identities import CSV_COLUMNS, ScenarioError, convergence_sweep, verify_identity

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

_CSV_HELP = (
    "CSV columns: " + ", ".join(CSV_COLUMNS) + ".  Values are in the scenario's own "
    "parameterization (snr-form for snr scenarios); rho is the channel gain (t for "
    "DEBRUIJN); rhs is the judged total; se is the combined standard error of the gap. "
    "Sweep CSVs prepend columns axis, value."
)


@dataclass
class RunManifest:
    version: str
    config_hash: str
    seeds: list
    stages: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"tool": "immse_lab", "version": self.version, "config_hash": self.config_hash,
                "seeds": self.seeds, "stages": self.stages, "outputs": self.outputs}


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def _run_one(sc: Scenario):
    return verify_identity(sc.kind, sc.config)


def _timed_run(sc: Scenario):
    t0 = time.perf_counter()
    rep = _run_one(sc)
    return rep, time.perf_counter() - t0


def _load(args) -> list[Scenario]:
    scenarios = resolve(args.scenario)
    over = {"seed": args.seed, "N": args.n, "K": args.k, "m": args.m, "h": args.h,
            "z": args.tol_z, "rhs_form": args.rhs_form, "backend": args.backend}
    return [with_overrides(sc, **over) for sc in scenarios]


def _report_json(sc: Scenario, rep) -> str:
    doc = {"scenario": scenario_to_dict(sc), "report": rep.to_dict()}
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _csv_text(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _run_all(scenarios, jobs: int):
    if jobs > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_timed_run, scenarios))
    return [_timed_run(sc) for sc in scenarios]


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    scenarios = _load(args)
    t_parse = time.perf_counter() - t0
    results = _run_all(scenarios, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t1 = time.perf_counter()
    files = []
    for sc, (rep, _) in zip(scenarios, results):
        p = out / f"{_slug(sc.name)}.json"
        p.write_text(_report_json(sc, rep))
        files.append(p.name)
        v = rep.values
        print(f"{rep.verdict.upper():4s}  {sc.name}  {sc.kind}  lhs={v.lhs:.6g}  "
              f"rhs={v.rhs_total:.6g}  gap={v.gap:.3g}  se={v.combined_se:.3g}"
              + (f"  ({rep.diagnosis})" if rep.diagnosis else ""))
    summary = out / "summary.csv"
    summary.write_text(_csv_text([r.csv_row() for r, _ in results], CSV_COLUMNS))
    files.append(summary.name)
    manifest = RunManifest(_version(), config_hash(scenarios), [sc.config.seed for sc in scenarios])
    manifest.stages = {"parse": t_parse,
                       "verify": {sc.name: dt for sc, (_, dt) in zip(scenarios, results)},
                       "write": time.perf_counter() - t1}
    manifest.outputs = files + ["manifest.json"]
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    return EXIT_PASS if all(r.passed for r, _ in results) else EXIT_FAIL


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name) or "scenario"


_INT_AXES = ("N", "K", "m")


def _grid(text: str, axis: str) -> list:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("empty grid")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"grid values must be numbers: {text!r}") from None
    if axis in _INT_AXES:
        if any(v != int(v) for v in vals):
            raise ConfigError(f"{axis} grid must hold integers")
        vals = [int(v) for v in vals]
    return vals


def cmd_sweep(args) -> int:
    grid = _grid(args.grid, args.axis)
    scenarios = _load(args)
    rows, ok = [], True
    for sc in scenarios:
        try:
            reports = convergence_sweep(sc.kind, sc.config, args.axis, grid)
        except ScenarioError as exc:
            raise ConfigError(str(exc)) from None
        for value, rep in zip(grid, reports):
            rows.append({"axis": args.axis, "value": value, **rep.csv_row()})
            ok &= rep.passed
    text = _csv_text(rows, ("axis", "value") + CSV_COLUMNS)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_list(args) -> int:
    if args.json:
        doc = [{"name": n, "identity": sc.kind, "description": sc.description,
                "scenario": scenario_to_dict(sc)} for n, sc in BUILTINS.items()]
        print(json.dumps(doc, indent=2))
    else:
        width = max(map(len, BUILTINS))
        for n, sc in BUILTINS.items():
            print(f"{n:<{width}}  {sc.kind:<16}  {sc.description}")
    return EXIT_PASS


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", help="scenario JSON file or built-in name (see `list`)")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--n", type=int, help="outer Monte Carlo paths N")
    p.add_argument("--k", type=int, help="inner posterior draws K")
    p.add_argument("--m", type=int, help="continuous-time step count m")
    p.add_argument("--h", type=float, help="finite-difference step")
    p.add_argument("--tol-z", type=float, help="standard errors allowed in the gap")
    p.add_argument("--rhs-form", choices=("paper", "complete"),
                   help="judge the two-term right-hand side or add the cross term")
    p.add_argument("--backend", choices=("mc", "oracle"))
    p.add_argument("--jobs", type=int, default=1, help="scenarios run in parallel")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="immse", description="Check information/estimation identities numerically.",
        epilog=_CSV_HELP)
    sub = parser.add_subparsers(dest="command", required=True)
    pv = sub.add_parser("verify", help="run scenarios and write reports", epilog=_CSV_HELP)
    _add_common(pv)
    pv.add_argument("--out", default="immse-reports",
                    help="directory for <label>.json, summary.csv and manifest.json")
    pv.set_defaults(func=cmd_verify)
    ps = sub.add_parser("sweep", help="one report per grid value, as long-format CSV",
                        epilog=_CSV_HELP)
    _add_common(ps)
    ps.add_argument("--axis", required=True, choices=("N", "K", "m", "h", "rho", "snr", "t"))
    ps.add_argument("--grid", required=True, help="comma-separated values")
    ps.add_argument("--out", help="CSV file (default: stdout)")
    ps.set_defaults(func=cmd_sweep)
    pl = sub.add_parser("list", help="show built-in scenarios")
    pl.add_argument("--json", action="store_true", help="machine-readable catalog")
    pl.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OverflowError, FloatingPointError, ArithmeticError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
