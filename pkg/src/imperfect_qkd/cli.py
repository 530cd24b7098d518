"""Command-line entry point.

Exit codes: 0 success, 2 schema/input error, 3 infeasible search constraints.
"""

from __future__ import annotations

import argparse
import sys
import warnings

import numpy as np

from . import io
from .calibration import CalibrationError, calibrate, optimal_attack_times
from .decoy import CountsError, decoy_bounds
from .eve_search import (DEFAULT_ITERATIONS, DEFAULT_RESTARTS, DEFAULT_SEED,
                         InfeasibleConstraintsError, build_constraint_operators, worst_case_search)
from .operators import build_operator_set
from .pipeline import MODES, default_constraints, run_pipeline
from .simulator import (expected_counts, expected_statistics, optimize_protocol_params,
                        synthesize_counts, sweep)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--paper", type=int, choices=io.PAPER_DISTANCES,
                   help="use the bundled dataset for this distance (km)")
    p.add_argument("--counts")
    p.add_argument("--flaws")
    p.add_argument("--config")
    p.add_argument("--security")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    p.add_argument("--iterations", type=int, default=DEFAULT_ITERATIONS)
    p.add_argument("--mode", choices=MODES, default="yield")
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv", "plot-csv"), default="json")


def _inputs(a) -> dict:
    if a.paper:
        d = io.paper_dataset(a.paper)
    else:
        d = {}
    if a.counts:
        d["counts"] = io.load_counts(a.counts)
    if a.config:
        d["config"], d["extra"] = io.load_config(a.config)
    loss = d.get("extra", {}).get("loss_db")
    if a.flaws:
        d["flaws"] = io.load_flaws(a.flaws, loss)
    if a.security or "security" not in d:
        d["security"] = io.load_security(a.security)
    missing = [k for k in ("counts", "config", "flaws") if k not in d]
    if missing:
        raise io.SchemaError(f"missing inputs: {', '.join(missing)} (use --paper or the flags)")
    return d


def _write(text: str, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_calibrate(a):
    if a.paper or not all((a.state_prep, a.signal, a.decoy, a.trojan, a.scan)):
        inp = io.paper_calibration_inputs()
    else:
        inp = {}
    if a.state_prep:
        inp["prep"] = io.load_state_prep(a.state_prep)
    if a.signal:
        inp["signal"] = io.load_trace(a.signal, "signal")
    if a.decoy:
        inp["decoy"] = io.load_trace(a.decoy, "decoy")
    if a.trojan:
        inp["trojan"] = io.load_trojan(a.trojan)
    if a.scan:
        inp["scan"] = io.load_scan(a.scan, a.t1, a.t2, a.q_z)
    if a.auto_times:
        t1, t2 = optimal_attack_times(inp["scan"])
        inp["scan"] = io.load_scan(a.scan or io.FIXTURES / "efficiency_scan.csv", t1, t2, a.q_z)
    res = calibrate(inp["prep"], inp["signal"], inp["decoy"], inp["trojan"], inp["scan"])
    _write(io.dumps(res.to_dict()) + "\n", a.out)


def cmd_bounds(a):
    d = _inputs(a)
    b = decoy_bounds(d["counts"], d["config"], d["security"], d["flaws"].d_mu_nu,
                     d["flaws"].eta_bob_cal)
    _write(io.dumps(b.to_dict()) + "\n", a.out)


def cmd_search(a):
    d = _inputs(a)
    b = decoy_bounds(d["counts"], d["config"], d["security"], d["flaws"].d_mu_nu,
                     d["flaws"].eta_bob_cal)
    ops = build_constraint_operators(build_operator_set(d["flaws"]))
    cs = default_constraints(b, d["counts"], a.mode)
    r = worst_case_search(ops, cs, a.restarts, a.iterations, a.seed)
    _write(io.dumps({"constraints": cs.to_dict(), "result": r.to_dict()}) + "\n", a.out)


def cmd_keyrate(a):
    d = _inputs(a)
    rep = run_pipeline(d["counts"], d["flaws"], d["config"], d["security"], a.restarts,
                       a.iterations, a.seed, a.mode)
    fmt = "json" if a.format == "plot-csv" else a.format
    _write(io.emit(rep, fmt, extras=[d.get("extra")]), a.out)


def _channel_config(a):
    ch = io.load_channel(a.channel) if a.channel else io.load_channel(io.FIXTURES / "channel.json")
    if a.config:
        cfg, extra = io.load_config(a.config)
    else:
        cfg, extra = io.load_config(io.FIXTURES / f"config_{a.paper or 25}km.json")
    dist = a.distance if a.distance is not None else extra.get("distance_km", 0.0)
    return ch.at(dist), cfg


def cmd_simulate(a):
    ch, cfg = _channel_config(a)
    stats = expected_statistics(ch, cfg)
    out = {"channel": ch.to_dict(), "config": cfg.to_dict(),
           "statistics": {k: getattr(stats, k) for k in ("Q_mu", "Q_nu", "E_mu", "E_nu", "Y1", "e1")},
           "expected_counts": expected_counts(ch, cfg).to_dict()}
    if a.synthesize:
        out["synthetic_counts"] = synthesize_counts(stats, cfg, a.seed).to_dict()
    _write(io.dumps(out) + "\n", a.out)


def cmd_optimize(a):
    ch, cfg = _channel_config(a)
    flaws = io.load_flaws(a.flaws or io.FIXTURES / "flaws.json")
    grid = io.load_grid(a.grid) if a.grid else {"mu": [cfg.mu], "nu": [cfg.nu],
                                                "p_mu": [cfg.p_mu], "q_z": [cfg.q_z]}
    res = optimize_protocol_params(ch, flaws, cfg.N, grid, io.load_security(a.security),
                                   a.method, a.restarts)
    _write(io.dumps({"best": res.best, "zero_rate": res.zero_rate, "table": res.table}) + "\n",
           a.out)


def cmd_sweep(a):
    ch, cfg = _channel_config(a)
    flaws = io.load_flaws(a.flaws or io.FIXTURES / "flaws.json")
    dists = np.linspace(a.start, a.stop, a.points)
    rows = sweep(ch, cfg, flaws, dists, io.load_security(a.security), a.restarts)
    _write(io.emit(rows, "plot-csv" if a.format != "json" else "json"), a.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imperfect-qkd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="flaw parameters from measurement files")
    _common(p)
    p.add_argument("--state-prep")
    p.add_argument("--signal")
    p.add_argument("--decoy")
    p.add_argument("--trojan")
    p.add_argument("--scan")
    p.add_argument("--t1", type=float, default=-300.0)
    p.add_argument("--t2", type=float, default=375.0)
    p.add_argument("--q-z", type=float, default=0.9)
    p.add_argument("--auto-times", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    for name, fn, text in (("bounds", cmd_bounds, "finite-key decoy bounds"),
                           ("search", cmd_search, "worst-case adversary search"),
                           ("keyrate", cmd_keyrate, "full analysis report")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.set_defaults(func=fn)

    for name, fn, text in (("simulate", cmd_simulate, "expected link statistics"),
                           ("optimize", cmd_optimize, "grid search of protocol parameters"),
                           ("sweep", cmd_sweep, "key rate versus distance")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--channel")
        p.add_argument("--distance", type=float)
        if name == "simulate":
            p.add_argument("--synthesize", action="store_true")
        if name == "optimize":
            p.add_argument("--grid")
            p.add_argument("--method", choices=("refined", "gllp"), default="refined")
        if name == "sweep":
            p.add_argument("--start", type=float, default=0.0)
            p.add_argument("--stop", type=float, default=90.0)
            p.add_argument("--points", type=int, default=10)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    if a.command in ("optimize", "sweep") and a.restarts == DEFAULT_RESTARTS:
        a.restarts = 16
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            a.func(a)
    except InfeasibleConstraintsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (io.SchemaError, CountsError, CalibrationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
