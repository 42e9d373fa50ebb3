"""Command-line entry point: ``avalanche {geometry,sandpile,simulate,backtest}``.

Exit status is 0 on success, 2 on invalid input (one line on stderr) and 1
on an internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from . import serialize as ser
from .errors import DomainError, InsufficientTail
from .geometry import (
    LengthConvention,
    ManifoldPoint,
    excess_action,
    geodesic_arc,
    geodesic_length,
    linear_path_length,
    minimize_path_length,
)
from .market import simulate
from .sandpile import RngStream, SandpileLattice, drive_to_soc, fit_power_law_tail
from .strategy import CapitalSchedule, QuadraticValuation, backtest

log = logging.getLogger("avalanche")


class UsageError(DomainError):
    pass


def _emit(obj: dict) -> None:
    sys.stdout.write(ser.dumps(obj) + "\n")


def _conventions(name: str):
    if name == "both":
        return list(LengthConvention)
    return [LengthConvention.parse(name)]


# --- geometry -------------------------------------------------------------------


def _points(args):
    return ManifoldPoint(args.mu1, args.sigma1), ManifoldPoint(args.mu2, args.sigma2)


def cmd_geometry(args) -> int:
    q = args.query
    if q == "arc":
        _emit(ser.arc_json(geodesic_arc(*_points(args))))
    elif q == "distance":
        p1, p2 = _points(args)
        convs = _conventions(args.convention)
        if len(convs) == 1:
            _emit(ser.length_json(geodesic_length(p1, p2, convs[0]), convs[0]))
        else:
            _emit({c.value: geodesic_length(p1, p2, c) for c in convs})
    elif q == "linear":
        _emit({"length": linear_path_length(args.sharpe, args.sigma1, args.sigma2), "sharpe": args.sharpe})
    elif q == "excess":
        conv = LengthConvention.parse(args.convention)
        p1 = ManifoldPoint(args.sharpe * args.sigma1, args.sigma1)
        p2 = ManifoldPoint(args.sharpe * args.sigma2, args.sigma2)
        _emit({
            "delta_L": excess_action(p1, p2, conv),
            "L_lin": linear_path_length(args.sharpe, args.sigma1, args.sigma2),
            "L_geo": geodesic_length(p1, p2, conv),
            "convention": conv.value,
        })
    elif q == "oracle":
        p1, p2 = _points(args)
        path, length = minimize_path_length(p1, p2, segments=args.segments)
        if args.path_out:
            ser.write_path(path, args.path_out)
        _emit({
            "length": length,
            "metric_consistent": geodesic_length(p1, p2, LengthConvention.METRIC_CONSISTENT),
            "paper_eq5": geodesic_length(p1, p2, LengthConvention.PAPER_EQ5),
            "segments": len(path) - 1,
        })
    return 0


# --- sandpile -------------------------------------------------------------------


def cmd_sandpile(args) -> int:
    if args.action == "run":
        if args.size < 1 or args.grains < 1:
            raise UsageError("--size and --grains must be >= 1")
        seed = cfgmod.resolve_seed(args.seed, None)
        lattice = SandpileLattice(args.size)
        lattice, events = drive_to_soc(lattice, RngStream(seed), args.grains)
        try:
            fit = fit_power_law_tail(events.size, args.smin).to_dict()
        except InsufficientTail:
            fit = None
        summary = {
            "n_events": len(events),
            "grains": args.grains,
            "grains_lost": lattice.lost,
            "seed": seed,
            "fit": fit,
        }
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            ser.write_events(events, out / "events.csv")
            ser.write_lattice(lattice, out / "lattice.txt")
            ser.write_json(summary, out / "fit.json")
        _emit(summary)
    else:
        path = Path(args.input)
        if not path.is_file():
            raise UsageError(f"no such events file: {path}")
        events = ser.read_events(path)
        _emit(ser.fit_json(fit_power_law_tail(events.size, args.smin)))
    return 0


# --- simulate -------------------------------------------------------------------


def _simulate_one(job):
    cfg, seed, out = job
    traj = simulate(cfg, RngStream(seed))
    out.mkdir(parents=True, exist_ok=True)
    ser.write_trajectory(traj, out / "trajectory.csv")
    (out / "config.effective.txt").write_text(cfgmod.format_config(cfg, seed), encoding="utf-8")
    return {
        "seed": seed,
        "samples": len(traj),
        "avalanches": len(traj.avalanche_segments()),
        "trajectory": str(out / "trajectory.csv"),
    }


def cmd_simulate(args) -> int:
    values = cfgmod.load_file(args.config) if args.config else {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = value.strip()
    if args.path_mode:
        values["path.mode"] = args.path_mode
    if args.n_steps is not None:
        values["n_steps"] = str(args.n_steps)
    cfg, file_seed = cfgmod.build(values)

    out = Path(args.out)
    if args.seeds:
        seeds = [cfgmod.parse_seed(s) for s in args.seeds.split(",") if s.strip()]
        jobs = [(cfg, s, out / f"seed_{s}") for s in seeds]
    else:
        jobs = [(cfg, cfgmod.resolve_seed(args.seed, file_seed), out)]

    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    _emit(results[0] if len(results) == 1 else {"runs": results})
    return 0


# --- backtest -------------------------------------------------------------------


def _schedule(text: str | None, capital: float) -> CapitalSchedule:
    if not text:
        return CapitalSchedule.constant(capital)
    points = []
    for item in text.split(","):
        t, sep, w = item.partition(":")
        if not sep:
            raise UsageError(f"capital schedule items are t:W, got {item!r}")
        points.append((float(t), float(w)))
    return CapitalSchedule(points)


def cmd_backtest(args) -> int:
    path = Path(args.trajectory)
    if not path.is_file():
        raise UsageError(f"no such trajectory file: {path}")
    traj = ser.read_trajectory(path)
    try:
        a, b, c = (float(v) for v in args.valuation.split(","))
    except ValueError:
        raise UsageError("--valuation expects a,b,c") from None
    if args.dt == "trajectory":
        dt = None
    else:
        try:
            dt = float(args.dt)
        except ValueError:
            raise UsageError("--dt must be a number or 'trajectory'") from None
        if not dt > 0:
            raise UsageError("--dt must be > 0")
    result = backtest(
        traj,
        QuadraticValuation(a, b, c),
        LengthConvention.parse(args.convention),
        _schedule(args.capital_schedule, args.capital),
        dt,
    )
    summary = result.summary()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ser.write_ledger(result, out / "ledger.csv")
        ser.write_positions(result, out / "positions.csv")
        ser.write_json(summary, out / "summary.json")
    _emit(summary)
    return 0


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avalanche", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    geo = sub.add_parser("geometry", help="closed-form geometry queries")
    geo.add_argument("query", choices=("arc", "distance", "linear", "excess", "oracle"))
    for name in ("mu1", "mu2"):
        geo.add_argument(f"--{name}", type=float, default=0.0)
    for name in ("sigma1", "sigma2"):
        geo.add_argument(f"--{name}", type=float, default=1.0)
    geo.add_argument("--sharpe", type=float, default=0.0)
    geo.add_argument("--convention", default="paper", help="paper | metric | both (distance only)")
    geo.add_argument("--segments", type=int, default=128)
    geo.add_argument("--path-out", help="write the oracle path as CSV")
    geo.set_defaults(func=cmd_geometry)

    sp = sub.add_parser("sandpile", help="lattice sandpile runs and tail fits")
    sp_sub = sp.add_subparsers(dest="action", required=True)
    run = sp_sub.add_parser("run")
    run.add_argument("--size", type=int, default=64)
    run.add_argument("--grains", type=int, default=100_000)
    run.add_argument("--seed", default=None)
    run.add_argument("--smin", type=float, default=10.0)
    run.add_argument("--out")
    fit = sp_sub.add_parser("fit")
    fit.add_argument("--input", required=True)
    fit.add_argument("--smin", type=float, default=10.0)
    sp.set_defaults(func=cmd_sandpile)

    sim = sub.add_parser("simulate", help="simulate a market trajectory")
    sim.add_argument("--config", help="flat key = value file")
    sim.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    sim.add_argument("--seed", default=None)
    sim.add_argument("--seeds", help="comma-separated seeds, one output directory each")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--path-mode", choices=("geodesic", "euclidean"))
    sim.add_argument("--n-steps", type=int)
    sim.add_argument("--out", default="out")
    sim.set_defaults(func=cmd_simulate)

    bt = sub.add_parser("backtest", help="backtest the excess-action strategy on a trajectory")
    bt.add_argument("--trajectory", required=True)
    bt.add_argument("--convention", default="paper")
    bt.add_argument("--capital", type=float, default=1.0)
    bt.add_argument("--capital-schedule", help="t:W,t:W,... piecewise-constant capital")
    bt.add_argument("--dt", default="1.0", help="accounting interval per step, or 'trajectory'")
    bt.add_argument("--valuation", default="1,1,0", help="a,b,c of V = a mu + b sigma + c mu sigma")
    bt.add_argument("--out")
    bt.set_defaults(func=cmd_backtest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except DomainError as exc:
        sys.stderr.write(f"avalanche: error: {type(exc).__name__}: {str(exc).splitlines()[0]}\n")
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        sys.stderr.write(f"avalanche: internal error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
