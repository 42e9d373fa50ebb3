"""CSV / JSON / plain-text formats for everything the package emits.

Floats are written with ``repr`` so every file re-parses to bit-identical
values, and writers never embed timestamps, keeping repeated runs
byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import DomainError
from .geometry import DiscretePath, GeodesicArc, LengthConvention
from .market import MarketTrajectory
from .sandpile import EventLog, SandpileLattice, TailFit
from .strategy import BacktestResult, HedgePosition, LedgerEntry


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_rows(target, header, rows) -> None:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    Path(target).write_text(buf.getvalue(), encoding="utf-8")


def _read_rows(source, header):
    with open(source, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        got = next(reader, None)
        if got != list(header):
            raise DomainError(f"{source}: expected header {','.join(header)}, got {got}")
        return [row for row in reader if row]


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=False)


# geometry

def write_path(path: DiscretePath, target) -> None:
    _write_rows(target, ("mu", "sigma"), ((_num(m), _num(s)) for m, s in zip(path.mu, path.sigma)))


def read_path(source) -> DiscretePath:
    rows = _read_rows(source, ("mu", "sigma"))
    return DiscretePath([float(r[0]) for r in rows], [float(r[1]) for r in rows])


def arc_json(arc: GeodesicArc) -> dict:
    return arc.to_dict()


def arc_from_json(obj: dict) -> GeodesicArc:
    return GeodesicArc(float(obj["mu_c"]), float(obj["R"]))


def length_json(length: float, conv: LengthConvention) -> dict:
    return {"length": length, "convention": LengthConvention.parse(conv).value}


# sandpile

def write_events(log: EventLog, target) -> None:
    rows = ((_num(t), _num(s), _num(g)) for t, s, g in zip(log.time, log.size, log.grains_lost))
    _write_rows(target, ("time", "size", "grains_lost"), rows)


def read_events(source) -> EventLog:
    rows = _read_rows(source, ("time", "size", "grains_lost"))
    sizes = [r[1] for r in rows]
    integral = all(s.lstrip("-").isdigit() for s in sizes)
    return EventLog(
        [int(r[0]) for r in rows],
        np.array([int(s) for s in sizes], dtype=np.int64) if integral else np.array(sizes, dtype=float),
        [int(r[2]) for r in rows],
    )


def write_lattice(lattice: SandpileLattice, target) -> None:
    lines = [f"# threshold {lattice.threshold}"]
    lines += [" ".join(str(int(h)) for h in row) for row in lattice.grains]
    Path(target).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_lattice(source) -> SandpileLattice:
    threshold = 4
    rows = []
    for line in Path(source).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "threshold":
                threshold = int(parts[1])
        elif line.strip():
            rows.append([int(v) for v in line.split()])
    return SandpileLattice.from_grid(np.array(rows, dtype=np.int64), threshold)


def fit_json(fit: TailFit) -> dict:
    return fit.to_dict()


# market

def write_trajectory(traj: MarketTrajectory, target) -> None:
    rows = (
        (_num(t), _num(p), _num(m), _num(s), r.value, pm.value)
        for t, p, m, s, r, pm in traj.rows()
    )
    _write_rows(target, MarketTrajectory.columns, rows)


def read_trajectory(source) -> MarketTrajectory:
    rows = _read_rows(source, MarketTrajectory.columns)
    cols = list(zip(*rows)) if rows else [()] * 6
    return MarketTrajectory(
        t=[float(v) for v in cols[0]],
        price=[float(v) for v in cols[1]],
        mu=[float(v) for v in cols[2]],
        sigma=[float(v) for v in cols[3]],
        regime=cols[4],
        path_mode=cols[5],
    )


# strategy

LEDGER_COLUMNS = ("t", "delta_L", "increment", "cumulative")
POSITION_COLUMNS = ("t", "stock_units", "vega_units", "ratio")


def write_ledger(result: BacktestResult, target) -> None:
    rows = ((_num(e.t), _num(e.delta_L), _num(e.increment), _num(e.cumulative)) for e in result.ledger.entries)
    _write_rows(target, LEDGER_COLUMNS, rows)


def read_ledger(source) -> list[LedgerEntry]:
    return [LedgerEntry(*(float(v) for v in row)) for row in _read_rows(source, LEDGER_COLUMNS)]


def write_positions(result: BacktestResult, target) -> None:
    rows = (
        (_num(t), _num(h.stock_units), _num(h.vega_units), _num(h.ratio))
        for t, h in zip(result.position_times, result.positions)
    )
    _write_rows(target, POSITION_COLUMNS, rows)


def read_positions(source) -> list[tuple[float, HedgePosition]]:
    out = []
    for row in _read_rows(source, POSITION_COLUMNS):
        t, stock, vega, ratio = (float(v) for v in row)
        out.append((t, HedgePosition(stock, vega, ratio)))
    return out


def write_json(obj: dict, target) -> None:
    Path(target).write_text(dumps(obj) + "\n", encoding="utf-8")


def read_json(source) -> dict:
    return json.loads(Path(source).read_text(encoding="utf-8"))
