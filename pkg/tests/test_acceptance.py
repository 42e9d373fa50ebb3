"""Acceptance criteria, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed even when output capture is on.
"""

import math
import time

import mpmath
import numpy as np
import pytest

from avalanche import serialize as ser
from avalanche.errors import DomainError
from avalanche.geometry import (
    LengthConvention,
    ManifoldPoint,
    excess_action,
    geodesic_arc,
    geodesic_length,
    infinitesimal_excess,
    minimize_path_length,
)
from avalanche.market import (
    MappingKind,
    MarketState,
    OffManifoldState,
    PathMode,
    Regime,
    SimulationConfig,
    VolMapping,
    apply_avalanche,
    relax_between_avalanches,
    relax_excursion,
    simulate,
)
from avalanche.sandpile import RngStream, SandpileLattice, drive_to_soc, fit_power_law_tail
from avalanche.strategy import QuadraticValuation, backtest, realized_gap

from conftest import brute_force_stabilize

PAPER = LengthConvention.PAPER_EQ5
METRIC = LengthConvention.METRIC_CONSISTENT


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail

    return _report


def _pairs(rng, n, mu_max, lo, hi):
    a = rng.uniform([-mu_max, lo], [mu_max, hi], size=(n, 2))
    b = rng.uniform([-mu_max, lo], [mu_max, hi], size=(n, 2))
    return [(ManifoldPoint(*x), ManifoldPoint(*y)) for x, y in zip(a.tolist(), b.tolist())]


def test_1_geometry_closed_forms(report):
    pairs = _pairs(np.random.default_rng(1), 1000, 10.0, 0.1, 10.0)
    t0 = time.perf_counter()
    residual = 0.0
    symmetric = True
    lengths = []
    for p1, p2 in pairs:
        arc = geodesic_arc(p1, p2)
        residual = max(residual, arc.residual(p1), arc.residual(p2))
        d12 = geodesic_length(p1, p2, PAPER)
        symmetric &= d12 == geodesic_length(p2, p1, PAPER)
        symmetric &= geodesic_length(p1, p2, METRIC) == geodesic_length(p2, p1, METRIC)
        lengths.append(d12)
    elapsed = time.perf_counter() - t0

    mpmath.mp.dps = 40
    worst = 0.0
    for (p1, p2), d in zip(pairs, lengths):
        x = (mpmath.mpf(p1.mu) - p2.mu) ** 2 + 2 * (mpmath.mpf(p1.sigma) - p2.sigma) ** 2
        ref = mpmath.acosh(1 + x / (4 * mpmath.mpf(p1.sigma) * p2.sigma))
        worst = max(worst, float(abs(d - ref) / max(1, abs(ref))))
    ok = residual < 1e-9 and symmetric and worst < 1e-12 and elapsed < 1.0
    report(1, ok, f"max residual {residual:.2e}, symmetric={symmetric}, max arcosh err {worst:.2e}, {elapsed:.3f}s")


def test_2_oracle_equivalence(report):
    pairs = _pairs(np.random.default_rng(2), 100, 5.0, 0.5, 5.0)
    t0 = time.perf_counter()
    worst = 0.0
    ratios = []
    for p1, p2 in pairs:
        _, length = minimize_path_length(p1, p2)
        worst = max(worst, abs(length - geodesic_length(p1, p2, METRIC)))
        paper = geodesic_length(p1, p2, PAPER)
        if paper > 0.5:
            ratios.append(length / paper)
    elapsed = time.perf_counter() - t0
    lo, hi = min(ratios), max(ratios)
    ok = worst < 1e-4 and 1.41 <= lo and hi <= 1.42 and elapsed < 60.0
    report(2, ok, f"max |oracle - metric| {worst:.2e}, oracle/paper ratio in [{lo:.6f}, {hi:.6f}] "
                  f"over {len(ratios)} pairs, {elapsed:.1f}s")


def test_3_excess_reproduction(report):
    value = excess_action(ManifoldPoint(0, 1), ManifoldPoint(0, 2), PAPER)
    err0 = abs(value - 0.2871109629086019)
    rel = {}
    for eps in (0.01, 0.001):
        finite = excess_action(ManifoldPoint(0, 1), ManifoldPoint(0, 1 + eps), PAPER)
        rel[eps] = abs(infinitesimal_excess(0.0, eps, 1.0) / finite - 1)
    ok = err0 < 1e-9 and rel[0.01] < 0.02 and rel[0.001] < 0.002
    report(3, ok, f"delta_L={value!r} (err {err0:.1e}), rel err {rel[0.01]:.2e} at 1e-2, {rel[0.001]:.2e} at 1e-3")


def test_4_sandpile(report):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(200):
        w, h = rng.integers(1, 6, size=2)
        grid = rng.integers(0, 4, size=(h, w))
        sites = [(int(rng.integers(w)), int(rng.integers(h))) for _ in range(int(rng.integers(1, 30)))]
        forward = SandpileLattice.from_grid(grid)
        for site in sites:
            forward.add_grain(site)
        backward = SandpileLattice.from_grid(grid)
        for site in reversed(sites):
            backward.add_grain(site)
        pile = grid.copy()
        for x, y in sites:
            pile[y, x] += 1
        want, _, _ = brute_force_stabilize(pile)
        mismatches += not (np.array_equal(forward.grains, want) and np.array_equal(backward.grains, want))

    big, log = drive_to_soc(SandpileLattice(32), RngStream(5), 1_000_000)
    conserved = big.total == 1_000_000 - int(log.grains_lost.sum()) and big.ledger_balanced()

    t0 = time.perf_counter()
    _, events = drive_to_soc(SandpileLattice(64), RngStream(1), 500_000)
    elapsed = time.perf_counter() - t0
    fit = fit_power_law_tail(events.size, 10.0)
    ok = mismatches == 0 and conserved and elapsed < 60.0 and 1.0 <= fit.tau_hat <= 1.6
    report(4, ok, f"abelian mismatches {mismatches}/200, conservation={conserved}, 64x64 run {elapsed:.1f}s, "
                  f"tau_hat={fit.tau_hat:.4f} (n_tail={fit.n_tail})")


def test_5_estimator_consistency(report):
    rng = np.random.default_rng(5)
    got = {}
    for tau in (1.2, 1.5, 2.5):
        u = rng.random(100_000)
        got[tau] = fit_power_law_tail((1.0 - u) ** (-1.0 / (tau - 1.0)), 1.0).tau_hat
    ok = all(abs(got[t] - t) <= 0.05 for t in got)
    report(5, ok, ", ".join(f"tau {t} -> {v:.4f}" for t, v in got.items()))


def test_6_market_dynamics(report, tmp_path):
    rng = np.random.default_rng(6)
    drops = relaxes = True
    for _ in range(2000):
        kind = list(MappingKind)[int(rng.integers(3))]
        state = MarketState.on_ray(rng.uniform(0.01, 5), rng.uniform(1e-3, 3), rng.uniform(1, 1e3))
        post = apply_avalanche(state, float(rng.uniform(1e-6, 1e3)), VolMapping(kind))
        drops &= post.price < state.price
        m = VolMapping(kappa=float(rng.uniform(0, 5)), sigma_bar=0.2)
        s = MarketState.on_ray(rng.uniform(0.2 + 1e-9, 10), 0.5, 100.0)
        for _ in range(5):
            nxt = relax_between_avalanches(s, float(rng.uniform(1e-3, 5)), m)
            relaxes &= nxt.sigma <= s.sigma
            s = nxt

    identical = True
    for source in ("slope", "lattice"):
        cfg = SimulationConfig(n_steps=2000, source=source, lattice_size=16, lattice_burn_in=5000, onsager=True)
        blobs = []
        for run in ("a", "b"):
            ser.write_trajectory(simulate(cfg, RngStream(123)), tmp_path / f"{source}_{run}.csv")
            blobs.append((tmp_path / f"{source}_{run}.csv").read_bytes())
        identical &= blobs[0] == blobs[1]
    ok = drops and relaxes and identical
    report(6, ok, f"strict drop={drops}, relax non-increasing={relaxes}, byte-identical repeats={identical}")


def test_7_strategy(report):
    base = dict(n_steps=10_000, source="slope", sharpe=0.5)
    harvest = {}
    streams = []
    times = []
    for kind in MappingKind:
        cfg = SimulationConfig(**base, path_mode=PathMode.EUCLIDEAN, mapping=VolMapping(kind))
        traj = simulate(cfg, RngStream(77))
        streams.append([(e.step, e.size) for e in traj.events])
        t0 = time.perf_counter()
        harvest[kind.value] = backtest(traj, conv=PAPER).cumulative
        times.append(time.perf_counter() - t0)
    same_stream = all(s == streams[0] for s in streams) and len(streams[0]) > 0

    geo = simulate(SimulationConfig(**base, path_mode=PathMode.GEODESIC), RngStream(77))
    t0 = time.perf_counter()
    geo_cum = backtest(geo, conv=PAPER).cumulative
    times.append(time.perf_counter() - t0)

    vertical = simulate(SimulationConfig(**{**base, "sharpe": 0.0}, path_mode=PathMode.EUCLIDEAN), RngStream(77))
    t0 = time.perf_counter()
    vert_cum = backtest(vertical, conv=METRIC).cumulative
    times.append(time.perf_counter() - t0)

    ok = (
        same_stream
        and all(v > 0 for v in harvest.values())
        and abs(geo_cum) < 1e-9
        and abs(vert_cum) < 1e-9
        and max(times) < 10.0
    )
    parts = ", ".join(f"{k}={v:.6g}" for k, v in harvest.items())
    report(7, ok, f"euclidean harvest {parts} on {len(streams[0])} shared events; geodesic={geo_cum:.1e}; "
                  f"S=0 metric={vert_cum:.1e}; slowest backtest {max(times):.2f}s")


def test_8_geodesic_neutrality(report):
    rng = np.random.default_rng(8)
    provider = QuadraticValuation(1.0, 1.0, 0.3)
    worst = math.inf
    checked = 0
    while checked < 50:
        p1, p2 = _pairs(rng, 1, 5.0, 0.5, 5.0)[0]
        if abs(p1.mu - p2.mu) < 0.1:
            continue
        arc = geodesic_arc(p1, p2)
        phi = float(rng.uniform(0.2, math.pi - 0.2))
        if abs(phi - math.pi / 2) < 0.1:
            continue  # stay clear of the apex where the slope is singular
        p = arc.point_at(phi)
        gaps = []
        for j in range(4):
            q = arc.point_at(phi + 0.02 * 2.0**-j)
            gaps.append(abs(realized_gap(p, q, arc, provider)))
        orders = [math.log2(gaps[i] / gaps[i + 1]) for i in range(3)]
        worst = min(worst, min(orders))
        checked += 1
    report(8, worst >= 1.9, f"min observed order {worst:.4f} over {checked} on-arc points")


def test_9_onsager(report):
    try:
        OffManifoldState([0.1, 0.1], [[1.0, 0.3], [0.1, 1.0]])
        rejected = False
    except DomainError:
        rejected = True

    cfg = SimulationConfig()
    eta0 = np.array([0.3, -0.7])
    off = OffManifoldState(eta0, cfg.transport)
    norms = [np.linalg.norm(eta0)] + [np.linalg.norm(o.eta) for o in relax_excursion(off, cfg.onsager_dt, cfg.onsager_steps)]
    monotone = bool(np.all(np.diff(norms) < 0))
    final = norms[-1] / norms[0]

    coupled = OffManifoldState(eta0, [[2.0, 1.0], [1.0, 2.0]])
    cn = [np.linalg.norm(eta0)] + [np.linalg.norm(o.eta) for o in relax_excursion(coupled, cfg.onsager_dt, cfg.onsager_steps)]
    monotone &= bool(np.all(np.diff(cn) < 0))
    final = max(final, cn[-1] / cn[0])

    ok = rejected and monotone and final < 1e-6
    report(9, ok, f"asymmetric rejected={rejected}, monotone={monotone}, final/initial {final:.2e} "
                  f"after {cfg.onsager_steps} steps of dt={cfg.onsager_dt}")
