"""Dynamic arbitrage between the constant-Sharpe ray and the geodesic.

When the market moves along the ray instead of the geodesic it travels an
excess length ``delta_L = L_lin - L_geo``.  The strategy stays neutral to the
geodesic direction (long the underlying against a short vega leg in the
ratio ``nu / Delta``) and books ``W_t * delta_L * dt`` per rebalancing step.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Protocol

from .errors import DomainError, SharpeMismatch, ZeroDelta
from .geometry import (
    GeodesicArc,
    LengthConvention,
    ManifoldPoint,
    common_sharpe,
    excess_action,
    geodesic_length,
    linear_path_length,
    local_geodesic_slope,
)
from .market import MarketTrajectory, PathMode, Regime, price_rule, transition_path

ZERO_DELTA_TOL = 1e-14


class SensitivityProvider(Protocol):
    def delta(self, p: ManifoldPoint) -> float: ...

    def vega(self, p: ManifoldPoint) -> float: ...


@dataclass(frozen=True)
class QuadraticValuation:
    """Test valuation ``V = a mu + b sigma + c mu sigma``."""

    a: float = 1.0
    b: float = 1.0
    c: float = 0.0

    def value(self, p: ManifoldPoint) -> float:
        return self.a * p.mu + self.b * p.sigma + self.c * p.mu * p.sigma

    def delta(self, p: ManifoldPoint) -> float:
        return self.a + self.c * p.sigma

    def vega(self, p: ManifoldPoint) -> float:
        return self.b + self.c * p.mu


@dataclass(frozen=True)
class HedgePosition:
    stock_units: float
    vega_units: float
    ratio: float


def _sensitivities(p: ManifoldPoint, provider: SensitivityProvider) -> tuple[float, float]:
    d, v = float(provider.delta(p)), float(provider.vega(p))
    if not (math.isfinite(d) and math.isfinite(v)):
        raise DomainError(f"non-finite sensitivities at {p}: delta={d}, vega={v}")
    return d, v


def hedge_ratio(p: ManifoldPoint, provider: SensitivityProvider) -> HedgePosition:
    """Long ``dV/dmu`` of stock, short ``dV/dsigma`` of vega; ratio ``nu / Delta``."""
    delta, vega = _sensitivities(p, provider)
    if abs(delta) < ZERO_DELTA_TOL:
        if vega != 0.0:
            raise ZeroDelta(f"delta vanishes at {p} while vega = {vega}")
        return HedgePosition(delta, vega, 0.0)
    return HedgePosition(delta, vega, vega / delta)


def prediction_gap(
    p: ManifoldPoint,
    step_eps: float,
    sharpe: float,
    arc: GeodesicArc,
    provider: SensitivityProvider,
) -> float:
    """First-order valuation difference between a geodesic step and a ray step.

    Both steps raise sigma by ``step_eps``; the ray step moves mu by
    ``sharpe * step_eps``, the geodesic step by its local slope times
    ``step_eps``.
    """
    if not step_eps > 0:
        raise DomainError(f"step_eps must be > 0, got {step_eps}")
    slope = local_geodesic_slope(p, arc)
    delta, vega = _sensitivities(p, provider)
    mu_geo = p.mu + slope * step_eps
    mu_lin = p.mu + sharpe * step_eps
    sigma_geo = sigma_lin = p.sigma + step_eps
    return delta * (mu_geo - mu_lin) + vega * (sigma_geo - sigma_lin)


def realized_gap(
    p: ManifoldPoint,
    q: ManifoldPoint,
    arc: GeodesicArc,
    provider: SensitivityProvider,
) -> float:
    """Valuation gap between the realised move ``p -> q`` and the local geodesic prediction.

    The prediction moves sigma as realised and mu along the tangent slope at
    ``p``.  A hedge built from the slope is neutral to the geodesic, so for
    ``q`` on ``arc`` the gap is second order in ``q.sigma - p.sigma``.
    """
    slope = local_geodesic_slope(p, arc)
    delta, _ = _sensitivities(p, provider)
    return delta * ((q.mu - p.mu) - slope * (q.sigma - p.sigma))


# --- ledger ---------------------------------------------------------------------


class CapitalSchedule:
    """Piecewise-constant capital ``W_t``: each ``(t_i, W_i)`` holds from ``t_i`` on."""

    def __init__(self, breakpoints=((0.0, 1.0),)):
        pts = sorted((float(t), float(w)) for t, w in breakpoints)
        if not pts:
            raise DomainError("capital schedule needs at least one breakpoint")
        if any(not (w > 0 and math.isfinite(w)) for _, w in pts):
            raise DomainError("capital must be finite and > 0")
        self._t = [t for t, _ in pts]
        self._w = [w for _, w in pts]

    @classmethod
    def constant(cls, w: float = 1.0) -> "CapitalSchedule":
        return cls(((-math.inf, w),))

    def __call__(self, t: float) -> float:
        i = bisect.bisect_right(self._t, t) - 1
        return self._w[max(i, 0)]


@dataclass(frozen=True)
class LedgerEntry:
    t: float
    delta_L: float
    increment: float
    cumulative: float


@dataclass
class StrategyLedger:
    """Harvest ledger with a Neumaier-compensated running total."""

    capital: CapitalSchedule = field(default_factory=CapitalSchedule.constant)
    entries: list = field(default_factory=list)
    _sum: float = 0.0
    _comp: float = 0.0

    @property
    def cumulative(self) -> float:
        return self._sum + self._comp

    def append(self, t: float, delta_L: float, dt: float) -> LedgerEntry:
        increment = self.capital(t) * delta_L * dt
        s = self._sum + increment
        if abs(self._sum) >= abs(increment):
            self._comp += (self._sum - s) + increment
        else:
            self._comp += (increment - s) + self._sum
        self._sum = s
        entry = LedgerEntry(t, delta_L, increment, self.cumulative)
        self.entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self.entries)


def harvest_step(
    ledger: StrategyLedger,
    p: ManifoldPoint,
    next_sigma: float,
    sharpe: float,
    dt: float,
    conv: LengthConvention = LengthConvention.PAPER_EQ5,
    t: float | None = None,
) -> StrategyLedger:
    """Book the excess action of the ray step from ``p`` to sigma = ``next_sigma``."""
    if not next_sigma > 0:
        raise DomainError(f"next_sigma must be > 0, got {next_sigma}")
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    if abs(p.mu - sharpe * p.sigma) > 1e-9 * max(1.0, abs(p.mu)):
        raise SharpeMismatch(f"{p} is not on the Sharpe ray S={sharpe}")
    if t is None:
        t = (ledger.entries[-1].t if ledger.entries else 0.0) + dt
    q = ManifoldPoint(sharpe * next_sigma, next_sigma)
    delta_L = 0.0 if next_sigma == p.sigma else excess_action(p, q, conv)
    ledger.append(t, delta_L, dt)
    return ledger


def step_excess(
    p: ManifoldPoint, q: ManifoldPoint, mode: PathMode, conv: LengthConvention
) -> float:
    """Realised length of the step ``p -> q`` minus the geodesic distance."""
    if mode is PathMode.GEODESIC:
        # the realised path is the geodesic itself
        return 0.0
    S = common_sharpe(p, q)
    return linear_path_length(S, p.sigma, q.sigma) - geodesic_length(p, q, conv)


@dataclass(frozen=True)
class BacktestResult:
    ledger: StrategyLedger
    positions: list
    position_times: list
    convention: LengthConvention

    def __iter__(self):
        yield self.ledger
        yield self.positions

    @property
    def cumulative(self) -> float:
        return self.ledger.cumulative

    def summary(self) -> dict:
        return {
            "cumulative": self.ledger.cumulative,
            "n_steps": len(self.ledger),
            "convention": self.convention.value,
        }


def backtest(
    trajectory: MarketTrajectory,
    provider: SensitivityProvider | None = None,
    conv: LengthConvention = LengthConvention.PAPER_EQ5,
    capital: CapitalSchedule | None = None,
    dt: float | None = 1.0,
) -> BacktestResult:
    """Rebalance at every step inside each avalanche and book its excess action.

    ``dt`` is the accounting interval charged per step; ``None`` uses the
    trajectory's own (time-compressed) sample spacing instead.  Unpacks as
    ``(ledger, positions)``.
    """
    conv = LengthConvention.parse(conv)
    provider = QuadraticValuation() if provider is None else provider
    ledger = StrategyLedger(capital or CapitalSchedule.constant())
    positions, times = [], []
    for i0, i1 in trajectory.avalanche_segments():
        # avalanche endpoints must share the ray the strategy is defined on
        common_sharpe(trajectory.point(i0), trajectory.point(i1), tol=1e-9)
        for k in range(i0, i1):
            p, q = trajectory.point(k), trajectory.point(k + 1)
            t = float(trajectory.t[k + 1])
            step_dt = (t - float(trajectory.t[k])) if dt is None else dt
            positions.append(hedge_ratio(p, provider))
            times.append(t)
            ledger.append(t, step_excess(p, q, trajectory.path_mode[k + 1], conv), step_dt)
    return BacktestResult(ledger, positions, times, conv)


def single_avalanche_trajectory(
    p1: ManifoldPoint,
    p2: ManifoldPoint,
    mode: PathMode | str,
    n: int = 1,
    target_price: float = 100.0,
    horizon: float = 1.0,
) -> MarketTrajectory:
    """A trajectory holding one avalanche from ``p1`` to ``p2`` in ``n`` unit-time steps."""
    mode = PathMode(mode)
    path = transition_path(p1, p2, mode, n)
    regimes = [Regime.CREEP] + [Regime.AVALANCHE] * n
    return MarketTrajectory(
        t=range(n + 1),
        price=[price_rule(target_price, m, horizon) for m in path.mu],
        mu=path.mu,
        sigma=path.sigma,
        regime=regimes,
        path_mode=[mode] * (n + 1),
    )


def refinement_study(
    p1: ManifoldPoint,
    p2: ManifoldPoint,
    ns=(1, 10, 100),
    conv: LengthConvention = LengthConvention.PAPER_EQ5,
) -> dict[int, float]:
    """Cumulative Euclidean harvest when one avalanche is split into ``n`` accounting steps."""
    return {
        n: backtest(single_avalanche_trajectory(p1, p2, PathMode.EUCLIDEAN, n), conv=conv).cumulative
        for n in ns
    }
