"""Market state on the statistical manifold, driven by avalanches.

An avalanche of size ``s`` lifts volatility instantly by ``k * g(s)``; between
avalanches volatility mean-reverts towards ``sigma_bar``.  The drift follows
the volatility through a slowly varying Sharpe ratio (``mu = S * sigma``,
zero risk-free rate) and the price is tied to a slowly adjusting target by

    price = target_price * exp(-S * sigma * horizon)

so a volatility spike is a sudden price drop.  :func:`simulate` strings the
pieces together into a :class:`MarketTrajectory`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CoincidentPoints, ConfigError, DomainError, SharpeMismatch
from .geometry import (
    TOL,
    DiscretePath,
    ManifoldPoint,
    common_sharpe,
    geodesic_arc,
)
from .sandpile import (
    ExponentialIntensity,
    HardThreshold,
    RngStream,
    SandpileLattice,
    SlopeState,
    drive_to_soc,
    step_slope,
)


class MappingKind(enum.Enum):
    LINEAR = "linear"
    LOG1P = "log1p"
    POWER_CAPPED = "power_capped"


class Regime(enum.Enum):
    CREEP = "creep"
    AVALANCHE = "avalanche"
    RELAXATION = "relaxation"


class PathMode(enum.Enum):
    GEODESIC = "geodesic"
    EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class VolMapping:
    """Avalanche-size to volatility-jump mapping plus the mean reversion between jumps.

    Every kind is monotone non-decreasing in ``s`` and zero at ``s = 0``.
    """

    kind: MappingKind = MappingKind.LOG1P
    k: float = 0.05
    gamma: float = 0.5
    cap: float = 10.0
    kappa: float = 0.5
    sigma_bar: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "kind", MappingKind(self.kind))
        if not self.k > 0:
            raise DomainError(f"mapping gain k must be > 0, got {self.k}")
        if not (self.gamma > 0 and self.cap > 0):
            raise DomainError("gamma and cap must be > 0")
        if not self.kappa >= 0:
            raise DomainError(f"kappa must be >= 0, got {self.kappa}")
        if not self.sigma_bar > 0:
            raise DomainError(f"sigma_bar must be > 0, got {self.sigma_bar}")

    def g(self, s: float) -> float:
        if self.kind is MappingKind.LINEAR:
            return s
        if self.kind is MappingKind.LOG1P:
            return math.log1p(s)
        return min(s**self.gamma, self.cap)

    def increment(self, s: float) -> float:
        if s < 0:
            raise DomainError(f"avalanche size must be >= 0, got {s}")
        return self.k * self.g(s)


def price_rule(target_price: float, mu: float, horizon: float) -> float:
    """Price whose required excess return ``mu`` is discounted over ``horizon``."""
    return target_price * math.exp(-mu * horizon)


@dataclass(frozen=True)
class MarketState:
    point: ManifoldPoint
    price: float
    target_price: float
    sharpe: float
    horizon: float = 1.0

    def __post_init__(self):
        if not (self.price > 0 and self.target_price > 0):
            raise DomainError("price and target_price must be > 0")
        if not self.horizon > 0:
            raise DomainError("horizon must be > 0")
        if abs(self.point.mu - self.sharpe * self.point.sigma) > TOL.sharpe * max(1.0, abs(self.point.mu)):
            raise SharpeMismatch(f"{self.point} is off the Sharpe ray S={self.sharpe}")

    @classmethod
    def on_ray(cls, sigma: float, sharpe: float, target_price: float, horizon: float = 1.0) -> "MarketState":
        mu = sharpe * sigma
        return cls(
            ManifoldPoint(mu, sigma),
            price_rule(target_price, mu, horizon),
            target_price,
            sharpe,
            horizon,
        )

    @property
    def mu(self) -> float:
        return self.point.mu

    @property
    def sigma(self) -> float:
        return self.point.sigma


def apply_avalanche(state: MarketState, s: float, mapping: VolMapping) -> MarketState:
    """Instant volatility jump; drift and price snap to the new volatility, target unchanged."""
    jump = mapping.increment(s)
    if jump == 0.0:
        return state
    sigma = state.sigma + jump
    mu = state.sharpe * sigma
    return replace(
        state,
        point=ManifoldPoint(mu, sigma),
        price=price_rule(state.target_price, mu, state.horizon),
    )


def relax_between_avalanches(
    state: MarketState,
    dt: float,
    mapping: VolMapping,
    rho: float = 0.0,
    sharpe_drift: float = 0.0,
) -> MarketState:
    """Exponential decay of volatility towards ``sigma_bar`` over ``dt``.

    The target price moves towards the current price at rate ``rho``, and the
    Sharpe ratio drifts at ``sharpe_drift`` per unit time (0 by default).
    """
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    if not 0 <= rho * dt <= 1:
        raise DomainError(f"rho * dt must lie in [0, 1], got {rho * dt}")
    sigma = mapping.sigma_bar + (state.sigma - mapping.sigma_bar) * math.exp(-mapping.kappa * dt)
    sharpe = state.sharpe + sharpe_drift * dt
    mu = sharpe * sigma
    target = state.target_price + rho * (state.price - state.target_price) * dt
    return MarketState(
        ManifoldPoint(mu, sigma),
        price_rule(target, mu, state.horizon),
        target,
        sharpe,
        state.horizon,
    )


def transition_path(
    start: ManifoldPoint,
    end: ManifoldPoint,
    mode: PathMode | str = PathMode.GEODESIC,
    n: int = 16,
) -> DiscretePath:
    """``n + 1`` samples from ``start`` to ``end`` along the geodesic or the Sharpe ray.

    Geodesic paths are uniform in arc angle (uniform in ``log sigma`` on a
    vertical geodesic); Euclidean paths are affine in sigma with
    ``mu = S * sigma``.  Endpoints are reproduced exactly.
    """
    mode = PathMode(mode)
    if start == end:
        raise CoincidentPoints("transition endpoints coincide")
    if n < 1:
        raise DomainError("n must be >= 1")
    f = np.arange(n + 1) / n
    if mode is PathMode.EUCLIDEAN:
        S = common_sharpe(start, end)
        sigma = start.sigma + f * (end.sigma - start.sigma)
        mu = S * sigma
    elif abs(start.mu - end.mu) < TOL.vertical:
        sigma = start.sigma * (end.sigma / start.sigma) ** f
        mu = np.full(n + 1, start.mu)
    else:
        arc = geodesic_arc(start, end)
        phi = arc.angle_of(start) + f * (arc.angle_of(end) - arc.angle_of(start))
        mu = arc.mu_c + arc.R * np.cos(phi)
        sigma = arc.R * np.sin(phi) / math.sqrt(2.0)
    mu[0], sigma[0] = start.mu, start.sigma
    mu[-1], sigma[-1] = end.mu, end.sigma
    return DiscretePath(mu, sigma)


# --- off-manifold excursions ----------------------------------------------------


@dataclass(frozen=True)
class OffManifoldState:
    """Displacement ``eta`` from the equilibrium manifold and symmetric transport ``L``."""

    eta: np.ndarray
    transport: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).reshape(2)
        L = np.array(self.transport, dtype=float).reshape(2, 2)
        if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(L))):
            raise DomainError("eta and transport must be finite")
        if np.max(np.abs(L - L.T)) > 1e-12:
            raise DomainError(f"transport matrix violates Onsager reciprocity:\n{L}")
        eta.flags.writeable = False
        L.flags.writeable = False
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "transport", L)


def onsager_step(off: OffManifoldState, forces, dt: float) -> OffManifoldState:
    """Explicit Euler step of the linear response ``d eta / dt = L X``."""
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    X = np.asarray(forces, dtype=float).reshape(2)
    return OffManifoldState(off.eta + (off.transport @ X) * dt, off.transport)


def relax_excursion(off: OffManifoldState, dt: float, n_steps: int) -> list[OffManifoldState]:
    """Apply the restoring force ``X = -eta`` for ``n_steps`` Euler steps.

    Requires ``L`` positive definite and ``dt`` small enough that the Euler
    map ``I - L dt`` is a contraction, which makes ``|eta|`` decrease
    monotonically.
    """
    eig = np.linalg.eigvalsh(off.transport)
    if eig[0] <= 0:
        raise DomainError("restoring excursions need a positive definite transport matrix")
    if eig[-1] * dt >= 2.0:
        raise DomainError(f"dt={dt} too large for a stable Euler decay (need < {2.0 / eig[-1]})")
    out = []
    for _ in range(n_steps):
        off = onsager_step(off, -off.eta, dt)
        out.append(off)
    return out


# --- trajectory -------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryEvent:
    """Bookkeeping for one avalanche inside a simulated trajectory."""

    step: int
    size: float
    pre: MarketState
    post: MarketState
    first_sample: int
    last_sample: int


class MarketTrajectory:
    """Time-indexed samples ``(t, price, mu, sigma, regime, path_mode)``."""

    columns = ("t", "price", "mu", "sigma", "regime", "path_mode")

    def __init__(self, t, price, mu, sigma, regime, path_mode, events=()):
        self.t = np.asarray(t, dtype=float)
        self.price = np.asarray(price, dtype=float)
        self.mu = np.asarray(mu, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.regime = [Regime(r) for r in regime]
        self.path_mode = [PathMode(m) for m in path_mode]
        n = self.t.size
        if not (self.price.size == self.mu.size == self.sigma.size == len(self.regime) == len(self.path_mode) == n):
            raise DomainError("trajectory columns must have equal length")
        if n and not np.all(np.diff(self.t) > 0):
            raise DomainError("trajectory times must be strictly increasing")
        if n and not np.all(self.sigma > 0):
            raise DomainError("trajectory sigma must stay > 0")
        self.events = list(events)

    def __len__(self) -> int:
        return self.t.size

    def point(self, i: int) -> ManifoldPoint:
        return ManifoldPoint(float(self.mu[i]), float(self.sigma[i]))

    def rows(self):
        for i in range(len(self)):
            yield (
                float(self.t[i]), float(self.price[i]), float(self.mu[i]), float(self.sigma[i]),
                self.regime[i], self.path_mode[i],
            )

    def avalanche_segments(self) -> list[tuple[int, int]]:
        """``(i0, i1)`` index pairs: sample ``i0`` precedes a run of Avalanche samples ending at ``i1``."""
        segments = []
        i = 1
        n = len(self)
        while i < n:
            if self.regime[i] is Regime.AVALANCHE:
                j = i
                while j + 1 < n and self.regime[j + 1] is Regime.AVALANCHE:
                    j += 1
                segments.append((i - 1, j))
                i = j + 1
            else:
                i += 1
        return segments

    def __eq__(self, other):
        if not isinstance(other, MarketTrajectory):
            return NotImplemented
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.price, other.price)
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma, other.sigma)
            and self.regime == other.regime
            and self.path_mode == other.path_mode
        )

    def __repr__(self) -> str:
        return f"MarketTrajectory(n={len(self)}, avalanches={len(self.avalanche_segments())})"


@dataclass(frozen=True)
class SimulationConfig:
    n_steps: int = 1000
    dt: float = 1.0
    source: str = "slope"  # lattice | slope | none
    forced_events: tuple = ()  # ((step, size), ...) applied on top of the source
    # lattice source
    lattice_size: int = 32
    lattice_burn_in: int = 20_000
    grains_per_step: int = 1
    # slope source
    theta0: float = 0.0
    theta_c: float = 1.0
    v: float = 0.1
    alpha: float = 1.0
    intensity: str = "exponential"  # exponential | hard
    lam0: float = 0.1
    beta: float = 10.0
    # volatility and price
    mapping: VolMapping = VolMapping()
    sigma0: float = 0.2
    sharpe: float = 0.5
    sharpe_drift: float = 0.0
    target_price: float = 100.0
    horizon: float = 1.0
    rho: float = 0.01
    # avalanche traversal
    path_mode: PathMode = PathMode.GEODESIC
    path_points: int = 16
    traversal_time: float | None = None  # default 1e-3 * dt
    # off-manifold excursions after each avalanche
    onsager: bool = False
    onsager_kick: float = 0.1
    onsager_steps: int = 150
    onsager_dt: float = 0.1
    transport: tuple = ((1.0, 0.0), (0.0, 1.0))

    def __post_init__(self):
        object.__setattr__(self, "path_mode", PathMode(self.path_mode))
        if isinstance(self.mapping, dict):
            object.__setattr__(self, "mapping", VolMapping(**self.mapping))
        self.validate()

    @property
    def epsilon_t(self) -> float:
        return 1e-3 * self.dt if self.traversal_time is None else self.traversal_time

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.n_steps >= 0, "n_steps must be >= 0")
        need(self.dt > 0, "dt must be > 0")
        need(self.source in ("lattice", "slope", "none"), f"unknown source {self.source!r}")
        need(self.lattice_size >= 1 and self.lattice_burn_in >= 0, "invalid lattice settings")
        need(self.grains_per_step >= 1, "grains_per_step must be >= 1")
        need(self.v > 0 and self.alpha > 0, "v and alpha must be > 0")
        need(self.intensity in ("exponential", "hard"), f"unknown intensity {self.intensity!r}")
        need(self.lam0 >= 0, "lam0 must be >= 0")
        need(self.sigma0 > 0, "sigma0 must be > 0")
        need(self.target_price > 0 and self.horizon > 0, "target_price and horizon must be > 0")
        need(0 <= self.rho * self.dt <= 1, "rho * dt must lie in [0, 1]")
        need(self.path_points >= 1, "path_points must be >= 1")
        need(0 < self.epsilon_t and 2 * self.epsilon_t < self.dt, "traversal_time must lie in (0, dt/2)")
        need(self.onsager_steps >= 1 and self.onsager_dt > 0, "invalid onsager settings")
        need(0 <= self.onsager_kick < 1, "onsager_kick must lie in [0, 1)")
        for step, size in self.forced_events:
            need(0 <= int(step) < max(self.n_steps, 1) and float(size) >= 0, f"bad forced event {(step, size)}")
        if self.onsager:
            try:
                OffManifoldState(np.zeros(2), np.array(self.transport, dtype=float))
            except DomainError as exc:
                raise ConfigError(f"onsager.transport: {exc}") from None


class _LatticeSource:
    def __init__(self, cfg: SimulationConfig, rng: RngStream):
        self.cfg = cfg
        self.rng = rng
        self.lattice = SandpileLattice(cfg.lattice_size)
        if cfg.lattice_burn_in:
            drive_to_soc(self.lattice, rng, cfg.lattice_burn_in)

    def __call__(self, step: int) -> float:
        _, events = drive_to_soc(self.lattice, self.rng, self.cfg.grains_per_step)
        return float(events.size.sum())


class _SlopeSource:
    def __init__(self, cfg: SimulationConfig, rng: RngStream):
        self.cfg = cfg
        self.rng = rng
        self.state = SlopeState(cfg.theta0, cfg.theta_c, cfg.v, cfg.alpha)
        self.law = HardThreshold() if cfg.intensity == "hard" else ExponentialIntensity(cfg.lam0, cfg.beta)

    def __call__(self, step: int) -> float:
        self.state, event = step_slope(self.state, self.cfg.dt, self.rng, self.law, step)
        return 0.0 if event is None else float(event.size)


def simulate(cfg: SimulationConfig, rng: RngStream | int = 0) -> MarketTrajectory:
    """Run the market for ``cfg.n_steps`` creep steps of length ``cfg.dt``.

    Each step first relaxes the state (a Creep sample at ``t = k dt``), then
    asks the event source for an avalanche.  An avalanche is traversed along
    ``cfg.path_mode`` in ``cfg.path_points`` Avalanche samples squeezed into
    ``cfg.epsilon_t``; with ``cfg.onsager`` a decaying off-manifold excursion
    follows as Relaxation samples.  The next step continues from the
    post-avalanche state.
    """
    if not isinstance(rng, RngStream):
        rng = RngStream(rng)
    if cfg.source == "lattice":
        source = _LatticeSource(cfg, rng)
    elif cfg.source == "slope":
        source = _SlopeSource(cfg, rng)
    else:
        source = None
    forced = {}
    for step, size in cfg.forced_events:
        forced[int(step)] = forced.get(int(step), 0.0) + float(size)

    mode = cfg.path_mode
    eps = cfg.epsilon_t
    cols = {c: [] for c in MarketTrajectory.columns}
    events = []

    def emit(t, price, mu, sigma, regime):
        cols["t"].append(t)
        cols["price"].append(price)
        cols["mu"].append(mu)
        cols["sigma"].append(sigma)
        cols["regime"].append(regime)
        cols["path_mode"].append(mode)

    state = MarketState.on_ray(cfg.sigma0, cfg.sharpe, cfg.target_price, cfg.horizon)
    emit(0.0, state.price, state.mu, state.sigma, Regime.CREEP)
    transport = np.array(cfg.transport, dtype=float)

    for k in range(cfg.n_steps):
        t = (k + 1) * cfg.dt
        state = relax_between_avalanches(state, cfg.dt, cfg.mapping, cfg.rho, cfg.sharpe_drift)
        emit(t, state.price, state.mu, state.sigma, Regime.CREEP)

        s = source(k) if source is not None else 0.0
        s += forced.get(k, 0.0)
        if s <= 0.0:
            continue
        post = apply_avalanche(state, s, cfg.mapping)
        if post.point == state.point:
            continue
        path = transition_path(state.point, post.point, mode, cfg.path_points)
        first = len(cols["t"])
        for j in range(1, len(path)):
            if j == len(path) - 1:
                emit(t + eps, post.price, post.mu, post.sigma, Regime.AVALANCHE)
            else:
                mu_j, sg_j = float(path.mu[j]), float(path.sigma[j])
                emit(t + eps * j / cfg.path_points, price_rule(state.target_price, mu_j, cfg.horizon),
                     mu_j, sg_j, Regime.AVALANCHE)
        events.append(TrajectoryEvent(k, s, state, post, first, len(cols["t"]) - 1))

        if cfg.onsager:
            kick = cfg.onsager_kick * np.array([post.mu - state.mu, post.sigma - state.sigma])
            excursion = relax_excursion(OffManifoldState(kick, transport), cfg.onsager_dt, cfg.onsager_steps)
            for j, off in enumerate(excursion, start=1):
                mu_j = post.mu + float(off.eta[0])
                sg_j = post.sigma + float(off.eta[1])
                emit(t + eps * (1.0 + j / cfg.onsager_steps),
                     price_rule(post.target_price, mu_j, cfg.horizon), mu_j, sg_j, Regime.RELAXATION)
        state = post

    return MarketTrajectory(**cols, events=events)
