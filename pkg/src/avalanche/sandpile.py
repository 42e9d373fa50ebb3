"""Avalanche generators and tail statistics.

Two independent sources of avalanche sizes live here:

* :class:`SandpileLattice`, the Bak-Tang-Wiesenfeld sandpile with open
  boundaries, driven grain by grain (:func:`add_grain`, :func:`drive_to_soc`);
* the reduced information-slope process ``dtheta = v dt - s dN`` advanced by
  :func:`step_slope`, whose jump sizes are proportional to the overshoot of
  ``theta`` above its critical value.

:func:`fit_power_law_tail` estimates the tail exponent of either stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Sequence, Union

import numpy as np

from . import _kernels
from .errors import AvalancheError, DomainError, InsufficientTail


class RngStream:
    """Seeded, platform-independent random stream (PCG64 behind numpy's Generator).

    Streams are split with :meth:`spawn`, which derives children from the
    seed sequence rather than from draws, so a child never perturbs its parent.
    """

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
            self.seed = int(seed.entropy)
        else:
            self.seed = int(seed)
            if not 0 <= self.seed < 2**64:
                raise DomainError(f"seed must fit in 64 unsigned bits, got {seed}")
            self._seq = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self, n: int) -> list["RngStream"]:
        return [RngStream(child) for child in self._seq.spawn(n)]

    def uniform(self) -> float:
        return float(self.generator.random())

    def uniforms(self, n: int) -> np.ndarray:
        return self.generator.random(n)

    def integers(self, high: int, size: int) -> np.ndarray:
        return self.generator.integers(0, high, size=size, dtype=np.int64)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed})"


@dataclass(frozen=True)
class AvalancheEvent:
    time: int
    size: Union[int, float]
    grains_lost: int = 0


class EventLog(Sequence[AvalancheEvent]):
    """Column-oriented avalanche log; behaves as a sequence of :class:`AvalancheEvent`."""

    def __init__(self, time=(), size=(), grains_lost=()):
        self.time = np.asarray(time, dtype=np.int64)
        size = np.asarray(size)
        self.size = size if size.dtype.kind == "f" else size.astype(np.int64)
        self.grains_lost = np.asarray(grains_lost, dtype=np.int64)
        if not (self.time.shape == self.size.shape == self.grains_lost.shape):
            raise DomainError("event columns must have equal length")

    @classmethod
    def from_events(cls, events: Sequence[AvalancheEvent]) -> "EventLog":
        if isinstance(events, EventLog):
            return events
        return cls([e.time for e in events], [e.size for e in events], [e.grains_lost for e in events])

    def __len__(self) -> int:
        return int(self.time.size)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return EventLog(self.time[i], self.size[i], self.grains_lost[i])
        size = self.size[i]
        return AvalancheEvent(int(self.time[i]), size.item(), int(self.grains_lost[i]))

    def __iter__(self) -> Iterator[AvalancheEvent]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, EventLog):
            return NotImplemented
        return (
            np.array_equal(self.time, other.time)
            and np.array_equal(self.size, other.size)
            and np.array_equal(self.grains_lost, other.grains_lost)
        )

    def __repr__(self) -> str:
        return f"EventLog(n={len(self)})"


class SandpileLattice:
    """BTW sandpile on a ``height x width`` grid with open boundaries.

    A site with ``grains >= threshold`` topples, sending one grain to each of
    its four von Neumann neighbours; grains pushed off the edge leave the
    system and are tallied in :attr:`lost`.  ``grains[y, x]`` is the height
    at column ``x``, row ``y``.
    """

    def __init__(self, width: int, height: int | None = None, threshold: int = 4, grains=None):
        height = width if height is None else height
        if width < 1 or height < 1:
            raise DomainError("lattice dimensions must be >= 1")
        if threshold < 4:
            raise DomainError("threshold must be >= 4 (a toppling sheds one grain to each of 4 neighbours)")
        self.width = int(width)
        self.height = int(height)
        self.threshold = int(threshold)
        if grains is None:
            self.grains = np.zeros((self.height, self.width), dtype=np.int64)
        else:
            g = np.array(grains, dtype=np.int64)
            if g.shape != (self.height, self.width) or np.any(g < 0):
                raise DomainError("grains must be a non-negative (height, width) grid")
            self.grains = g
        self.added = 0
        self.lost = 0
        self._base = int(self.grains.sum())

    @classmethod
    def from_grid(cls, grid, threshold: int = 4) -> "SandpileLattice":
        g = np.asarray(grid)
        return cls(g.shape[1], g.shape[0], threshold, g)

    def copy(self) -> "SandpileLattice":
        other = SandpileLattice(self.width, self.height, self.threshold, self.grains.copy())
        other.added, other.lost, other._base = self.added, self.lost, self._base
        return other

    @property
    def total(self) -> int:
        return int(self.grains.sum())

    def is_stable(self) -> bool:
        return bool(np.all(self.grains < self.threshold))

    def ledger_balanced(self) -> bool:
        """Grains on the lattice equal initial + added - lost."""
        return self.total == self._base + self.added - self.lost

    def _site_index(self, site) -> int:
        x, y = site
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise DomainError(f"site {site} outside {self.width}x{self.height} lattice")
        return int(y) * self.width + int(x)

    def _relax(self, queue, n_queued, time) -> AvalancheEvent | None:
        flat = self.grains.reshape(-1)
        size, lost = _kernels.relax(flat, self.width, self.height, self.threshold, queue, n_queued)
        if size < 0:
            raise AvalancheError("toppling tripwire fired: relaxation did not terminate")
        self.lost += int(lost)
        if size == 0:
            return None
        return AvalancheEvent(time, int(size), int(lost))

    def add_grain(self, site) -> AvalancheEvent | None:
        idx = self._site_index(site)
        flat = self.grains.reshape(-1)
        flat[idx] += 1
        self.added += 1
        if flat[idx] < self.threshold:
            return None
        queue = np.empty(self.width * self.height, dtype=np.int64)
        queue[0] = idx
        return self._relax(queue, 1, self.added - 1)

    def stabilize(self) -> AvalancheEvent | None:
        """Topple an arbitrary (possibly unstable) configuration to a stable one."""
        unstable = np.flatnonzero(self.grains.reshape(-1) >= self.threshold)
        if unstable.size == 0:
            return None
        queue = np.empty(self.width * self.height, dtype=np.int64)
        queue[: unstable.size] = unstable
        return self._relax(queue, unstable.size, self.added)

    def __eq__(self, other):
        if not isinstance(other, SandpileLattice):
            return NotImplemented
        return self.threshold == other.threshold and np.array_equal(self.grains, other.grains)

    def __repr__(self) -> str:
        return f"SandpileLattice({self.width}x{self.height}, total={self.total}, lost={self.lost})"


def add_grain(lattice: SandpileLattice, site) -> tuple[SandpileLattice, AvalancheEvent | None]:
    """Drop one grain at ``site = (x, y)`` and relax; the lattice is updated in place."""
    if not lattice.is_stable():
        raise DomainError("add_grain requires a stable lattice; call stabilize() first")
    event = lattice.add_grain(site)
    return lattice, event


def drive_to_soc(
    lattice: SandpileLattice, rng: RngStream, n_grains: int
) -> tuple[SandpileLattice, EventLog]:
    """Drop ``n_grains`` grains at uniformly random sites and log every avalanche.

    Event times are the index of the triggering grain counted over the
    lattice's lifetime, so consecutive calls produce a continuous time axis.
    """
    if n_grains < 1:
        raise DomainError("n_grains must be >= 1")
    if not lattice.is_stable():
        raise DomainError("drive_to_soc requires a stable lattice")
    sites = rng.integers(lattice.width * lattice.height, n_grains)
    out_time = np.empty(n_grains, dtype=np.int64)
    out_size = np.empty(n_grains, dtype=np.int64)
    out_lost = np.empty(n_grains, dtype=np.int64)
    flat = lattice.grains.reshape(-1)
    n = _kernels.drive(
        flat, lattice.width, lattice.height, lattice.threshold, sites,
        lattice.added, out_time, out_size, out_lost,
    )
    if n < 0:
        raise AvalancheError(f"toppling tripwire fired at grain {-n - 1}")
    lattice.added += n_grains
    log = EventLog(out_time[:n].copy(), out_size[:n].copy(), out_lost[:n].copy())
    lattice.lost += int(log.grains_lost.sum())
    return lattice, log


# --- reduced information-slope process -------------------------------------


@dataclass(frozen=True)
class SlopeState:
    theta: float
    theta_c: float = 1.0
    v: float = 0.1
    alpha: float = 1.0

    def __post_init__(self):
        if not self.v > 0.0:
            raise DomainError(f"loading rate v must be > 0, got {self.v}")
        if not self.alpha > 0.0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class ExponentialIntensity:
    """Jump intensity ``lam0 * exp(beta * (theta - theta_c))``."""

    lam0: float = 0.1
    beta: float = 10.0

    def __call__(self, theta: float, theta_c: float) -> float:
        return self.lam0 * math.exp(min(self.beta * (theta - theta_c), 700.0))

    def probability(self, theta: float, theta_c: float, dt: float) -> float:
        return min(1.0, max(0.0, self(theta, theta_c) * dt))


@dataclass(frozen=True)
class HardThreshold:
    """Fire with certainty once ``theta >= theta_c``, never below it."""

    def __call__(self, theta: float, theta_c: float) -> float:
        return math.inf if theta >= theta_c else 0.0

    def probability(self, theta: float, theta_c: float, dt: float) -> float:
        return 1.0 if theta >= theta_c else 0.0


IntensityLaw = Union[ExponentialIntensity, HardThreshold]


def step_slope(
    state: SlopeState,
    dt: float,
    rng: RngStream,
    intensity: IntensityLaw | None = None,
    step_index: int = 0,
) -> tuple[SlopeState, AvalancheEvent | None]:
    """Load for ``dt``, then fire a jump with probability ``lambda(theta) dt``.

    Exactly one uniform is drawn per call whatever the intensity law, so the
    stream position depends only on the number of steps taken.  A firing with
    zero overshoot releases nothing and is not reported as an event.
    """
    if not dt > 0.0:
        raise DomainError(f"dt must be > 0, got {dt}")
    intensity = ExponentialIntensity() if intensity is None else intensity
    theta = state.theta + state.v * dt
    u = rng.uniform()
    event = None
    if u < intensity.probability(theta, state.theta_c, dt):
        s = state.alpha * max(theta - state.theta_c, 0.0)
        if s > 0.0:
            theta -= s
            event = AvalancheEvent(step_index, s, 0)
    return replace(state, theta=theta), event


def simulate_slope(
    state: SlopeState,
    dt: float,
    n_steps: int,
    rng: RngStream,
    intensity: IntensityLaw | None = None,
) -> tuple[SlopeState, np.ndarray, EventLog]:
    """Run :func:`step_slope` ``n_steps`` times; returns final state, theta path and events."""
    thetas = np.empty(n_steps)
    times, sizes = [], []
    for i in range(n_steps):
        state, ev = step_slope(state, dt, rng, intensity, step_index=i)
        thetas[i] = state.theta
        if ev is not None:
            times.append(ev.time)
            sizes.append(ev.size)
    log = EventLog(times, np.asarray(sizes, dtype=float), np.zeros(len(times), dtype=np.int64))
    return state, thetas, log


# --- tail estimation ---------------------------------------------------------


@dataclass(frozen=True)
class TailFit:
    tau_hat: float
    n_tail: int
    s_min: float

    def __iter__(self):
        yield self.tau_hat
        yield self.n_tail

    def to_dict(self) -> dict:
        return {"tau_hat": self.tau_hat, "n_tail": self.n_tail, "s_min": self.s_min}


def fit_power_law_tail(sizes, s_min: float, min_tail: int = 10) -> TailFit:
    """Maximum-likelihood exponent of a continuous power-law tail ``p(s) ~ s^-tau``.

    ``tau_hat = 1 + n / sum(ln(s_i / s_min))`` over the ``n`` samples with
    ``s_i >= s_min``.  The result unpacks as ``(tau_hat, n_tail)``.
    """
    if not s_min > 0.0:
        raise DomainError(f"s_min must be > 0, got {s_min}")
    s = np.asarray(sizes, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s <= 0.0):
        raise DomainError("sizes must be finite and positive")
    tail = s[s >= s_min]
    if tail.size < min_tail:
        raise InsufficientTail(f"only {tail.size} samples >= s_min={s_min}, need {min_tail}")
    denom = math.fsum(np.log(tail / s_min))
    if denom <= 0.0:
        raise DomainError("every tail sample equals s_min; the exponent is undefined")
    return TailFit(1.0 + tail.size / denom, int(tail.size), float(s_min))


def ccdf(sizes) -> tuple[np.ndarray, np.ndarray]:
    """Empirical complementary CDF ``P(S >= s)`` at the distinct sizes."""
    s = np.sort(np.asarray(sizes, dtype=float))
    values, first = np.unique(s, return_index=True)
    return values, 1.0 - first / s.size
