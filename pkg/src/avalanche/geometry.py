"""Geometry of the Gaussian statistical manifold.

Points are market states ``(mu, sigma)`` on the upper half-plane carrying the
Fisher-Rao metric ``ds^2 = (dmu^2 + 2 dsigma^2) / sigma^2``.  Geodesics are the
half-ellipses ``(mu - mu_c)^2 + 2 sigma^2 = R^2`` centred on the mu-axis, plus
vertical lines.

Two normalisations of the closed-form distance are offered through
:class:`LengthConvention`:

``PAPER_EQ5``
    ``arcosh(1 + ((mu2-mu1)^2 + 2 (sigma2-sigma1)^2) / (4 sigma1 sigma2))``.
    All downstream excess-action formulas are written in this normalisation,
    so it is the default.
``METRIC_CONSISTENT``
    ``sqrt(2)`` times the above; this is the true length of the geodesic under
    the metric and agrees with :func:`path_length` and
    :func:`minimize_path_length`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ApexSingularity,
    CoincidentPoints,
    DomainError,
    NonConvergence,
    SharpeMismatch,
    VerticalGeodesic,
)

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Tolerances:
    vertical: float = 1e-12
    apex: float = 1e-10
    arc_residual: float = 1e-9
    sharpe: float = 1e-9


TOL = Tolerances()


class LengthConvention(enum.Enum):
    PAPER_EQ5 = "paper_eq5"
    METRIC_CONSISTENT = "metric_consistent"

    @classmethod
    def parse(cls, value: "str | LengthConvention") -> "LengthConvention":
        """Accept an enum member, its value, or the short CLI names."""
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "paper": cls.PAPER_EQ5,
            "paper_eq5": cls.PAPER_EQ5,
            "metric": cls.METRIC_CONSISTENT,
            "metric_consistent": cls.METRIC_CONSISTENT,
        }
        try:
            return aliases[key]
        except KeyError:
            raise DomainError(f"unknown length convention {value!r}") from None


def _check_sigma(sigma: float) -> None:
    if not (math.isfinite(sigma) and sigma > 0.0):
        raise DomainError(f"sigma must be finite and > 0, got {sigma!r}")


@dataclass(frozen=True)
class ManifoldPoint:
    """A market state: drift ``mu`` and volatility ``sigma > 0``."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise DomainError(f"mu must be finite, got {self.mu!r}")
        _check_sigma(self.sigma)

    @property
    def sharpe(self) -> float:
        return self.mu / self.sigma

    def __iter__(self):
        yield self.mu
        yield self.sigma


@dataclass(frozen=True)
class GeodesicArc:
    """Half-ellipse ``(mu - mu_c)^2 + 2 sigma^2 = R^2``."""

    mu_c: float
    R: float

    def __post_init__(self):
        if not (math.isfinite(self.mu_c) and math.isfinite(self.R) and self.R > 0.0):
            raise DomainError(f"invalid arc (mu_c={self.mu_c!r}, R={self.R!r})")

    def residual(self, p: ManifoldPoint) -> float:
        """Relative residual of the arc equation at ``p``."""
        return abs((p.mu - self.mu_c) ** 2 + 2.0 * p.sigma**2 - self.R**2) / self.R**2

    def contains(self, p: ManifoldPoint, tol: float | None = None) -> bool:
        return self.residual(p) <= (TOL.arc_residual if tol is None else tol)

    @property
    def apex(self) -> ManifoldPoint:
        return ManifoldPoint(self.mu_c, self.R / SQRT2)

    def angle_of(self, p: ManifoldPoint) -> float:
        """Angle ``phi`` in ``mu = mu_c + R cos(phi)``, ``sigma = R sin(phi)/sqrt(2)``."""
        return math.atan2(SQRT2 * p.sigma / self.R, (p.mu - self.mu_c) / self.R)

    def point_at(self, phi: float) -> ManifoldPoint:
        return ManifoldPoint(self.mu_c + self.R * math.cos(phi), self.R * math.sin(phi) / SQRT2)

    def mu_at(self, sigma: float, branch: float) -> float:
        """mu on the arc at height ``sigma``; ``branch`` picks the side of mu_c by sign."""
        rad = self.R**2 - 2.0 * sigma**2
        if rad < 0.0:
            raise DomainError(f"sigma={sigma} lies above the arc apex {self.R / SQRT2}")
        return self.mu_c + math.copysign(math.sqrt(rad), branch)

    def to_dict(self) -> dict:
        return {"mu_c": self.mu_c, "R": self.R}


class DiscretePath:
    """Ordered sequence of manifold points stored as two float arrays."""

    __slots__ = ("mu", "sigma")

    def __init__(self, mu: Sequence[float], sigma: Sequence[float]):
        mu = np.array(mu, dtype=float)
        sigma = np.array(sigma, dtype=float)
        if mu.ndim != 1 or mu.shape != sigma.shape or mu.size < 2:
            raise DomainError("a path needs at least two points with matching mu/sigma")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma)) and np.all(sigma > 0)):
            raise DomainError("path points must be finite with sigma > 0")
        same = (np.diff(mu) == 0.0) & (np.diff(sigma) == 0.0)
        if np.any(same):
            raise CoincidentPoints(f"consecutive points coincide at index {int(np.argmax(same))}")
        mu.flags.writeable = False
        sigma.flags.writeable = False
        self.mu = mu
        self.sigma = sigma

    @classmethod
    def _degenerate(cls, p: ManifoldPoint) -> "DiscretePath":
        # Zero-length geodesic: a single segment that starts and ends at p.
        obj = cls.__new__(cls)
        obj.mu = np.array([p.mu, p.mu])
        obj.sigma = np.array([p.sigma, p.sigma])
        return obj

    @classmethod
    def from_points(cls, points: Sequence[ManifoldPoint]) -> "DiscretePath":
        return cls([p.mu for p in points], [p.sigma for p in points])

    def __len__(self) -> int:
        return self.mu.size

    def __getitem__(self, i: int) -> ManifoldPoint:
        return ManifoldPoint(float(self.mu[i]), float(self.sigma[i]))

    def __iter__(self):
        for m, s in zip(self.mu, self.sigma):
            yield ManifoldPoint(float(m), float(s))

    @property
    def start(self) -> ManifoldPoint:
        return self[0]

    @property
    def end(self) -> ManifoldPoint:
        return self[-1]

    def split(self, index: int) -> tuple["DiscretePath", "DiscretePath"]:
        """Split at an interior point, which is shared by both halves."""
        if not 0 < index < len(self) - 1:
            raise DomainError("split index must be interior")
        return (
            DiscretePath(self.mu[: index + 1], self.sigma[: index + 1]),
            DiscretePath(self.mu[index:], self.sigma[index:]),
        )

    def __repr__(self) -> str:
        return f"DiscretePath(n={len(self)}, start={self.start}, end={self.end})"


def metric_speed(p: ManifoldPoint, dmu: float, dsigma: float) -> float:
    _check_sigma(p.sigma)
    return math.sqrt(dmu * dmu + 2.0 * dsigma * dsigma) / p.sigma


def christoffel(sigma: float) -> tuple[float, float, float]:
    """Non-zero Christoffel symbols ``(G^mu_{mu sigma}, G^sigma_{mu mu}, G^sigma_{sigma sigma})``."""
    _check_sigma(sigma)
    return (-1.0 / sigma, 1.0 / (2.0 * sigma), -1.0 / sigma)


def geodesic_arc(p1: ManifoldPoint, p2: ManifoldPoint, tol_vertical: float | None = None) -> GeodesicArc:
    if p1 == p2:
        raise CoincidentPoints(f"geodesic through a single point {p1} is not unique")
    tol = TOL.vertical if tol_vertical is None else tol_vertical
    dmu = p1.mu - p2.mu
    if abs(dmu) < tol:
        raise VerticalGeodesic(f"mu1 == mu2 == {p1.mu}: the geodesic is a vertical line")
    mu_c = 0.5 * (p1.mu + p2.mu) + (p1.sigma - p2.sigma) * (p1.sigma + p2.sigma) / dmu
    R = math.sqrt((p1.mu - mu_c) ** 2 + 2.0 * p1.sigma**2)
    return GeodesicArc(mu_c, R)


def _arcosh1p(x: float) -> float:
    # arcosh(1 + x) without the cancellation of acosh near 1
    return math.log1p(x + math.sqrt(x * (x + 2.0)))


def geodesic_length(
    p1: ManifoldPoint,
    p2: ManifoldPoint,
    conv: LengthConvention = LengthConvention.PAPER_EQ5,
) -> float:
    _check_sigma(p1.sigma)
    _check_sigma(p2.sigma)
    dmu = p2.mu - p1.mu
    ds = p2.sigma - p1.sigma
    x = (dmu * dmu + 2.0 * ds * ds) / (4.0 * p1.sigma * p2.sigma)
    d = _arcosh1p(x)
    if LengthConvention.parse(conv) is LengthConvention.METRIC_CONSISTENT:
        return SQRT2 * d
    return d


def linear_path_length(sharpe: float, sigma1: float, sigma2: float) -> float:
    """Length of the constant-Sharpe chord; ``|ln(sigma2/sigma1)|`` for either ordering."""
    _check_sigma(sigma1)
    _check_sigma(sigma2)
    return math.sqrt(sharpe * sharpe + 2.0) * abs(math.log(sigma2 / sigma1))


def common_sharpe(p1: ManifoldPoint, p2: ManifoldPoint, tol: float | None = None) -> float:
    """Sharpe ratio shared by ``p1`` and ``p2``; raises if they are not on one ray."""
    tol = TOL.sharpe if tol is None else tol
    s1, s2 = p1.sharpe, p2.sharpe
    if abs(s1 - s2) > tol * max(1.0, abs(s1), abs(s2)):
        raise SharpeMismatch(f"points lie on different Sharpe rays ({s1} vs {s2})")
    return s1


def excess_action(
    p1: ManifoldPoint,
    p2: ManifoldPoint,
    conv: LengthConvention = LengthConvention.PAPER_EQ5,
) -> float:
    S = common_sharpe(p1, p2)
    if p1 == p2:
        return 0.0
    return linear_path_length(S, p1.sigma, p2.sigma) - geodesic_length(p1, p2, conv)


def infinitesimal_excess(sharpe: float, epsilon: float, sigma: float) -> float:
    """First-order excess action of a constant-Sharpe step ``dsigma = epsilon``."""
    _check_sigma(sigma)
    if epsilon < 0.0:
        raise DomainError(f"epsilon must be >= 0, got {epsilon}")
    return math.sqrt(sharpe * sharpe + 2.0) * (1.0 - 1.0 / SQRT2) * epsilon / sigma


def local_geodesic_slope(p: ManifoldPoint, arc: GeodesicArc, tol_apex: float | None = None) -> float:
    """dmu/dsigma of the geodesic ``arc`` at ``p``."""
    if not arc.contains(p):
        raise DomainError(f"{p} is not on {arc} (residual {arc.residual(p):.3e})")
    tol = TOL.apex if tol_apex is None else tol_apex
    offset = p.mu - arc.mu_c
    if abs(offset) <= tol:
        raise ApexSingularity(f"{p} is at the apex of {arc}; use arc.angle_of instead")
    return -2.0 * p.sigma / offset


def _geodesic_rhs(y: np.ndarray) -> np.ndarray:
    mu_dot, sg_dot = y[2], y[3]
    g_mu_musg, g_sg_mumu, g_sg_sgsg = christoffel(y[1])
    return np.array(
        [
            mu_dot,
            sg_dot,
            -2.0 * g_mu_musg * mu_dot * sg_dot,
            -g_sg_mumu * mu_dot * mu_dot - g_sg_sgsg * sg_dot * sg_dot,
        ]
    )


def _rk4_states(y: np.ndarray, h: float, steps: int) -> np.ndarray:
    """Full ``(mu, sigma, mu', sigma')`` state after each RK4 step, start included."""
    out = np.empty((steps + 1, 4))
    out[0] = y
    for i in range(steps):
        k1 = _geodesic_rhs(y)
        k2 = _geodesic_rhs(y + 0.5 * h * k1)
        k3 = _geodesic_rhs(y + 0.5 * h * k2)
        k4 = _geodesic_rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not y[1] > 0.0:
            raise DomainError("integration left the upper half-plane; reduce the step size")
        out[i + 1] = y
    return out


def integrate_geodesic(
    start: ManifoldPoint,
    direction: tuple[float, float],
    arclength: float,
    steps: int = 1000,
) -> DiscretePath:
    """Integrate the geodesic equation with classical RK4 in metric arclength.

    The initial ``direction`` is rescaled to unit metric speed, so the path
    parameter is the metric arclength and the returned path has ``steps + 1``
    samples spaced ``arclength / steps`` apart.
    """
    _check_sigma(start.sigma)
    if arclength < 0.0:
        raise DomainError("arclength must be >= 0")
    if steps < 1:
        raise DomainError("steps must be >= 1")
    dmu, dsg = (float(c) for c in direction)
    speed = metric_speed(start, dmu, dsg)
    if speed == 0.0:
        raise DomainError("direction must be non-zero")
    if arclength == 0.0:
        return DiscretePath._degenerate(start)

    y0 = np.array([start.mu, start.sigma, dmu / speed, dsg / speed])
    out = _rk4_states(y0, arclength / steps, steps)
    return DiscretePath(out[:, 0], out[:, 1])


def _segment_lengths(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    dmu = np.diff(mu)
    dsg = np.diff(sigma)
    mid = 0.5 * (sigma[1:] + sigma[:-1])
    return np.sqrt(dmu * dmu + 2.0 * dsg * dsg) / mid


def path_length(path: DiscretePath) -> float:
    """Metric length with the midpoint rule on sigma per segment."""
    return math.fsum(_segment_lengths(path.mu, path.sigma))


def _trapezoid_lengths(mu: np.ndarray, sg: np.ndarray) -> np.ndarray:
    # trapezoid rule on the convex 1/sigma overestimates each straight segment,
    # so the total is bounded below by the geodesic distance and cannot be
    # lowered by merging points (the midpoint rule can)
    d = np.sqrt(np.diff(mu) ** 2 + 2.0 * np.diff(sg) ** 2)
    return d * 0.5 * (1.0 / sg[1:] + 1.0 / sg[:-1])


def _discrete_length(mu: np.ndarray, sg: np.ndarray) -> float:
    return math.fsum(_trapezoid_lengths(mu, sg))


_DIFF = np.array([[-1.0, 0.0, 1.0, 0.0], [0.0, -1.0, 0.0, 1.0]])


def _length_derivatives(mu: np.ndarray, sg: np.ndarray):
    """Trapezoid length, gradient and Hessian in ``(mu_0, sigma_0, mu_1, ...)`` order."""
    a = np.diff(mu)
    b = np.diff(sg)
    sa, sb = sg[:-1], sg[1:]
    d = np.sqrt(a * a + 2.0 * b * b)
    w = 0.5 * (1.0 / sa + 1.0 / sb)
    nseg = a.size
    zero = np.zeros(nseg)

    grad_d = np.stack([a / d, 2.0 * b / d], axis=1) @ _DIFF
    d3 = d**3
    h2 = np.empty((nseg, 2, 2))
    h2[:, 0, 0] = 2.0 * b * b / d3
    h2[:, 1, 1] = 2.0 * a * a / d3
    h2[:, 0, 1] = h2[:, 1, 0] = -2.0 * a * b / d3
    hess_d = np.einsum("ai,sab,bj->sij", _DIFF, h2, _DIFF)

    grad_w = np.stack([zero, -0.5 / sa**2, zero, -0.5 / sb**2], axis=1)
    hess_w = np.zeros((nseg, 4, 4))
    hess_w[:, 1, 1] = 1.0 / sa**3
    hess_w[:, 3, 3] = 1.0 / sb**3

    g4 = w[:, None] * grad_d + d[:, None] * grad_w
    cross = grad_d[:, :, None] * grad_w[:, None, :]
    h4 = w[:, None, None] * hess_d + cross + cross.transpose(0, 2, 1) + d[:, None, None] * hess_w

    n = mu.size
    grad = np.zeros(2 * n)
    hess = np.zeros((2 * n, 2 * n))
    cols = 2 * np.arange(nseg)[:, None] + np.arange(4)[None, :]
    np.add.at(grad, cols, g4)
    np.add.at(hess, (cols[:, :, None], cols[:, None, :]), h4)
    return math.fsum(d * w), grad, hess


def _newton_relax(mu, sg, iterations):
    """Relax interior points with damped Newton steps and step halving.

    Returns the per-iteration length history and whether the iteration
    reached a stationary point before ``iterations`` was exhausted.
    """
    interior = np.arange(2, 2 * mu.size - 2)
    history = [_discrete_length(mu, sg)]
    damping = 1e-12
    for _ in range(iterations):
        total, grad, hess = _length_derivatives(mu, sg)
        g = grad[interior]
        H = hess[np.ix_(interior, interior)]
        scale = float(np.max(np.abs(np.diag(H))))
        step = None
        while damping < 1e12:
            try:
                chol = np.linalg.cholesky(H + damping * scale * np.eye(g.size))
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            step = -np.linalg.solve(chol.T, np.linalg.solve(chol, g))
            break
        if step is None:
            break
        decrement = float(-g @ step)
        if decrement <= 1e-15 * total:
            return history, True
        dmu, dsg = step[0::2], step[1::2]
        # keep the trial inside the half-plane, then halve until the length drops
        t = 1.0
        neg = dsg < 0.0
        if np.any(neg):
            t = min(t, 0.9 * float(np.min(-sg[1:-1][neg] / dsg[neg])))
        accepted = False
        for _ in range(60):
            trial_mu = mu.copy()
            trial_sg = sg.copy()
            trial_mu[1:-1] += t * dmu
            trial_sg[1:-1] += t * dsg
            same = (np.diff(trial_mu) == 0.0) & (np.diff(trial_sg) == 0.0)
            if not np.any(same):
                trial = _discrete_length(trial_mu, trial_sg)
                if trial < total:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            # no representable decrease left
            return history, True
        mu[:] = trial_mu
        sg[:] = trial_sg
        history.append(trial)
        damping = max(1e-12, damping * (0.1 if t == 1.0 else 10.0))
    return history, False


def _refine(mu: np.ndarray, sg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # insert Euclidean midpoints between the relaxed points
    mu2 = np.empty(2 * mu.size - 1)
    sg2 = np.empty_like(mu2)
    mu2[0::2], sg2[0::2] = mu, sg
    mu2[1::2] = 0.5 * (mu[:-1] + mu[1:])
    sg2[1::2] = 0.5 * (sg[:-1] + sg[1:])
    return mu2, sg2


def _chord(p1: ManifoldPoint, p2: ManifoldPoint, n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.linspace(p1.mu, p2.mu, n + 1), np.linspace(p1.sigma, p2.sigma, n + 1)


def _richardson(fine: float, coarse: float) -> float:
    return (4.0 * fine - coarse) / 3.0


def minimize_path_length(
    p1: ManifoldPoint,
    p2: ManifoldPoint,
    segments: int = 128,
    iterations: int = 200,
    extrapolate: bool = True,
) -> tuple[DiscretePath, float]:
    """Numerically minimise the metric length of a polygon between fixed endpoints.

    Uses no closed form from this module.  Each straight segment is charged
    its trapezoid-rule length ``|d| (1/sigma_a + 1/sigma_b) / 2``.  The path
    starts as the Euclidean chord with 8 segments, its interior points are
    relaxed by damped Newton steps with step halving, then every segment is
    bisected and the relaxation repeated until ``segments`` is reached
    (rounded up to ``8 * 2**k``).

    The returned length is the Richardson extrapolation ``(4 L_n - L_{n/2}) / 3``
    over the last two levels, which removes the O(1/n^2) discretisation bias;
    with ``extrapolate=False`` the raw polygon length is returned.

    Raises :class:`NonConvergence` if a level exhausts ``iterations`` Newton
    steps while the relative improvement over its final 10% still exceeds 1e-7.
    """
    if p1 == p2:
        raise CoincidentPoints("endpoints coincide")
    if segments < 8:
        raise DomainError("segments must be >= 8")

    n = 8
    mu, sg = _chord(p1, p2, n)
    lengths = {}
    while True:
        history, converged = _newton_relax(mu, sg, iterations)
        if not converged:
            tail = max(1, len(history) // 10)
            before, after = history[-1 - tail], history[-1]
            if (before - after) > 1e-7 * after:
                raise NonConvergence(
                    f"relative improvement {(before - after) / after:.3e} over the last "
                    f"{tail} steps at {n} segments"
                )
        lengths[n] = history[-1]
        if n >= segments:
            break
        mu, sg = _refine(mu, sg)
        n *= 2

    # descent is monotone from the chord but refinement is not: never return
    # something worse than the straight chord at the same resolution
    chord_mu, chord_sg = _chord(p1, p2, n)
    if _discrete_length(chord_mu, chord_sg) < lengths[n]:
        mu, sg = chord_mu, chord_sg
        lengths = {k: _discrete_length(*_chord(p1, p2, k)) for k in (n // 2, n)}

    path = DiscretePath(mu, sg)
    if extrapolate and n // 2 in lengths:
        return path, _richardson(lengths[n], lengths[n // 2])
    return path, lengths[n]


def oracle_length(path: DiscretePath) -> float:
    """The polygon length functional minimised by :func:`minimize_path_length`."""
    return _discrete_length(path.mu, path.sigma)
