import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from avalanche.errors import (
    ApexSingularity,
    CoincidentPoints,
    DomainError,
    SharpeMismatch,
    VerticalGeodesic,
)
from avalanche.geometry import (
    DiscretePath,
    GeodesicArc,
    LengthConvention,
    ManifoldPoint,
    christoffel,
    common_sharpe,
    excess_action,
    geodesic_arc,
    geodesic_length,
    infinitesimal_excess,
    integrate_geodesic,
    linear_path_length,
    local_geodesic_slope,
    metric_speed,
    path_length,
)
from avalanche.geometry import _rk4_states

from conftest import points

PAPER = LengthConvention.PAPER_EQ5
METRIC = LengthConvention.METRIC_CONSISTENT

# frozen from mpmath at 30 digits
LN2 = 0.6931471805599453
SQRT2_LN2 = 0.9802581434685472
SQRT3_LN2 = 1.2005661338529437
SQRT2_ACOSH2 = 1.8624597189054244
EXCESS_VERTICAL = 0.2871109629086019


def P(mu, sigma):
    return ManifoldPoint(mu, sigma)


class TestPoint:
    def test_rejects_nonpositive_sigma(self):
        for s in (0.0, -1.0, math.nan, math.inf):
            with pytest.raises(DomainError):
                P(0.0, s)

    def test_rejects_nonfinite_mu(self):
        with pytest.raises(DomainError):
            P(math.inf, 1.0)

    def test_sharpe_and_unpack(self):
        p = P(1.5, 3.0)
        mu, sigma = p
        assert (mu, sigma) == (1.5, 3.0)
        assert p.sharpe == 0.5

    def test_convention_parse(self):
        assert LengthConvention.parse("paper") is PAPER
        assert LengthConvention.parse("metric_consistent") is METRIC
        assert LengthConvention.parse(METRIC) is METRIC
        with pytest.raises(DomainError):
            LengthConvention.parse("euclid")


class TestMetricSpeed:
    def test_examples(self):
        assert metric_speed(P(0, 1), 1, 0) == 1.0
        assert metric_speed(P(0, 2), 0, 1) == pytest.approx(0.7071067811865475, abs=1e-15)
        assert metric_speed(P(5, 1), 0, 0) == 0.0


class TestChristoffel:
    def test_examples(self):
        assert christoffel(1.0) == (-1.0, 0.5, -1.0)
        assert christoffel(2.0) == (-0.5, 0.25, -0.5)

    def test_boundary(self):
        with pytest.raises(DomainError):
            christoffel(0.0)


class TestGeodesicArc:
    def test_horizontal_pair(self):
        arc = geodesic_arc(P(0, 1), P(2, 1))
        assert arc.mu_c == pytest.approx(1.0, abs=1e-15)
        assert arc.R == pytest.approx(1.7320508075688772, abs=1e-15)

    def test_skew_pair(self):
        arc = geodesic_arc(P(0, 1), P(1, 2))
        assert arc.mu_c == pytest.approx(3.5, abs=1e-15)
        assert arc.R == pytest.approx(3.7749172176353748, abs=1e-15)

    def test_vertical_rejected(self):
        with pytest.raises(VerticalGeodesic):
            geodesic_arc(P(0, 1), P(0, 2))

    def test_coincident_rejected(self):
        with pytest.raises(DomainError):
            geodesic_arc(P(0, 1), P(0, 1))

    def test_apex_and_angle(self):
        arc = GeodesicArc(1.0, math.sqrt(3.0))
        apex = arc.apex
        assert apex.mu == 1.0 and apex.sigma == pytest.approx(math.sqrt(1.5))
        assert arc.angle_of(apex) == pytest.approx(math.pi / 2)
        q = arc.point_at(0.3)
        assert arc.residual(q) < 1e-12

    @settings(max_examples=300, deadline=None)
    @given(points, points)
    def test_endpoint_containment(self, p1, p2):
        assume(abs(p1.mu - p2.mu) > 1e-6)
        arc = geodesic_arc(p1, p2)
        assert arc.residual(p1) < 1e-9
        assert arc.residual(p2) < 1e-9


class TestGeodesicLength:
    def test_vertical_default_convention(self):
        assert geodesic_length(P(0, 1), P(0, 2), PAPER) == pytest.approx(LN2, abs=1e-15)

    def test_vertical_metric(self):
        assert geodesic_length(P(0, 1), P(0, 2), METRIC) == pytest.approx(SQRT2_LN2, abs=1e-15)

    def test_identical(self):
        assert geodesic_length(P(0, 1), P(0, 1), PAPER) == 0.0

    def test_horizontal_metric(self):
        assert geodesic_length(P(0, 1), P(2, 1), METRIC) == pytest.approx(SQRT2_ACOSH2, abs=1e-14)

    def test_default_convention(self):
        assert geodesic_length(P(0, 1), P(0, 2)) == geodesic_length(P(0, 1), P(0, 2), PAPER)

    def test_tiny_separation_is_accurate(self):
        # the log1p form keeps precision where arcosh(1 + x) would cancel
        d = geodesic_length(P(0, 1), P(0, 1 + 1e-9), METRIC)
        assert d == pytest.approx(math.sqrt(2) * 1e-9, rel=1e-6)

    @settings(max_examples=300, deadline=None)
    @given(points, points)
    def test_symmetric_exactly(self, p1, p2):
        for conv in LengthConvention:
            assert geodesic_length(p1, p2, conv) == geodesic_length(p2, p1, conv)

    @settings(max_examples=300, deadline=None)
    @given(points, points, points)
    def test_triangle_inequality(self, a, b, c):
        d = lambda x, y: geodesic_length(x, y, METRIC)  # noqa: E731
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(points, points)
    def test_matches_mpmath(self, p1, p2):
        mpmath.mp.dps = 40
        x = (mpmath.mpf(p1.mu) - p2.mu) ** 2 + 2 * (mpmath.mpf(p1.sigma) - p2.sigma) ** 2
        ref = float(mpmath.acosh(1 + x / (4 * mpmath.mpf(p1.sigma) * p2.sigma)))
        assert geodesic_length(p1, p2, PAPER) == pytest.approx(ref, rel=1e-12, abs=1e-14)


class TestLinearLength:
    def test_examples(self):
        assert linear_path_length(0.0, 1.0, 2.0) == pytest.approx(SQRT2_LN2, abs=1e-15)
        assert linear_path_length(1.0, 1.0, 2.0) == pytest.approx(SQRT3_LN2, abs=1e-15)
        assert linear_path_length(7.0, 3.0, 3.0) == 0.0

    def test_quadrature(self):
        from scipy.integrate import quad

        S = 0.7
        ref, _ = quad(lambda s: math.sqrt(S * S + 2) / s, 0.5, 3.0, epsabs=1e-14)
        assert linear_path_length(S, 0.5, 3.0) == pytest.approx(ref, rel=1e-12)

    def test_nonpositive_sigma(self):
        with pytest.raises(DomainError):
            linear_path_length(0.0, 0.0, 1.0)


class TestExcess:
    def test_vertical_default_convention(self):
        assert excess_action(P(0, 1), P(0, 2), PAPER) == pytest.approx(EXCESS_VERTICAL, abs=1e-12)

    def test_vertical_metric_is_zero(self):
        assert excess_action(P(0, 1), P(0, 2), METRIC) == pytest.approx(0.0, abs=1e-15)

    def test_coincident(self):
        assert excess_action(P(0, 1), P(0, 1), PAPER) == 0.0

    def test_off_ray_rejected(self):
        with pytest.raises(SharpeMismatch):
            excess_action(P(0, 1), P(1, 2), PAPER)

    def test_common_sharpe(self):
        assert common_sharpe(P(0.5, 1), P(1, 2)) == 0.5

    def test_infinitesimal_examples(self):
        assert infinitesimal_excess(0.0, 0.01, 1.0) == pytest.approx(0.0041421356237310, abs=1e-15)
        assert infinitesimal_excess(0.0, 0.0, 1.0) == 0.0
        assert infinitesimal_excess(1.0, 0.02, 2.0) == pytest.approx(0.0050730593617729, abs=1e-15)

    @pytest.mark.parametrize("S", [0.0, 0.5, 2.0])
    def test_first_order_convergence(self, S):
        errs = []
        for eps in (1e-3, 1e-4, 1e-5):
            p, q = P(S * 1.0, 1.0), P(S * (1 + eps), 1 + eps)
            finite = excess_action(p, q, PAPER)
            errs.append(abs(finite / infinitesimal_excess(S, eps, 1.0) - 1))
        # relative error shrinks linearly in eps
        assert errs[1] < errs[0] / 5 and errs[2] < errs[1] / 5

    @pytest.mark.parametrize("S", [0.0, 0.5, 2.0])
    def test_metric_lengths_agree_to_first_order(self, S):
        diffs = []
        for eps in (1e-2, 1e-3):
            p, q = P(S, 1.0), P(S * (1 + eps), 1 + eps)
            diffs.append(linear_path_length(S, 1.0, 1 + eps) - geodesic_length(p, q, METRIC))
        assert abs(diffs[1]) <= abs(diffs[0]) / 50 + 1e-15


class TestSlope:
    arc = GeodesicArc(1.0, math.sqrt(3.0))

    def test_examples(self):
        assert local_geodesic_slope(P(0, 1), self.arc) == pytest.approx(2.0)
        assert local_geodesic_slope(P(2, 1), self.arc) == pytest.approx(-2.0)

    def test_apex(self):
        with pytest.raises(ApexSingularity):
            local_geodesic_slope(P(1, math.sqrt(1.5)), self.arc)

    def test_off_arc(self):
        with pytest.raises(DomainError):
            local_geodesic_slope(P(0, 2), self.arc)

    def test_slope_is_tangent(self):
        p = self.arc.point_at(2.2)
        h = 1e-6
        q = self.arc.point_at(2.2 + h)
        fd = (q.mu - p.mu) / (q.sigma - p.sigma)
        assert local_geodesic_slope(p, self.arc) == pytest.approx(fd, rel=1e-5)


class TestIntegrate:
    def test_vertical(self):
        path = integrate_geodesic(P(0, 1), (0, 1), SQRT2_LN2, steps=1000)
        assert path.end.mu == pytest.approx(0.0, abs=1e-12)
        assert path.end.sigma == pytest.approx(2.0, abs=1e-9)

    def test_zero_length(self):
        path = integrate_geodesic(P(0, 1), (1, 0), 0.0)
        assert path.start == P(0, 1) and path.end == P(0, 1)

    def test_reaches_mirror_point(self):
        # tangent of the arc through (0,1) and (2,1) has d mu / d sigma = 2 at (0,1)
        path = integrate_geodesic(P(0, 1), (2, 1), SQRT2_ACOSH2, steps=2000)
        assert path.end.mu == pytest.approx(2.0, abs=1e-3)
        assert path.end.sigma == pytest.approx(1.0, abs=1e-3)

    def test_zero_direction(self):
        with pytest.raises(DomainError):
            integrate_geodesic(P(0, 1), (0, 0), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(points, st.floats(0.0, 2 * math.pi), st.floats(0.1, 3.0))
    def test_speed_and_arc_invariant(self, start, angle, length):
        d = (math.cos(angle), math.sin(angle))
        assume(abs(d[0]) > 1e-3)
        path = integrate_geodesic(start, d, length, steps=400)
        mu, sg = path.mu, path.sigma
        # the integrator's own velocity keeps unit metric speed
        speed = metric_speed(start, *d)
        y0 = np.array([start.mu, start.sigma, d[0] / speed, d[1] / speed])
        states = _rk4_states(y0, length / 400, 400)
        v = np.sqrt(states[:, 2] ** 2 + 2 * states[:, 3] ** 2) / states[:, 1]
        assert np.max(np.abs(v - 1.0)) < 1e-6
        assert np.array_equal(states[:, 0], mu) and np.array_equal(states[:, 1], sg)
        # the trace stays on the semicircle fixed by the initial tangent
        # d mu / d sigma = -2 sigma / (mu - mu_c) fixes the centre
        mu_c = start.mu + 2 * start.sigma * d[1] / d[0]
        R2 = (start.mu - mu_c) ** 2 + 2 * start.sigma**2
        res = np.abs((mu - mu_c) ** 2 + 2 * sg**2 - R2) / R2
        assert res.max() < 1e-6


class TestPathLength:
    def test_vertical(self):
        sg = np.linspace(1.0, 2.0, 10_001)
        assert path_length(DiscretePath(np.zeros_like(sg), sg)) == pytest.approx(SQRT2_LN2, abs=1e-6)

    def test_horizontal(self):
        mu = np.linspace(0.0, 2.0, 10_001)
        assert path_length(DiscretePath(mu, np.ones_like(mu))) == pytest.approx(2.0, abs=1e-6)

    def test_coincident_consecutive_rejected(self):
        with pytest.raises(CoincidentPoints):
            DiscretePath([0, 0], [1, 1])

    def test_too_short(self):
        with pytest.raises(DomainError):
            DiscretePath([0], [1])

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.tuples(st.floats(-5, 5), st.floats(0.2, 5)), min_size=3, max_size=30, unique=True),
        st.data(),
    )
    def test_split_additivity(self, pts, data):
        mu, sg = zip(*pts)
        try:
            path = DiscretePath(mu, sg)
        except CoincidentPoints:
            assume(False)
        k = data.draw(st.integers(1, len(path) - 2))
        a, b = path.split(k)
        assert abs(path_length(a) + path_length(b) - path_length(path)) < 1e-12
