"""Airy evaluation, root bracketing, ODE integration, stencil weights.

The Airy implementation is series plus asymptotics; scipy.special serves
as the reference oracle here but is not used by the library itself.
"""

import math

import numpy as np
import pytest
import scipy.special as ss

from bandlayer.errors import BracketError, ConfigError
from bandlayer.special import (RootBracket, airy_ai, airy_ai_prime,
                               airy_first_max, airy_log_derivative,
                               fd_weights, find_root, integrate_ode)


class TestAiryValues:
    def test_against_reference_wide(self):
        u = np.linspace(-15.0, 8.0, 4601)
        ref = ss.airy(u)
        assert np.max(np.abs(airy_ai(u) - ref[0])) < 1e-10
        assert np.max(np.abs(airy_ai_prime(u) - ref[1])) < 1e-10

    def test_branch_seam_positive(self):
        # series-to-asymptotic handoff near u = 5
        u = np.linspace(4.5, 5.5, 501)
        ref = ss.airy(u)
        assert np.max(np.abs(airy_ai(u) - ref[0])) < 1e-9
        assert np.max(np.abs(airy_ai_prime(u) - ref[1])) < 1e-9

    def test_branch_seam_negative(self):
        u = np.linspace(-7.8, -7.2, 501)
        ref = ss.airy(u)
        assert np.max(np.abs(airy_ai(u) - ref[0])) < 1e-9
        assert np.max(np.abs(airy_ai_prime(u) - ref[1])) < 1e-9

    def test_origin_values(self):
        # closed forms at zero in terms of the gamma function
        assert airy_ai(0.0) == pytest.approx(
            3 ** (-2.0 / 3.0) / math.gamma(2.0 / 3.0), rel=1e-14)
        assert airy_ai_prime(0.0) == pytest.approx(
            -(3 ** (-1.0 / 3.0)) / math.gamma(1.0 / 3.0), rel=1e-14)

    def test_derivative_consistency(self):
        # Richardson-extrapolated difference of Ai matches Ai' at u = -1
        u = -1.0
        h = 1e-5
        d1 = (airy_ai(u + h) - airy_ai(u - h)) / (2 * h)
        d2 = (airy_ai(u + h / 2) - airy_ai(u - h / 2)) / h
        richardson = (4 * d2 - d1) / 3
        assert abs(richardson - airy_ai_prime(u)) < 1e-8

    def test_rejects_nonfinite(self):
        with pytest.raises(ConfigError):
            airy_ai(float("nan"))
        with pytest.raises(ConfigError):
            airy_ai_prime(float("inf"))

    def test_first_max_location(self):
        u = airy_first_max()
        assert u == pytest.approx(-1.0187929716, abs=1e-10)
        assert abs(airy_ai_prime(u)) < 1e-13


class TestAiryLogDerivative:
    def test_matches_ratio_series_zone(self):
        # relative accuracy of the ratio decays toward the series cutoff
        # as the two longdouble sums cancel; 1e-10 still holds throughout
        u = np.linspace(0.5, 4.5, 101)
        ref = ss.airy(u)
        want = ref[1] / ref[0]
        got = np.array([airy_log_derivative(v) for v in u])
        assert np.max(np.abs(got - want) / np.abs(want)) < 1e-10

    def test_matches_ratio_handoff_zone(self):
        # just above the series cutoff the exponent is still small, so
        # the asymptotic Ai carries a ~1e-7 relative remainder; absolute
        # accuracy of Ai itself stays at 1e-10 (tested above)
        u = np.linspace(4.5, 8.0, 101)
        ref = ss.airy(u)
        want = ref[1] / ref[0]
        got = np.array([airy_log_derivative(v) for v in u])
        assert np.max(np.abs(got - want) / np.abs(want)) < 1e-6

    def test_matches_ratio_deep(self):
        u = np.linspace(8.0, 35.0, 151)
        ref = ss.airy(u)
        want = ref[1] / ref[0]
        got = np.array([airy_log_derivative(v) for v in u])
        assert np.max(np.abs(got - want) / np.abs(want)) < 1e-12

    def test_matches_ratio_asymptotic(self):
        # scipy stays finite out to ~95 before Ai underflows
        u = np.linspace(41.0, 95.0, 109)
        ref = ss.airy(u)
        want = ref[1] / ref[0]
        got = np.array([airy_log_derivative(v) for v in u])
        assert np.max(np.abs(got - want) / np.abs(want)) < 1e-10

    def test_seam_jump_small(self):
        # probe so tight that the function's own slope contributes < 1e-10;
        # what remains is the branch disagreement
        eps = 1e-10
        lo = airy_log_derivative(40.0 - eps)
        hi = airy_log_derivative(40.0 + eps)
        assert abs(lo - hi) < 1e-9

    def test_far_field_behaves(self):
        # beyond the underflow point of Ai itself
        r = airy_log_derivative(600.0)
        assert r == pytest.approx(-math.sqrt(600.0), rel=1e-3)
        assert r < -math.sqrt(600.0)  # the 1/(4u) correction is negative


class TestFindRoot:
    def test_cosine_root(self):
        r = find_root(math.cos, RootBracket(1.0, 2.0, 1e-13))
        assert r == pytest.approx(math.pi / 2, abs=1e-12)

    def test_endpoint_root(self):
        r = find_root(lambda t: t - 1.0, RootBracket(1.0, 2.0, 1e-13))
        assert r == 1.0

    def test_no_sign_change(self):
        with pytest.raises(BracketError):
            find_root(lambda t: 1.0 + t * t, RootBracket(-1.0, 1.0, 1e-13))

    def test_bad_bracket(self):
        with pytest.raises(ConfigError):
            RootBracket(2.0, 1.0, 1e-13)
        with pytest.raises(ConfigError):
            RootBracket(1.0, 2.0, 0.0)


class TestIntegrateOde:
    def test_exponential(self):
        traj = integrate_ode(lambda t, y: [y[0]], [1.0], (0.0, 1.0), tol=1e-12)
        assert traj.end_state[0] == pytest.approx(math.e, rel=1e-11)

    def test_logistic_eval_grid(self):
        ts = np.linspace(0.0, 2.0, 41)
        traj = integrate_ode(lambda t, y: [y[0] * (1 - y[0])], [0.5],
                             (0.0, 2.0), tol=1e-12, t_eval=ts)
        want = 1.0 / (1.0 + np.exp(-ts))
        np.testing.assert_allclose(traj.ys[0], want, rtol=1e-10)

    def test_airy_equation_roundtrip(self):
        # y'' = t y from the origin reproduces the Airy function
        y0 = [airy_ai(0.0), airy_ai_prime(0.0)]
        traj = integrate_ode(lambda t, y: [y[1], t * y[0]], y0, (0.0, 2.0),
                             tol=1e-12)
        assert traj.end_state[0] == pytest.approx(float(ss.airy(2.0)[0]),
                                                  rel=1e-9)

    def test_backward_span(self):
        traj = integrate_ode(lambda t, y: [y[0]], [1.0], (1.0, 0.0), tol=1e-12)
        assert traj.end_state[0] == pytest.approx(1.0 / math.e, rel=1e-10)


class TestFdWeights:
    def test_central_first(self):
        w = fd_weights(0.0, np.array([-1.0, 0.0, 1.0]), 1)
        np.testing.assert_allclose(w, [-0.5, 0.0, 0.5], atol=1e-14)

    def test_central_second(self):
        w = fd_weights(0.0, np.array([-1.0, 0.0, 1.0]), 2)
        np.testing.assert_allclose(w, [1.0, -2.0, 1.0], atol=1e-14)

    def test_one_sided_second_order(self):
        w = fd_weights(0.0, np.array([0.0, 1.0, 2.0]), 1)
        np.testing.assert_allclose(w, [-1.5, 2.0, -0.5], atol=1e-14)

    def test_exact_on_polynomial(self):
        # 7-point weights on scattered nodes differentiate degree-6 exactly
        rng = np.random.default_rng(7)
        xs = np.sort(rng.uniform(-1, 1, 7))
        z = 0.1
        coef = rng.uniform(-1, 1, 7)
        w1 = fd_weights(z, xs, 1)
        w2 = fd_weights(z, xs, 2)
        p = np.polynomial.Polynomial(coef)
        assert w1 @ p(xs) == pytest.approx(p.deriv(1)(z), rel=1e-10)
        assert w2 @ p(xs) == pytest.approx(p.deriv(2)(z), rel=1e-10)

    def test_order_too_high(self):
        with pytest.raises(ConfigError):
            fd_weights(0.0, np.array([0.0, 1.0]), 2)
