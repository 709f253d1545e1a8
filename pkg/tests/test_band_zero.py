"""Linear-cost band: homogeneous pair, resolvent, boundaries, values.

Oracles used here, all independent of the construction under test:
- the resolvent of a linear source is linear and of a constant source is
  constant (hand closed forms for the mean-reverting signal),
- the Wronskian of the homogeneous pair obeys the integrating-factor
  identity,
- with no signal dynamics everything collapses to hand-computable
  exponentials and a flat band,
- at the boundary the third derivative obeys an exact relation among
  the band level, slope, drift, and model constants (from the equation
  itself differentiated along the boundary),
- displacing the boundary changes the value quadratically.
"""

import math

import numpy as np
import pytest
from scipy.integrate import cumulative_trapezoid

from bandlayer.errors import ConfigError, DomainError, RegimeError
from bandlayer.model import ModelParams
from bandlayer.band_zero import (check_displacement_identity,
                                 displacement_value_shift, find_band_zero,
                                 flat_band_level, greens_particular,
                                 second_derivative_at_band,
                                 solve_homogeneous,
                                 third_derivative_at_band,
                                 third_derivative_stencil, value_nt_zero,
                                 value_rb_zero)
from tests.conftest import DESK_GAMMA


class TestHomogeneousPair:
    def test_wronskian_negative_everywhere(self, desk_pair):
        assert np.all(desk_pair.wronskian_samples < 0)

    def test_wronskian_integrating_factor(self, desk_model, desk_pair):
        # W(x) * exp(-int 2 mu/sigma^2) is constant; the factor is itself
        # computed by quadrature so the check is independent of the
        # closed-form exponential
        xq = desk_pair.x_quad
        mu = -desk_model.omega * xq
        expo = cumulative_trapezoid(-2 * mu / desk_model.sigma ** 2, xq,
                                    initial=0.0)
        expo -= expo[np.argmin(np.abs(xq))]
        scaled = desk_pair.wronskian_samples * np.exp(-expo)
        assert np.max(np.abs(scaled + 1.0)) < 1e-6

    def test_reflection_symmetry(self, desk_pair):
        # symmetric signal: the two solutions are mirror images
        scale = np.max(desk_pair.psi1_s)
        dev = np.abs(desk_pair.psi2_s - desk_pair.psi1_s[::-1]) / scale
        assert np.max(dev) < 1e-8

    def test_growth_directions(self, desk_pair):
        # psi1 recessive at the left edge, dominant at the right
        assert desk_pair.psi1_s[0] < 1e-6 * desk_pair.psi1_s[-1]
        assert desk_pair.psi2_s[-1] < 1e-6 * desk_pair.psi2_s[0]
        assert np.all(desk_pair.psi1_s > 0)
        assert np.all(desk_pair.psi2_s > 0)

    def test_ode_residual_via_spline(self, desk_model, desk_pair):
        # differentiating the spline twice must reproduce the equation
        xs = np.linspace(-0.25, 0.25, 401)
        p = desk_model
        d2 = desk_pair.psi1.derivative(2)(xs)
        lhs = 0.5 * p.sigma ** 2 * d2
        rhs = p.omega * xs * desk_pair.psi1_d(xs) + p.rho * desk_pair.psi1(xs)
        scale = np.abs(rhs) + np.max(np.abs(rhs)) * 1e-3
        assert np.max(np.abs(lhs - rhs) / scale) < 1e-5

    def test_flattens_as_discount_vanishes(self):
        # at zero discounting a constant solves the equation, so the
        # center log-slope of the recessive solution scales like rho
        dom = (-0.3, 0.3)
        slope = {}
        for rho in (1e-2, 1e-4):
            p = ModelParams(sigma=0.02, omega=0.1, lam=1.0, rho=rho)
            pr = solve_homogeneous(p, dom)
            slope[rho] = abs(float(pr.psi1_d(0.0) / pr.psi1(0.0)))
        assert slope[1e-4] < 0.05 * slope[1e-2]

    def test_no_reversion_exponentials(self):
        # omega = 0: solutions are exp(-+kappa x) with kappa = sqrt(2 rho)/sigma
        p = ModelParams(sigma=0.02, omega=0.0, lam=1.0, rho=1e-3)
        pr = solve_homogeneous(p, (-2.0, 2.0))
        kappa = math.sqrt(2 * p.rho) / p.sigma
        xs = pr.x_quad
        w_abs = math.sqrt(2 * kappa)     # normalization fixes |W| = 1
        want1 = np.exp(kappa * xs) / w_abs * math.exp(0.0)
        # match at the center to remove the edge-anchored scaling
        ic = np.argmin(np.abs(xs))
        got1 = pr.psi1_s / pr.psi1_s[ic] * want1[ic]
        assert np.max(np.abs(got1 - want1) / want1) < 1e-8

    def test_bad_domain(self, desk_model):
        with pytest.raises(ConfigError):
            solve_homogeneous(desk_model, (0.3, -0.3))


class TestGreensParticular:
    def test_drift_part_closed_form(self, desk_model, desk_comp):
        # resolvent of the linear drift is exactly linear: -omega x/(rho+omega)
        p = desk_model
        xs = np.linspace(-0.26, 0.26, 53)
        want = -p.omega * xs / (p.rho + p.omega)
        assert np.max(np.abs(desk_comp.drift_part(xs) - want)) < 1e-7

    def test_risk_part_closed_form(self, desk_model, desk_comp):
        # resolvent of a constant is that constant over the discount rate
        p = desk_model
        xs = np.linspace(-0.26, 0.26, 53)
        want = -2 * p.lam / p.rho
        assert np.max(np.abs(desk_comp.risk_part(xs) / want - 1)) < 1e-6

    def test_equation_residual_from_samples(self, desk_model, desk_comp):
        # second differences of the tabulated parts must satisfy the
        # defining equations (no use of the stored derivative identities).
        # Stride the sample grid so the 1/h^2 amplification does not pick
        # up node-parity jitter of the cumulative quadrature.
        p = desk_model
        xq = desk_comp.pair.x_quad[::8]
        keep = (xq >= -0.26) & (xq <= 0.26)
        h = xq[1] - xq[0]
        for part, source in ((desk_comp.drift_part, -p.omega * xq),
                             (desk_comp.risk_part,
                              np.full_like(xq, -2 * p.lam))):
            f = part(xq)
            fxx = (f[2:] - 2 * f[1:-1] + f[:-2]) / h ** 2
            fx = (f[2:] - f[:-2]) / (2 * h)
            mu = -p.omega * xq[1:-1]
            resid = (0.5 * p.sigma ** 2 * fxx + mu * fx - p.rho * f[1:-1]
                     + source[1:-1])
            scale = np.max(np.abs(source)) + 1e-300
            assert np.max(np.abs(resid[keep[1:-1]])) / scale < 1e-6

    def test_kernel_positive(self, desk_comp):
        for x, xi in ((-0.1, 0.05), (0.0, 0.0), (0.2, -0.2), (0.1, 0.12)):
            assert desk_comp.greens_kernel(x, xi) > 0

    def test_slope_conditions_reconstructed(self, desk_comp, desk_band):
        # at swept levels the boundary-value conditions hold to roundoff
        b = desk_band
        pr = desk_comp.pair
        for j in (3, len(b.levels) // 2, len(b.levels) - 4):
            th, hp, hm = b.levels[j], b.h_plus[j], b.h_minus[j]
            a1, a2 = b.alpha1_prime[j], b.alpha2_prime[j]
            up = desk_comp.i_value(hp, th) + a1 * pr.psi1(hp) + a2 * pr.psi2(hp)
            dn = desk_comp.i_value(hm, th) + a1 * pr.psi1(hm) + a2 * pr.psi2(hm)
            assert up == pytest.approx(-DESK_GAMMA, abs=1e-12)
            assert dn == pytest.approx(+DESK_GAMMA, abs=1e-12)

    def test_alpha_antisymmetry(self, desk_comp):
        # x -> -x, theta -> -theta maps the solution onto itself with the
        # two homogeneous solutions swapped
        hp, hm, th = 0.013, -0.008, 2e-4
        a1, a2 = desk_comp.alpha_coefficients(hp, hm, DESK_GAMMA, th)
        b1, b2 = desk_comp.alpha_coefficients(-hm, -hp, DESK_GAMMA, -th)
        assert a1 == pytest.approx(-b2, rel=1e-9)
        assert a2 == pytest.approx(-b1, rel=1e-9)

    def test_alpha_requires_ordering(self, desk_comp):
        with pytest.raises(ConfigError):
            desk_comp.alpha_coefficients(-0.01, 0.01, DESK_GAMMA, 0.0)


class TestBandGeometry:
    def test_symmetry(self, desk_band):
        # reflection symmetry of the model implies band antisymmetry;
        # compare at the polished nodes themselves (the node grid is
        # symmetric) so no interpolation enters
        up = desk_band.theta_plus
        dn = desk_band.theta_minus[::-1]
        np.testing.assert_allclose(up, dn, rtol=1e-10,
                                   atol=1e-10 * np.max(np.abs(up)))

    def test_upper_boundary_decreasing(self, desk_band):
        assert np.all(np.diff(desk_band.theta_plus) < 0)
        assert np.all(desk_band.theta_plus_deriv < 0)

    def test_width_positive_and_near_small_cost_scale(self, desk_model,
                                                      desk_band):
        p = desk_model
        w_small = (p.omega / (2 * p.lam)) * (
            1.5 * DESK_GAMMA * p.sigma ** 2 / p.omega) ** (1 / 3)
        width = desk_band.theta_plus + desk_band.theta_minus
        assert np.all(width > 0)
        # small-cost scale is right to ~10% at these parameters
        assert abs(width[len(width) // 2] / (2 * w_small) - 1) < 0.1

    def test_band_brackets_frictionless_target(self, desk_model, desk_band):
        xs = desk_band.x_nodes
        target = -desk_model.omega * xs / (2 * desk_model.lam)
        assert np.all(desk_band.theta_plus > target)
        assert np.all(-desk_band.theta_minus < target)

    def test_slope_matches_differenced_level_curve(self, desk_band):
        # stored exact slopes vs differentiated spline of the sampled curve
        xs = np.linspace(-0.2, 0.2, 9)
        from scipy.interpolate import CubicSpline
        sp = CubicSpline(desk_band.x_nodes, desk_band.theta_plus)
        got = desk_band.theta_plus_deriv_at(xs)
        np.testing.assert_allclose(got, sp.derivative()(xs), rtol=1e-5)

    def test_narrows_with_smaller_cost(self, desk_model, desk_comp, desk_band):
        b_small = find_band_zero(desk_model, DESK_GAMMA / 8, comp=desk_comp)
        assert float(b_small.theta_plus_at(0.0)) < float(
            desk_band.theta_plus_at(0.0))
        # cube-root law: gamma/8 halves the width
        ratio = float(b_small.theta_plus_at(0.0) + b_small.theta_minus_at(0.0)) \
            / float(desk_band.theta_plus_at(0.0) + desk_band.theta_minus_at(0.0))
        assert ratio == pytest.approx(0.5, abs=0.02)

    def test_tiny_cost_still_solves(self, desk_model, desk_comp):
        widths = {}
        for gamma in (1e-6, 1e-7):
            b = find_band_zero(desk_model, gamma, comp=desk_comp,
                               x_nodes=np.linspace(-0.1, 0.1, 41))
            assert float(b.theta_plus_at(0.0)) > 0
            assert np.all(np.isfinite(b.alpha1_prime))
            assert np.all(np.isfinite(b.alpha2_prime))
            widths[gamma] = float(b.width(0.0))
        # widths follow the cube-root cost law deep into the small-cost end
        assert widths[1e-7] / widths[1e-6] == pytest.approx(0.1 ** (1 / 3),
                                                            rel=0.02)

    def test_rejects_bad_gamma(self, desk_model, desk_comp):
        with pytest.raises(ConfigError):
            find_band_zero(desk_model, 0.0, comp=desk_comp)

    def test_coverage_failure_raises(self, desk_model):
        # with almost no padding the level interval cannot step past the
        # grid ends, so the boundary cannot cover the grid: fail loudly
        with pytest.raises(RegimeError):
            find_band_zero(desk_model, DESK_GAMMA,
                           x_nodes=np.linspace(-0.4, 0.4, 31),
                           pad_frac=0.005)

    def test_flat_band_without_reversion(self):
        p = ModelParams(sigma=0.02, omega=0.0, lam=1.0, rho=1e-3)
        b = find_band_zero(p, DESK_GAMMA,
                           x_nodes=np.linspace(-1.0, 1.0, 11))
        want = flat_band_level(p, DESK_GAMMA)
        assert want == pytest.approx(1e-3 * DESK_GAMMA / 2, rel=1e-12)
        np.testing.assert_allclose(b.theta_plus, want, rtol=1e-12)
        np.testing.assert_allclose(b.theta_minus, want, rtol=1e-12)
        assert b.flat
        assert float(b.theta_plus_deriv_at(0.3)) == 0.0


class TestBandDerivatives:
    def test_second_derivative_vanishes(self, desk_comp, desk_band):
        # optimality of the boundary family: total curvature in the level
        # direction is zero at the boundary
        gamma = desk_band.gamma_lin
        for x in (-0.2, -0.05, 0.0, 0.1, 0.22):
            width = float(desk_band.width(x))
            v2 = second_derivative_at_band(desk_comp, desk_band, x)
            assert abs(v2) * width / gamma < 1e-6

    def test_third_derivative_two_routes_agree(self, desk_comp, desk_band):
        for x in (-0.2, 0.0, 0.17):
            v3 = third_derivative_at_band(desk_comp, desk_band, x)
            v3s = third_derivative_stencil(desk_comp, desk_band, x)
            assert v3 > 0
            assert abs(v3s / v3 - 1) < 1e-3

    def test_third_derivative_exact_relation(self, desk_model, desk_comp,
                                             desk_band):
        # differentiate the interior equation along the boundary curve:
        # v3 * slope^2 = (2/sigma^2)(2 lam level - drift - rho gamma)
        p = desk_model
        for x in (-0.15, 0.0, 0.2):
            level = float(desk_band.theta_plus_at(x))
            slope = float(desk_band.theta_plus_deriv_at(x))
            mu = -p.omega * x
            want = (2 / p.sigma ** 2) * (
                2 * p.lam * level - mu - p.rho * desk_band.gamma_lin) / slope ** 2
            got = third_derivative_at_band(desk_comp, desk_band, x)
            assert got == pytest.approx(want, rel=1e-8)

    def test_third_derivative_small_cost_scale(self, desk_model, desk_comp,
                                               desk_band):
        p = desk_model
        est = 8 * p.lam ** 2 / (p.sigma ** 2 * p.omega) * (
            1.5 * desk_band.gamma_lin * p.sigma ** 2 / p.omega) ** (1 / 3)
        got = third_derivative_at_band(desk_comp, desk_band, 0.0)
        assert got == pytest.approx(est, rel=0.05)

    def test_flat_band_rejects_third_derivative(self, desk_comp):
        p = ModelParams(sigma=0.02, omega=0.0, lam=1.0, rho=1e-3)
        b = find_band_zero(p, DESK_GAMMA, x_nodes=np.linspace(-1, 1, 11))
        with pytest.raises(RegimeError):
            third_derivative_at_band(desk_comp, b, 0.0)


class TestDisplacementIdentity:
    def test_matches_minus_third_derivative(self, desk_comp, desk_band):
        for x in (-0.2, -0.1, 0.0, 0.1, 0.2):
            lhs, rhs = check_displacement_identity(desk_comp, desk_band, x)
            assert lhs == pytest.approx(rhs, rel=1e-2)

    def test_value_shift_quadratic_in_displacement(self, desk_comp, desk_band):
        w = float(desk_band.width(0.0))
        th = 0.7 * float(desk_band.theta_plus_at(0.0))
        deltas = np.array([0.02, 0.01, 0.005]) * w
        shifts = [displacement_value_shift(desk_comp, desk_band, 0.0, th, d)
                  for d in deltas]
        slope = np.polyfit(np.log(deltas), np.log(shifts), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.1)


class TestValues:
    def test_outside_slope_is_linear_cost(self, desk_comp, desk_band):
        tb = float(desk_band.theta_plus_at(0.0))
        v_edge = value_nt_zero(desk_comp, desk_band, 0.0, tb)
        for gap in (1e-4, 3e-4):
            v_out = value_rb_zero(desk_comp, desk_band, 0.0, tb + gap)
            assert (v_out - v_edge) / gap == pytest.approx(
                -desk_band.gamma_lin, rel=1e-9)

    def test_domain_errors(self, desk_comp, desk_band):
        tb = float(desk_band.theta_plus_at(0.0))
        with pytest.raises(DomainError):
            value_nt_zero(desk_comp, desk_band, 0.0, 1.5 * tb)
        with pytest.raises(DomainError):
            value_rb_zero(desk_comp, desk_band, 0.0, 0.5 * tb)

    def test_value_negative_inside(self, desk_comp, desk_band):
        # with the level-zero gauge the running penalty makes value < 0
        assert value_nt_zero(desk_comp, desk_band, 0.0,
                             0.5 * float(desk_band.theta_plus_at(0.0))) < 0

    def test_more_risk_aversion_lowers_value(self, desk_model, desk_comp,
                                             desk_band):
        p2 = ModelParams(sigma=desk_model.sigma, omega=desk_model.omega,
                         lam=1.5 * desk_model.lam, rho=desk_model.rho)
        pair2 = solve_homogeneous(p2)
        comp2 = greens_particular(p2, pair2)
        band2 = find_band_zero(p2, DESK_GAMMA, comp=comp2)
        th = 0.5 * float(desk_band.theta_plus_at(0.0))
        assert value_nt_zero(comp2, band2, 0.0, th) < \
            value_nt_zero(desk_comp, desk_band, 0.0, th)

    def test_no_reversion_closed_form(self):
        # flat case: value is -lam theta^2 / rho exactly
        p = ModelParams(sigma=0.02, omega=0.0, lam=1.0, rho=1e-3)
        pair = solve_homogeneous(p, (-1.0, 1.0))
        comp = greens_particular(p, pair)
        b = find_band_zero(p, DESK_GAMMA, x_nodes=np.linspace(-1, 1, 11))
        th = 0.5 * flat_band_level(p, DESK_GAMMA)
        assert value_nt_zero(comp, b, 0.0, th) == pytest.approx(
            -p.lam * th ** 2 / p.rho, rel=1e-12)
