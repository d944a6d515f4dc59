"""Exact one-step Gaussian transition: coefficients, moments, and the
mutual-consistency triangle with the Euler--Maruyama oracle."""

import math

import numpy as np
import pytest
from mpmath import mp, mpf
from mpmath import exp as mp_exp

from particlemle.integrators import (SERIES_THRESHOLD, exact_transition_moments,
                                     transition_coefficients, transition_covariance)
from particlemle.oracles import em_chain_moments, em_fine_simulate, transition_quadrature
from particlemle.state import make_generator
from particlemle.validate import MOMENT_GRID, moment_mc_errors

mp.dps = 60


def highprec_transition(gamma, eta, t):
    """Closed forms evaluated in 60-digit arithmetic."""
    g, e, tt = mpf(gamma), mpf(eta), mpf(t)
    a = g * e
    w1 = mp_exp(-a * tt)
    w2 = mp_exp(-2 * a * tt)
    iota = 1 - w1
    drift_pos = (tt - iota / a) / g
    drift_mom = iota / a
    cov_xx = (2 * tt - w2 / a + 4 * w1 / a - 3 / a) / g
    cov_ux = (1 - 2 * w1 + w2) / a
    cov_uu = (1 - w2) / e
    return {k: float(v) for k, v in dict(
        iota=iota, omega=w1, drift_pos_weight=drift_pos, drift_mom_weight=drift_mom,
        cov_xx=cov_xx, cov_ux=cov_ux, cov_uu=cov_uu).items()}


class TestCoefficients:
    def test_log2_closed_form(self):
        c = transition_coefficients(1.0, 1.0, math.log(2.0))
        assert c.iota == pytest.approx(0.5, abs=1e-15)
        assert c.omega == pytest.approx(0.5, abs=1e-15)

    def test_stationary_momentum_variance_large_h(self):
        for eta in (0.5, 1.0, 4.0):
            _, _, cov_uu = transition_covariance(2.0, eta, 1e3)
            assert cov_uu == pytest.approx(1.0 / eta, rel=1e-12)

    def test_invalid_inputs(self):
        for bad in [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, 0.0)]:
            with pytest.raises(ValueError):
                transition_coefficients(*bad)

    @pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0])
    @pytest.mark.parametrize("eta", [0.1, 1.0, 10.0])
    @pytest.mark.parametrize("h", [1e-3, 1e-1])
    def test_cholesky_reconstructs_covariance(self, gamma, eta, h):
        """L L^T equals the analytic covariance blocks to 1e-10 relative."""
        c = transition_coefficients(gamma, eta, h)
        ref = highprec_transition(gamma, eta, h)
        sigma = np.array([[ref["cov_xx"], ref["cov_ux"]],
                          [ref["cov_ux"], ref["cov_uu"]]])
        llt = np.array([[c.L_xx**2, c.L_xx * c.L_xu],
                        [c.L_xx * c.L_xu, c.L_xu**2 + c.L_uu**2]])
        assert np.linalg.norm(llt - sigma) / np.linalg.norm(sigma) <= 1e-10

    @pytest.mark.parametrize("s", np.geomspace(1e-8, 20.0, 25).tolist())
    def test_highprec_agreement_wide_range(self, s):
        gamma, eta = 0.7, 1.3
        h = s / (gamma * eta)
        c = transition_coefficients(gamma, eta, h)
        cov_xx, cov_ux, cov_uu = transition_covariance(gamma, eta, h)
        ref = highprec_transition(gamma, eta, h)
        for name, val in [("iota", c.iota), ("omega", c.omega),
                          ("drift_pos_weight", c.drift_pos_weight),
                          ("drift_mom_weight", c.drift_mom_weight),
                          ("cov_xx", cov_xx), ("cov_ux", cov_ux), ("cov_uu", cov_uu)]:
            assert val == pytest.approx(ref[name], rel=1e-12), name

    def test_series_closed_crossover_agreement(self):
        """Series and closed forms agree to 1e-12 where the branch switches."""
        gamma, eta = 1.0, 1.0
        for s in (SERIES_THRESHOLD * (1 - 1e-9), SERIES_THRESHOLD * (1 + 1e-9)):
            c = transition_coefficients(gamma, eta, s)
            ref = highprec_transition(gamma, eta, s)
            assert c.drift_pos_weight == pytest.approx(ref["drift_pos_weight"], rel=1e-12)
            cov_xx, _, _ = transition_covariance(gamma, eta, s)
            assert cov_xx == pytest.approx(ref["cov_xx"], rel=1e-12)

    def test_nonnegative_cholesky_entries(self):
        for gamma, eta, h in MOMENT_GRID:
            c = transition_coefficients(gamma, eta, h)
            assert c.L_xx >= 0 and c.L_uu >= 0

    def test_quadrature_cross_check(self):
        for gamma, eta, h in [(0.3, 2.0, 1e-4), (5.0, 0.2, 0.7), (1.0, 1.0, 2.0)]:
            c = transition_coefficients(gamma, eta, h)
            cov_xx, cov_ux, cov_uu = transition_covariance(gamma, eta, h)
            ref = transition_quadrature(gamma, eta, h)
            assert c.drift_pos_weight == pytest.approx(ref["drift_pos_weight"], rel=1e-12)
            assert cov_xx == pytest.approx(ref["cov_xx"], rel=1e-11)
            assert cov_ux == pytest.approx(ref["cov_ux"], rel=1e-11)
            assert cov_uu == pytest.approx(ref["cov_uu"], rel=1e-11)


class TestExactMoments:
    def test_zero_drift(self):
        mx, mu, *_ = exact_transition_moments(1.5, 0.0, 0.0, 1.0, 2.0, 0.7)
        assert mx == pytest.approx(1.5, abs=1e-15)
        assert mu == pytest.approx(0.0, abs=1e-15)

    def test_covariance_independent_of_x0(self):
        _, _, *cov_a = exact_transition_moments(0.0, 0.3, 0.5, 1.0, 2.0, 0.7)
        _, _, *cov_b = exact_transition_moments(9.0, 0.3, 0.5, 1.0, 2.0, 0.7)
        assert cov_a == pytest.approx(cov_b, rel=1e-15)

    def test_identity_at_small_t(self):
        x0, u0, g = 0.4, -0.2, 1.1
        mx, mu, sxx, sux, suu = exact_transition_moments(x0, u0, g, 1.0, 1.0, 1e-12)
        assert mx == pytest.approx(x0, abs=1e-11)
        assert mu == pytest.approx(u0, abs=1e-11)
        assert max(abs(sxx), abs(sux), abs(suu)) < 1e-11

    def test_t_must_be_positive(self):
        with pytest.raises(ValueError):
            exact_transition_moments(0.0, 0.0, 0.0, 1.0, 1.0, 0.0)

    def test_mean_formulas_highprec(self):
        gamma, eta, t = 0.8, 1.7, 0.45
        x0, u0, g = 0.3, -0.6, 0.9
        ref = highprec_transition(gamma, eta, t)
        mx, mu, *_ = exact_transition_moments(x0, u0, g, gamma, eta, t)
        assert mu == pytest.approx(ref["omega"] * u0 + ref["drift_mom_weight"] * g, rel=1e-13)
        assert mx == pytest.approx(
            x0 + ref["iota"] * u0 / gamma + ref["drift_pos_weight"] * g, rel=1e-13)


class TestMonteCarloConsistency:
    """Mutual-consistency triangle: sampled transition, analytic moments,
    and the fine-step Euler--Maruyama oracle agree pairwise within 5 SE."""

    @pytest.mark.parametrize("i,grid_point", list(enumerate(MOMENT_GRID)))
    def test_moments_within_5_se(self, i, grid_point):
        gamma, eta, h = grid_point
        gap_exact, gap_em = moment_mc_errors(gamma, eta, h, seed=300 + i)
        assert gap_exact <= 5.0
        assert gap_em <= 5.0

    def test_em_paths_match_exact_moments(self):
        gamma, eta, t = 1.1, 0.9, 0.6
        x0, u0, g = 0.2, 0.4, -0.7
        rng = make_generator(31, 0)
        n = 20000
        xs, us = em_fine_simulate(x0, u0, g, gamma, eta, t, 400, rng, n_paths=n)
        mx, mu, sxx, sux, suu = exact_transition_moments(x0, u0, g, gamma, eta, t)
        assert abs(xs.mean() - mx) <= 5 * math.sqrt(sxx / n)
        assert abs(us.mean() - mu) <= 5 * math.sqrt(suu / n)


class TestEmOracle:
    def test_no_damping_straight_line(self):
        x0, u0, eta, t = 0.5, 0.3, 2.0, 1.5
        rng = make_generator(32, 0)
        xs, us = em_fine_simulate(x0, u0, 0.0, 0.0, eta, t, 64, rng)
        assert xs[0, 0] == pytest.approx(x0 + eta * u0 * t, rel=1e-12)
        assert us[0, 0] == pytest.approx(u0, abs=1e-15)

    def test_weak_error_halves(self):
        gamma, eta, t = 0.8, 1.3, 0.7
        x0, u0, g = 0.2, -0.1, 0.5
        mx = exact_transition_moments(x0, u0, g, gamma, eta, t)[0]
        e1 = abs(em_chain_moments(x0, u0, g, gamma, eta, t, 100)[0][0] - mx)
        e2 = abs(em_chain_moments(x0, u0, g, gamma, eta, t, 200)[0][0] - mx)
        assert 1.5 <= e1 / e2 <= 3.0

    def test_substeps_validated(self):
        with pytest.raises(ValueError):
            em_fine_simulate(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0, make_generator(1, 0))


def test_mu_heuristic_identity_property():
    """|iota - gamma*eta*h| <= (gamma*eta*h)^2 / 2 across scales."""
    for s in np.geomspace(1e-8, 5.0, 60):
        iota = -math.expm1(-s)
        assert abs(iota - s) <= s * s / 2.0 + 1e-18
