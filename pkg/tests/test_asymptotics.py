"""Tests for the censoring-adjusted sandwich covariance.

With no censoring the adjustment functionals collapse (gamma0 = 1,
gamma2 = 0) and the sandwich must reduce exactly to the textbook
M-estimation sandwich; those reductions serve as oracles.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cdpd.asymptotics import (
    SingularCovarianceError,
    estimate_functionals,
    sandwich,
    sigma_psi,
)
from cdpd.dpd import DpdConfig, mdpde_psi
from cdpd.estimate import FitResult, fit_mdpde, psi_sum_jacobian
from cdpd.models import make_model
from cdpd.survival_data import CensoredSample, km_weights, sort_sample


def erm_sample(rng, n=200, theta=0.5, gamma=1.0, censor_scale=None):
    x = rng.normal(gamma, 1.0, (n, 1))
    y = rng.exponential(np.exp(theta * x[:, 0]))
    if censor_scale is None:
        return CensoredSample(y, np.ones(n), x)
    c = rng.exponential(censor_scale * np.exp(theta * x[:, 0]))
    return CensoredSample(np.minimum(y, c), (y <= c).astype(float), x)


def dummy_fit(params, q):
    return FitResult(theta_hat=params[:q], gamma_hat=params[q:], alpha=0.0,
                     variant="joint", objective_value=0.0, grad_norm=0.0,
                     iterations=0, converged=True, starts_used=1)


class TestFunctionals:
    def test_no_censoring_collapses(self):
        rng = np.random.default_rng(1)
        s = sort_sample(erm_sample(rng, n=50))
        psi_values = rng.normal(size=(50, 2))
        f = estimate_functionals(s, psi_values)
        assert_allclose(f.gamma0_at, 1.0, atol=0)
        assert_allclose(f.gamma2_at, 0.0, atol=0)
        # eta = psi exactly, so Sigma is the plain sample covariance
        assert_allclose(sigma_psi(s, psi_values, f),
                        np.cov(psi_values, rowvar=False, ddof=1), rtol=1e-12)

    def test_hand_fixture_n3(self):
        # delta = (1, 0, 1) in time order: gamma0 jumps to exp(1/2) just
        # past the censored point
        s = sort_sample(CensoredSample(np.array([1.0, 2.0, 3.0]),
                                       np.array([1.0, 0.0, 1.0]),
                                       np.zeros((3, 1))))
        f = estimate_functionals(s, np.ones((3, 1)))
        assert_allclose(f.gamma0_at, [1.0, 1.0, np.exp(0.5)], rtol=1e-14)
        assert f.gamma0(2.5) == pytest.approx(np.exp(0.5))
        assert f.gamma0(1.5) == pytest.approx(1.0)

    def test_gamma0_nondecreasing_and_truncated(self):
        rng = np.random.default_rng(2)
        sample = erm_sample(rng, n=120, censor_scale=2.0)
        s = sort_sample(sample)
        f = estimate_functionals(s, rng.normal(size=(120, 2)))
        assert np.all(np.diff(f.gamma0_at) >= -1e-15)
        last_event = np.flatnonzero(s.delta_concomitant == 1)[-1]
        assert_allclose(f.gamma0_at[last_event:], f.gamma0_at[last_event])
        assert_allclose(f.gamma2_at[last_event:], f.gamma2_at[last_event][None, :])

    def test_censoring_subdistribution(self):
        s = sort_sample(CensoredSample(np.array([1.0, 2.0, 3.0, 4.0]),
                                       np.array([1.0, 0.0, 0.0, 1.0]),
                                       np.zeros((4, 1))))
        f = estimate_functionals(s, np.ones((4, 1)))
        assert f.g_z0(1.5) == pytest.approx(0.0)
        assert f.g_z0(2.5) == pytest.approx(0.25)
        assert f.g_z0(5.0) == pytest.approx(0.5)
        assert_allclose(f.g11, [0.25, 0.0, 0.0, 0.25])

    def test_constant_psi_gives_finite_sigma(self):
        rng = np.random.default_rng(3)
        s = sort_sample(erm_sample(rng, n=60, censor_scale=1.5))
        psi_values = np.full((60, 2), 3.0)
        f = estimate_functionals(s, psi_values)
        sigma = sigma_psi(s, psi_values, f)
        assert np.all(np.isfinite(sigma))
        assert np.all(np.linalg.eigvalsh(sigma) >= -1e-10)


class TestSandwich:
    def test_complete_data_matches_textbook(self):
        # no censoring: weights are 1/n and the sandwich must coincide with
        # the ordinary M-estimation estimator Lam^-1 Cov(psi) Lam^-1 / n
        rng = np.random.default_rng(4)
        sample = erm_sample(rng, n=150)
        model = make_model("erm", 1)
        cfg = DpdConfig(0.3, "joint")
        fit = fit_mdpde(model, sample, cfg)
        sw = sandwich(model, sample, fit, cfg)

        s = sort_sample(sample)
        psi_fn = mdpde_psi(model, cfg)
        rows = psi_fn(s.z_sorted, s.x_concomitant, fit.params)
        lam = psi_sum_jacobian(psi_fn, s, km_weights(s), fit.params)
        lam_inv = np.linalg.inv(lam)
        oracle = lam_inv @ np.cov(rows, rowvar=False, ddof=1) @ lam_inv.T / s.n
        assert_allclose(sw.cov, 0.5 * (oracle + oracle.T), rtol=1e-10)
        assert_allclose(sw.se, np.sqrt(np.diag(sw.cov)))

    def test_mle_se_close_to_fisher(self):
        # alpha = 0, no censoring: standard errors should approach the
        # inverse-Fisher values 1/sqrt(n E[x^2]) for theta and 1/sqrt(n)
        # for gamma
        rng = np.random.default_rng(5)
        n = 2000
        sample = erm_sample(rng, n=n)
        model = make_model("erm", 1)
        cfg = DpdConfig(0.0, "joint")
        fit = fit_mdpde(model, sample, cfg)
        sw = sandwich(model, sample, fit, cfg)
        ex2 = np.mean(sample.x[:, 0] ** 2)
        assert sw.se[0] == pytest.approx(1.0 / np.sqrt(n * ex2), rel=0.2)
        assert sw.se[1] == pytest.approx(1.0 / np.sqrt(n), rel=0.2)

    def test_censoring_inflates_variance(self):
        rng = np.random.default_rng(6)
        x = rng.normal(1.0, 1.0, (400, 1))
        y = rng.exponential(np.exp(0.5 * x[:, 0]))
        c = rng.exponential(1.5 * np.exp(0.5 * x[:, 0]))
        clean = CensoredSample(y, np.ones(400), x)
        cens = CensoredSample(np.minimum(y, c), (y <= c).astype(float), x)
        model = make_model("erm", 1)
        cfg = DpdConfig(0.0, "joint")
        se_clean = sandwich(model, clean, fit_mdpde(model, clean, cfg), cfg).se
        se_cens = sandwich(model, cens, fit_mdpde(model, cens, cfg), cfg).se
        assert se_cens[0] > se_clean[0]

    def test_singular_jacobian_raises(self):
        # duplicated covariate column makes the estimating-equation
        # Jacobian exactly rank-deficient
        rng = np.random.default_rng(7)
        n = 60
        col = rng.normal(1.0, 1.0, n)
        x = np.column_stack([col, col])
        y = rng.exponential(np.exp(0.5 * col))
        sample = CensoredSample(y, np.ones(n), x)
        model = make_model("erm", 2)
        fit = dummy_fit(np.array([0.25, 0.25, 1.0, 1.0]), q=2)
        with pytest.raises(SingularCovarianceError, match="singular"):
            sandwich(model, sample, fit, DpdConfig(0.0, "joint"))

    def test_conditional_variant_dimensions(self):
        rng = np.random.default_rng(8)
        sample = erm_sample(rng, n=150, censor_scale=4.0)
        model = make_model("erm", 1)
        cfg = DpdConfig(0.3, "conditional")
        fit = fit_mdpde(model, sample, cfg)
        sw = sandwich(model, sample, fit, cfg)
        assert sw.cov.shape == (1, 1)
        assert sw.se.shape == (1,)
        assert sw.se[0] > 0
