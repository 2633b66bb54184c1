"""Sandwich covariance for weighted M-estimators under random censoring.

The weighted estimating-equation sum is asymptotically normal with a
variance built from three censoring-adjustment functionals of the
observed-time distribution:

    eta_i = psi_i * gamma0(Z_i) * delta_i + gamma1(Z_i) * (1 - delta_i)
            - gamma2(Z_i),

whose empirical covariance estimates Sigma. Combined with the
estimating-equation Jacobian Lambda this yields the sandwich
Lambda^-1 Sigma Lambda^-1 / n.

All plug-in sums use the sorted-order index as a proxy for strict time
inequalities (events precede censorings at ties), the at-risk fraction
(n - j + 1)/n as the left-continuous value of 1 - G_Z at the j-th sorted
point, and hold every functional constant beyond the largest uncensored
observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dpd import DpdConfig, mdpde_psi
from .estimate import FitResult, _prepared, psi_sum_jacobian
from .models import ModelSpec
from .survival_data import SortedSample, StepSurvival


class SingularCovarianceError(RuntimeError):
    """Estimating-equation Jacobian too ill-conditioned to invert."""


@dataclass(frozen=True)
class VarianceFunctionals:
    """Censoring-adjustment functionals evaluated at the sorted sample.

    gamma0/gamma1/gamma2 are callables of the observed time (step
    functions, constant beyond the largest event); the *_at arrays hold
    their values at the sorted observed times. g_z0 is the censoring
    subdistribution P(Z <= z, delta = 0) and g11 the point masses of the
    uncensored-record empirical measure (1/n at events, 0 otherwise).
    """

    gamma0_at: np.ndarray
    gamma1_at: np.ndarray
    gamma2_at: np.ndarray
    gamma0: StepSurvival
    g_z0: StepSurvival
    g11: np.ndarray


def _step_function(times, values):
    # StepSurvival is just a right-continuous step interpolator; reuse it
    return StepSurvival(times=np.asarray(times, dtype=float), values=np.asarray(values, dtype=float))


def estimate_functionals(s: SortedSample, psi_values: np.ndarray) -> VarianceFunctionals:
    """Plug-in gamma0, gamma1, gamma2 at the sorted sample points.

    psi_values has one row per sorted record (the estimating function at
    the fitted parameters).
    """
    psi_values = np.atleast_2d(np.asarray(psi_values, dtype=float))
    if psi_values.shape[0] != s.n:
        raise ValueError("psi_values must have one row per record")
    n = s.n
    d = psi_values.shape[1]
    delta = s.delta_concomitant
    i = np.arange(1, n + 1)

    # gamma0(Z_i) = exp( sum over censored j strictly below i of 1/(n-j+1) ),
    # the point mass 1/n divided by the left-continuous at-risk fraction
    incr = (1.0 - delta) / (n - i + 1.0)
    log_g0 = np.concatenate(([0.0], np.cumsum(incr[:-1])))
    gamma0_at = np.exp(log_g0)

    # suffix sums over events strictly above each index of psi * gamma0 / n
    a = (delta * gamma0_at)[:, None] * psi_values / n
    suffix = np.vstack([np.cumsum(a[::-1], axis=0)[::-1][1:], np.zeros((1, d))])

    # gamma1(Z_i) = suffix_i / (1 - G_Z(Z_i)) with 1 - G_Z(Z_i) = (n - i)/n;
    # zero once no events remain above (in particular at i = n)
    at_risk = (n - i) / n
    gamma1_at = np.zeros_like(suffix)
    np.divide(suffix, at_risk[:, None], out=gamma1_at, where=at_risk[:, None] > 0)

    # gamma2(Z_i) = sum over censored k strictly below i of
    #   suffix_k / (1 - G_Z(Z_k))^2 * (1/n)
    denom2 = np.zeros(n)
    np.divide(1.0, at_risk**2 * n, out=denom2, where=at_risk > 0)
    terms = ((1.0 - delta) * denom2)[:, None] * suffix
    gamma2_at = np.concatenate([np.zeros((1, d)), np.cumsum(terms[:-1], axis=0)])

    # the right-continuous curve jumps just past each censored time, so
    # its post-jump values use the inclusive cumulative sum
    gamma0_post = np.exp(np.cumsum(incr))

    # hold everything constant beyond the largest uncensored observation
    events = np.flatnonzero(delta == 1)
    if events.size:
        last = events[-1]
        gamma0_at = np.minimum(gamma0_at, gamma0_at[last])
        gamma0_post = np.minimum(gamma0_post, gamma0_post[last])
        gamma2_at[last + 1 :] = gamma2_at[last]

    g_z0_vals = np.cumsum(1.0 - delta) / n
    return VarianceFunctionals(
        gamma0_at=gamma0_at,
        gamma1_at=gamma1_at,
        gamma2_at=gamma2_at,
        gamma0=_step_function(s.z_sorted, gamma0_post),
        g_z0=_step_function(s.z_sorted, g_z0_vals),
        g11=delta / n,
    )


def sigma_psi(s: SortedSample, psi_values: np.ndarray, f: VarianceFunctionals) -> np.ndarray:
    """Empirical covariance of the censoring-adjusted influence vectors."""
    psi_values = np.atleast_2d(np.asarray(psi_values, dtype=float))
    delta = s.delta_concomitant[:, None]
    eta = psi_values * f.gamma0_at[:, None] * delta + f.gamma1_at * (1.0 - delta) - f.gamma2_at
    sigma = np.cov(eta, rowvar=False, ddof=1)
    sigma = np.atleast_2d(sigma)
    return 0.5 * (sigma + sigma.T)


@dataclass(frozen=True)
class SandwichCovariance:
    lam: np.ndarray
    sigma: np.ndarray
    cov: np.ndarray
    se: np.ndarray


def sandwich(model: ModelSpec, sample, fit: FitResult, cfg: DpdConfig) -> SandwichCovariance:
    """Sandwich covariance Lambda^-1 Sigma Lambda^-1 / n at a converged fit."""
    s, w = _prepared(sample)
    psi_fn = mdpde_psi(model, cfg)
    params = fit.params
    psi_values = psi_fn(s.z_sorted, s.x_concomitant, params)
    f = estimate_functionals(s, psi_values)
    sigma = sigma_psi(s, psi_values, f)
    lam = psi_sum_jacobian(psi_fn, s, w, params)
    cond = np.linalg.cond(lam)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularCovarianceError(
            "estimating-equation Jacobian is numerically singular; "
            "consider a larger sample or a different alpha"
        )
    lam_inv = np.linalg.inv(lam)
    cov = lam_inv @ sigma @ lam_inv.T / s.n
    cov = 0.5 * (cov + cov.T)
    return SandwichCovariance(lam=lam, sigma=sigma, cov=cov, se=np.sqrt(np.maximum(np.diag(cov), 0.0)))
