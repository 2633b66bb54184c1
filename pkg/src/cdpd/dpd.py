"""Power-divergence objective, its gradient, and estimating functions.

For the joint (fully parametric) variant with tuning parameter alpha > 0
the objective is

    H(theta, gamma) = mass(theta, gamma)
        - (1+alpha)/alpha * sum_i W_i [f(Z_i|X_i) f_X(X_i)]^alpha,

and at alpha = 0 the weighted negative log-likelihood. The conditional
(semi-parametric) variant drops every covariate-density factor and moves
the mass term inside the weighted sum.

The per-record estimating function psi is the parameter gradient of the
per-record summand V, so for the conditional variant the objective
gradient equals sum_i W_i psi_i exactly; for the joint variant the two
coincide whenever the weights sum to one (largest observation
uncensored), because the mass term sits outside the weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelSpec
from .survival_data import KmWeights, SortedSample


class EvaluationError(ValueError):
    """Non-finite objective or psi evaluation, with the offending record."""


@dataclass(frozen=True)
class DpdConfig:
    """Tuning parameter and variant of the divergence objective."""

    alpha: float = 0.3
    variant: str = "joint"

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError("alpha must be finite and >= 0")
        if self.variant not in ("joint", "conditional"):
            raise ValueError("variant must be 'joint' or 'conditional'")


@dataclass(frozen=True)
class PsiValue:
    """Estimating-function value split into its theta and gamma blocks."""

    psi1: np.ndarray
    psi2: np.ndarray | None = None

    def stacked(self) -> np.ndarray:
        if self.psi2 is None:
            return self.psi1
        return np.concatenate([self.psi1, self.psi2])


def param_dim(model: ModelSpec, cfg: DpdConfig) -> int:
    return model.theta_dim + (model.gamma_dim if cfg.variant == "joint" else 0)


def _log_densities(model, cfg, theta, gamma, y, x):
    logf = model.cond_log_density(y, x, theta)
    if cfg.variant == "joint":
        return logf + model.cov_log_density(x, gamma)
    return logf


def _checked_power(alpha, log_dens):
    powers = np.exp(alpha * log_dens)
    if not np.all(np.isfinite(powers)):
        bad = int(np.argmax(~np.isfinite(powers)))
        raise EvaluationError(f"density power overflow at record {bad}")
    return powers


def objective(model: ModelSpec, s: SortedSample, w: KmWeights, cfg: DpdConfig, theta, gamma=None) -> float:
    """Weighted divergence objective at (theta, gamma)."""
    a = cfg.alpha
    y, x = s.z_sorted, s.x_concomitant
    log_dens = _log_densities(model, cfg, theta, gamma, y, x)
    if a == 0.0:
        return float(-(w.w @ log_dens))
    powers = _checked_power(a, log_dens)
    data_term = (1.0 + a) / a * float(w.w @ powers)
    if cfg.variant == "joint":
        mass, _, _ = model.mass_and_zeta(theta, gamma, a)
        return float(mass - data_term)
    mass_x = model.conditional_mass(x, theta, a)
    return float(w.w @ mass_x - data_term)


def _damped_product(u, powers):
    """u * powers with score overflow annihilated by density underflow.

    When the density power underflows to zero while the score overflows,
    the true product tends to zero (the density decays faster than any
    score growth in the supported families); computing it naively yields
    inf * 0 = nan. Genuine overflow at non-negligible density is kept.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        term = u * powers[:, None]
    bad = ~np.isfinite(term)
    if np.any(bad):
        term = term.copy()
        term[bad & (powers < 1e-280)[:, None]] = 0.0
    return term


def psi_matrix(model: ModelSpec, cfg: DpdConfig, theta, gamma, y, x) -> np.ndarray:
    """Per-record psi values, one row per (y, x) record."""
    a = cfg.alpha
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u_theta = model.cond_score(y, x, theta)
    if cfg.variant == "joint":
        u = np.column_stack([u_theta, model.cov_score(x, gamma)])
        if a == 0.0:
            return -u
        _, zt, zg = model.mass_and_zeta(theta, gamma, a)
        zeta = np.concatenate([zt, zg])
        powers = _checked_power(a, _log_densities(model, cfg, theta, gamma, y, x))
        return (1.0 + a) * (zeta[None, :] - _damped_product(u, powers))
    if a == 0.0:
        return -u_theta
    zeta_x = model.conditional_zeta(x, theta, a)
    powers = _checked_power(a, model.cond_log_density(y, x, theta))
    return (1.0 + a) * (zeta_x - _damped_product(u_theta, powers))


def psi(model: ModelSpec, cfg: DpdConfig, theta, gamma, y: float, x) -> PsiValue:
    """psi at a single contamination/evaluation point (y, x)."""
    row = psi_matrix(model, cfg, theta, gamma, np.asarray([y]), np.atleast_2d(x))[0]
    q = model.theta_dim
    if cfg.variant == "joint":
        return PsiValue(psi1=row[:q], psi2=row[q:])
    return PsiValue(psi1=row)


def objective_gradient(model: ModelSpec, s: SortedSample, w: KmWeights, cfg: DpdConfig, theta, gamma=None) -> np.ndarray:
    """Exact parameter gradient of `objective`."""
    a = cfg.alpha
    y, x = s.z_sorted, s.x_concomitant
    if cfg.variant == "conditional":
        return w.w @ psi_matrix(model, cfg, theta, gamma, y, x)
    u = np.column_stack([model.cond_score(y, x, theta), model.cov_score(x, gamma)])
    if a == 0.0:
        return -(w.w @ u)
    _, zt, zg = model.mass_and_zeta(theta, gamma, a)
    powers = _checked_power(a, _log_densities(model, cfg, theta, gamma, y, x))
    return (1.0 + a) * (np.concatenate([zt, zg]) - w.w @ _damped_product(u, powers))


def mdpde_psi(model: ModelSpec, cfg: DpdConfig):
    """The divergence psi as a generic estimating function params -> (n, d)."""
    q = model.theta_dim

    def psi_fn(y, x, params):
        params = np.asarray(params, dtype=float)
        theta = params[:q]
        gamma = params[q:] if cfg.variant == "joint" else None
        return psi_matrix(model, cfg, theta, gamma, y, x)

    return psi_fn


# ready-made scalar psi0 choices for the semi-parametric M-estimators
def identity_psi0(s):
    return np.asarray(s, dtype=float)


def huber_psi0(k: float):
    def psi0(s):
        s = np.asarray(s, dtype=float)
        return np.clip(s, -k, k)

    return psi0


def zhou_psi(psi0):
    """Residual-based psi for the linear model: psi(y, x; theta) = psi0(y - x'theta) x.

    With the identity psi0 and no censoring the root is the weighted
    least-squares estimate.
    """

    def psi_fn(y, x, theta):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        resid = np.asarray(y, dtype=float) - x @ np.asarray(theta, dtype=float)
        return psi0(resid)[:, None] * x

    return psi_fn


def wang_psi(psi0, omega=None):
    """Joint (beta, sigma) psi for location-scale regression on the log-time scale.

    params = (beta, sigma); rows are [psi0(s) x w(x), chi(s)] with
    s = w(x)(y - x'beta)/sigma and chi(s) = s psi0(s) - 1.
    """
    if omega is None:
        omega = lambda x: np.ones(x.shape[0])

    def psi_fn(y, x, params):
        params = np.asarray(params, dtype=float)
        beta, sigma = params[:-1], float(params[-1])
        if not sigma > 0:
            raise EvaluationError(f"scale must be positive, got {sigma!r}")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        wts = np.asarray(omega(x), dtype=float)
        if np.any(wts <= 0):
            raise EvaluationError("omega weights must be positive")
        s = wts * (np.asarray(y, dtype=float) - x @ beta) / sigma
        ps = psi0(s)
        return np.column_stack([(ps * wts)[:, None] * x, s * ps - 1.0])

    return psi_fn
