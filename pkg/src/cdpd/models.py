"""Parametric families for censored regression with stochastic covariates.

Each model pairs a conditional lifetime density f(y | x; theta) with the
normal covariate marginal N_p(gamma, I_p) and exposes, besides densities
and scores, the two ingredients the power-divergence objective needs:

* the mass integral  integral of [f(y|x) f_X(x)]^(1+alpha) dy dx, and
* the zeta vectors   integral of score * [f f_X]^(1+alpha) dy dx,

plus their conditional-only counterparts (integrals over y at fixed x)
for the semi-parametric variant.

The normal marginal makes the x-integrals analytic or one-dimensional:
f_X^(1+alpha) is proportional to an N_p(gamma, I_p/(1+alpha)) density, so
expectations of exp(-alpha x'b) and of powers of x'theta reduce to
Gaussian identities and Gauss-Hermite sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

LOG_2PI = float(np.log(2.0 * np.pi))


class SupportError(ValueError):
    """Parameter/data combination outside the model support."""


@dataclass(frozen=True)
class QuadratureConfig:
    """Node count for Gauss-Hermite sums and tolerance for adaptive 1-D quadrature."""

    nodes: int = 64
    tol: float = 1e-8


DEFAULT_QUAD = QuadratureConfig()


@lru_cache(maxsize=8)
def _hermgauss(nodes: int):
    t, w = np.polynomial.hermite.hermgauss(nodes)
    return t, w / np.sqrt(np.pi)


def _gauss_expectation(h, mean: float, var: float, quad_cfg: QuadratureConfig):
    """E[h(W)] for W ~ N(mean, var) by Gauss-Hermite; exact when var == 0."""
    if var == 0.0:
        return h(np.asarray([mean]))[0], np.asarray([mean])
    t, w = _hermgauss(quad_cfg.nodes)
    nodes = mean + np.sqrt(2.0 * var) * t
    return float(w @ h(nodes)), nodes


def _cov_power_const(p: int, alpha: float) -> float:
    # integral of N_p(x; gamma, I)^(1+alpha) dx absorbed constant:
    # f_X^(1+alpha) = const * N_p(x; gamma, I/(1+alpha))
    return (2.0 * np.pi) ** (-p * alpha / 2.0) * (1.0 + alpha) ** (-p / 2.0)


def _tilted_moment(gamma: np.ndarray, b: np.ndarray, alpha: float):
    """E[exp(-alpha b'X~)] and E[X~ exp(-alpha b'X~)] for X~ ~ N(gamma, I/(1+alpha))."""
    v = 1.0 / (1.0 + alpha)
    s = -alpha * b
    a0 = float(np.exp(s @ gamma + 0.5 * v * s @ s))
    a1 = a0 * (gamma + v * s)
    return a0, a1


def cov_log_density(x: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    d = x - gamma
    return -0.5 * (x.shape[1] * LOG_2PI + np.einsum("ij,ij->i", d, d))


def cov_score(x: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    return x - gamma


class ModelSpec:
    """Base class: conditional family + normal covariate marginal."""

    name: str = "base"

    def __init__(self, p: int, quad: QuadratureConfig = DEFAULT_QUAD):
        if p < 1:
            raise ValueError("covariate dimension must be >= 1")
        self.p = p
        self.quad = quad

    @property
    def theta_dim(self) -> int:
        raise NotImplementedError

    @property
    def gamma_dim(self) -> int:
        return self.p

    # conditional family -------------------------------------------------
    def cond_log_density(self, y, x, theta):
        raise NotImplementedError

    def cond_score(self, y, x, theta):
        raise NotImplementedError

    def conditional_mass(self, x, theta, alpha):
        """integral of f(y|x)^(1+alpha) dy, per row of x."""
        raise NotImplementedError

    def conditional_zeta(self, x, theta, alpha):
        """integral of u_theta f(y|x)^(1+alpha) dy, per row of x."""
        raise NotImplementedError

    def mass_and_zeta(self, theta, gamma, alpha):
        """(mass integral, zeta_theta, zeta_gamma) for the joint density."""
        raise NotImplementedError

    def support_ok(self, theta, gamma, x=None) -> bool:
        return True

    # covariate marginal -------------------------------------------------
    def cov_log_density(self, x, gamma):
        return cov_log_density(np.atleast_2d(x), np.asarray(gamma, dtype=float))

    def cov_score(self, x, gamma):
        return cov_score(np.atleast_2d(x), np.asarray(gamma, dtype=float))

    # solver plumbing ----------------------------------------------------
    def to_unconstrained(self, theta):
        return np.asarray(theta, dtype=float).copy()

    def from_unconstrained(self, t):
        return np.asarray(t, dtype=float).copy()

    def unconstrained_jacobian_diag(self, theta):
        return np.ones(self.theta_dim)

    def init_params(self, s, w):
        raise NotImplementedError


def _weighted_ls(x, target, wts):
    wts = np.maximum(wts, 0.0)
    xtwx = x.T @ (x * wts[:, None])
    xtwy = x.T @ (wts * target)
    try:
        return np.linalg.solve(xtwx, xtwy)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(x, target, rcond=None)[0]


def _weighted_gamma(s, w):
    tot = w.w.sum()
    if tot <= 0:
        return s.x_concomitant.mean(axis=0)
    return (w.w @ s.x_concomitant) / tot


class LinearExpModel(ModelSpec):
    """Y | X exponential with mean x'theta, X ~ N_p(gamma, I_p).

    The conditional mean must be positive wherever the model is evaluated;
    nonpositive x'theta is a hard domain error, not a clamp.
    """

    name = "lrm-exp"

    @property
    def theta_dim(self) -> int:
        return self.p

    def _mean(self, x, theta, what="record"):
        m = np.atleast_2d(x) @ np.asarray(theta, dtype=float)
        if np.any(m <= 0):
            bad = int(np.argmax(m <= 0))
            raise SupportError(f"nonpositive conditional mean x'theta at {what} {bad}")
        return m

    def cond_mean(self, x, theta):
        return self._mean(x, theta)

    def cond_log_density(self, y, x, theta):
        m = self._mean(x, theta)
        return -np.log(m) - np.asarray(y, dtype=float) / m

    def cond_score(self, y, x, theta):
        m = self._mean(x, theta)
        return ((np.asarray(y, dtype=float) - m) / m**2)[:, None] * np.atleast_2d(x)

    def conditional_mass(self, x, theta, alpha):
        m = self._mean(x, theta)
        return m ** (-alpha) / (1.0 + alpha)

    def conditional_zeta(self, x, theta, alpha):
        if alpha == 0.0:
            return np.zeros((np.atleast_2d(x).shape[0], self.p))
        m = self._mean(x, theta)
        return (-alpha / (1.0 + alpha) ** 2 * m ** (-1.0 - alpha))[:, None] * np.atleast_2d(x)

    def _w_moments(self, theta, gamma, alpha):
        """E[W^-(alpha+k)], k = 0, 1, 2, for W = X~'theta, X~ ~ N(gamma, I/(1+alpha))."""
        theta = np.asarray(theta, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        m_w = float(gamma @ theta)
        v_w = float(theta @ theta) / (1.0 + alpha)
        if v_w == 0.0:
            nodes = np.asarray([m_w])
            weights = np.asarray([1.0])
        else:
            t, weights = _hermgauss(self.quad.nodes)
            nodes = m_w + np.sqrt(2.0 * v_w) * t
        # Deep-tail quadrature nodes may cross zero even when the law puts
        # essentially no mass there; drop them unless they carry real weight.
        keep = nodes > 0
        dropped = float(weights[~keep].sum())
        if dropped > 1e-6:
            bad = int(np.argmax(~keep))
            raise SupportError(
                f"nonpositive conditional mean x'theta carries weight {dropped:.3g} "
                f"(node {bad} at {nodes[bad]:.4g}); the exponential-mean model is "
                "undefined there"
            )
        nodes, weights = nodes[keep], weights[keep]
        moments = [float(weights @ nodes ** (-alpha - k)) for k in range(2)]
        return moments, m_w, v_w

    def mass_and_zeta(self, theta, gamma, alpha):
        p = self.p
        theta = np.asarray(theta, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        if alpha == 0.0:
            return 1.0, np.zeros(p), np.zeros(p)
        (m0, m1), m_w, _ = self._w_moments(theta, gamma, alpha)
        k = _cov_power_const(p, alpha)
        mass = k / (1.0 + alpha) * m0
        # zeta is the exact parameter derivative of the quadrature-discretized
        # mass (nodes n_i = m_w + sqrt(2 v_w) t_i move with the parameters),
        # so the objective gradient stays consistent with the objective even
        # where the quadrature error near the w -> 0 singularity is visible
        tt = float(theta @ theta)
        zeta_theta = -alpha * k / (1.0 + alpha) ** 2 * (m1 * gamma + (m0 - m_w * m1) / tt * theta)
        zeta_gamma = -alpha / (1.0 + alpha) ** 2 * k * theta * m1
        return mass, zeta_theta, zeta_gamma

    def support_ok(self, theta, gamma, x=None) -> bool:
        if x is not None and np.any(np.atleast_2d(x) @ np.asarray(theta, dtype=float) <= 0):
            return False
        return True

    def init_params(self, s, w):
        theta0 = _weighted_ls(s.x_concomitant, s.z_sorted, w.w)
        if np.any(s.x_concomitant @ theta0 <= 0):
            # crude positive fallback: mean-matched multiple of the lead covariate
            theta0 = np.zeros(self.p)
            theta0[0] = max(np.median(s.z_sorted) / max(np.median(s.x_concomitant[:, 0]), 1e-8), 1e-3)
        return theta0, _weighted_gamma(s, w)


class ExpRegModel(ModelSpec):
    """Y | X exponential with mean exp(x'theta), X ~ N_p(gamma, I_p)."""

    name = "erm"

    @property
    def theta_dim(self) -> int:
        return self.p

    def cond_mean(self, x, theta):
        return np.exp(np.atleast_2d(x) @ np.asarray(theta, dtype=float))

    def cond_log_density(self, y, x, theta):
        eta = np.atleast_2d(x) @ np.asarray(theta, dtype=float)
        return -eta - np.asarray(y, dtype=float) * np.exp(-eta)

    def cond_score(self, y, x, theta):
        eta = np.atleast_2d(x) @ np.asarray(theta, dtype=float)
        return (np.asarray(y, dtype=float) * np.exp(-eta) - 1.0)[:, None] * np.atleast_2d(x)

    def conditional_mass(self, x, theta, alpha):
        eta = np.atleast_2d(x) @ np.asarray(theta, dtype=float)
        return np.exp(-alpha * eta) / (1.0 + alpha)

    def conditional_zeta(self, x, theta, alpha):
        x = np.atleast_2d(x)
        if alpha == 0.0:
            return np.zeros((x.shape[0], self.p))
        eta = x @ np.asarray(theta, dtype=float)
        return (-alpha / (1.0 + alpha) ** 2 * np.exp(-alpha * eta))[:, None] * x

    def mass_and_zeta(self, theta, gamma, alpha):
        p = self.p
        theta = np.asarray(theta, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        if alpha == 0.0:
            return 1.0, np.zeros(p), np.zeros(p)
        k = _cov_power_const(p, alpha)
        a0, a1 = _tilted_moment(gamma, theta, alpha)
        mass = k / (1.0 + alpha) * a0
        zeta_theta = -alpha / (1.0 + alpha) ** 2 * k * a1
        zeta_gamma = -alpha / (1.0 + alpha) ** 2 * k * theta * a0
        return mass, zeta_theta, zeta_gamma

    def init_params(self, s, w):
        logz = np.log(np.maximum(s.z_sorted, 1e-300))
        theta0 = _weighted_ls(s.x_concomitant, logz, w.w)
        return theta0, _weighted_gamma(s, w)


def _softplus(t):
    t = np.asarray(t, dtype=float)
    return np.where(t > 30.0, t, np.log1p(np.exp(np.minimum(t, 30.0))))


# error laws on the log-time scale: log density and its derivative
_AFT_ERRORS = {
    "extreme-value": (
        lambda u: u - np.exp(np.minimum(u, 700.0)),
        lambda u: 1.0 - np.exp(np.minimum(u, 700.0)),
    ),
    "normal": (
        lambda u: -0.5 * (u**2 + LOG_2PI),
        lambda u: -u,
    ),
    "logistic": (
        lambda u: -u - 2.0 * _softplus(-u),
        lambda u: -np.tanh(u / 2.0),
    ),
}


class AftModel(ModelSpec):
    """Location-scale accelerated failure time model.

    log Y = x'beta + sigma * eps with eps drawn from a fixed error law;
    theta = (beta, sigma). The lifetime density carries the 1/(y sigma)
    normalizer so it integrates to one. With the extreme-value error law
    and sigma = 1 this is exactly the exponential regression model.
    """

    name = "aft"

    def __init__(self, p: int, error: str = "extreme-value", quad: QuadratureConfig = DEFAULT_QUAD):
        super().__init__(p, quad)
        if error not in _AFT_ERRORS:
            raise ValueError(f"unknown AFT error family {error!r}; choose from {sorted(_AFT_ERRORS)}")
        self.error = error
        self._log_f0, self._ell_prime = _AFT_ERRORS[error]
        self._ei_cache = {}

    @property
    def theta_dim(self) -> int:
        return self.p + 1

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        beta, sigma = theta[:-1], float(theta[-1])
        if not sigma > 0:
            raise SupportError(f"scale must be positive, got {sigma!r}")
        return beta, sigma

    def _u(self, y, x, beta, sigma):
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            bad = int(np.argmax(y <= 0))
            raise SupportError(f"nonpositive lifetime at record {bad}")
        return (np.log(y) - np.atleast_2d(x) @ beta) / sigma

    def cond_log_density(self, y, x, theta):
        beta, sigma = self._split(theta)
        u = self._u(y, x, beta, sigma)
        return self._log_f0(u) - np.log(np.asarray(y, dtype=float)) - np.log(sigma)

    def cond_score(self, y, x, theta):
        beta, sigma = self._split(theta)
        u = self._u(y, x, beta, sigma)
        lp = self._ell_prime(u)
        g_beta = (-lp / sigma)[:, None] * np.atleast_2d(x)
        g_sigma = -(1.0 + u * lp) / sigma
        return np.column_stack([g_beta, g_sigma])

    def _error_integrals(self, alpha, sigma):
        """I0, J1, J2: integrals of {1, l'(u), 1 + u l'(u)} * e^(-alpha sigma u) f0(u)^(1+alpha)."""
        key = (float(alpha), float(sigma))
        cached = self._ei_cache.get(key)
        if cached is not None:
            return cached

        def integrand(h):
            # evaluate h only where the exponential factor is representable,
            # so unbounded h (e.g. the extreme-value score) cannot produce inf*0
            def g(u):
                e = -alpha * sigma * u + (1.0 + alpha) * float(self._log_f0(u))
                if e < -700.0:
                    return 0.0
                return h(u) * np.exp(e)

            return g

        tol = self.quad.tol
        i0 = quad(integrand(lambda u: 1.0), -np.inf, np.inf, epsabs=tol, epsrel=tol)[0]
        j1 = quad(integrand(self._ell_prime), -np.inf, np.inf, epsabs=tol, epsrel=tol)[0]
        j2 = quad(integrand(lambda u: 1.0 + u * self._ell_prime(u)), -np.inf, np.inf, epsabs=tol, epsrel=tol)[0]
        if not (np.isfinite(i0) and np.isfinite(j1) and np.isfinite(j2)):
            raise SupportError(
                f"non-integrable configuration: alpha={alpha}, sigma={sigma}, error={self.error}"
            )
        if len(self._ei_cache) > 512:
            self._ei_cache.clear()
        self._ei_cache[key] = (i0, j1, j2)
        return i0, j1, j2

    def conditional_mass(self, x, theta, alpha):
        beta, sigma = self._split(theta)
        eta = np.atleast_2d(x) @ beta
        if alpha == 0.0:
            return np.ones_like(eta)
        i0, _, _ = self._error_integrals(alpha, sigma)
        return sigma ** (-alpha) * np.exp(-alpha * eta) * i0

    def conditional_zeta(self, x, theta, alpha):
        x = np.atleast_2d(x)
        beta, sigma = self._split(theta)
        if alpha == 0.0:
            return np.zeros((x.shape[0], self.theta_dim))
        eta = x @ beta
        _, j1, j2 = self._error_integrals(alpha, sigma)
        scale = sigma ** (-1.0 - alpha) * np.exp(-alpha * eta)
        z_beta = (-scale * j1)[:, None] * x
        z_sigma = -scale * j2
        return np.column_stack([z_beta, z_sigma])

    def mass_and_zeta(self, theta, gamma, alpha):
        beta, sigma = self._split(theta)
        gamma = np.asarray(gamma, dtype=float)
        if alpha == 0.0:
            return 1.0, np.zeros(self.theta_dim), np.zeros(self.p)
        k = _cov_power_const(self.p, alpha)
        a0, a1 = _tilted_moment(gamma, beta, alpha)
        i0, j1, j2 = self._error_integrals(alpha, sigma)
        mass = sigma ** (-alpha) * i0 * k * a0
        zeta_beta = -(sigma ** (-1.0 - alpha)) * j1 * k * a1
        zeta_sigma = -(sigma ** (-1.0 - alpha)) * j2 * k * a0
        zeta_gamma = sigma ** (-alpha) * i0 * k * (a1 - gamma * a0)
        if not np.isfinite(mass):
            raise SupportError(f"mass integral overflow: theta={theta}, gamma={gamma}, alpha={alpha}")
        return mass, np.concatenate([zeta_beta, [zeta_sigma]]), zeta_gamma

    def support_ok(self, theta, gamma, x=None) -> bool:
        try:
            self._split(theta)
        except SupportError:
            return False
        return True

    def to_unconstrained(self, theta):
        t = np.asarray(theta, dtype=float).copy()
        t[-1] = np.log(t[-1])
        return t

    def from_unconstrained(self, t):
        theta = np.asarray(t, dtype=float).copy()
        theta[-1] = np.exp(theta[-1])
        return theta

    def unconstrained_jacobian_diag(self, theta):
        d = np.ones(self.theta_dim)
        d[-1] = float(theta[-1])
        return d

    def init_params(self, s, w):
        logz = np.log(np.maximum(s.z_sorted, 1e-300))
        beta0 = _weighted_ls(s.x_concomitant, logz, w.w)
        resid = logz - s.x_concomitant @ beta0
        tot = max(w.w.sum(), 1e-12)
        sigma0 = float(np.sqrt(max(w.w @ resid**2 / tot, 1e-4)))
        return np.concatenate([beta0, [sigma0]]), _weighted_gamma(s, w)


MODEL_TAGS = _MODEL_TAGS = {
    "lrm-exp": lambda p, quad: LinearExpModel(p, quad),
    "erm": lambda p, quad: ExpRegModel(p, quad),
    "aft-weibull": lambda p, quad: AftModel(p, "extreme-value", quad),
    "aft-lognormal": lambda p, quad: AftModel(p, "normal", quad),
    "aft-loglogistic": lambda p, quad: AftModel(p, "logistic", quad),
}


def make_model(tag: str, p: int, quad: QuadratureConfig = DEFAULT_QUAD) -> ModelSpec:
    """Instantiate a model by its CLI/config tag."""
    if tag not in _MODEL_TAGS:
        raise ValueError(f"unknown model tag {tag!r}; choose from {sorted(_MODEL_TAGS)}")
    return _MODEL_TAGS[tag](p, quad)


def lrm_mass_and_zeta(theta, gamma, alpha, quad: QuadratureConfig = DEFAULT_QUAD):
    p = np.asarray(theta).size
    return LinearExpModel(p, quad).mass_and_zeta(theta, gamma, alpha)


def erm_mass_and_zeta(theta, gamma, alpha):
    p = np.asarray(theta).size
    return ExpRegModel(p).mass_and_zeta(theta, gamma, alpha)


def aft_mass_and_zeta(theta, gamma, alpha, error="extreme-value", quad: QuadratureConfig = DEFAULT_QUAD):
    p = np.asarray(theta).size - 1
    return AftModel(p, error, quad).mass_and_zeta(theta, gamma, alpha)
