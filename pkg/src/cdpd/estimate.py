"""Solvers: divergence minimization, estimating-equation roots, one-step update.

The divergence fit runs a quasi-Newton (BFGS) minimization with
backtracking line search and multiple starts; support violations make the
objective +inf and are rejected during the line search. Bare M-estimators
are solved by damped Newton on the weighted estimating equation, with the
root closest to the starting value reported when several are found.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import dpd
from .dpd import DpdConfig
from .models import ModelSpec, SupportError
from .survival_data import CensoredSample, KmWeights, SortedSample, km_weights, sort_sample


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class DivergenceError(RuntimeError):
    pass


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    grad_tol: float = 1e-8
    max_iter: int = 500
    restarts: int = 5
    restart_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.restarts < 1:
            raise ValueError("need at least one start")


@dataclass
class FitResult:
    theta_hat: np.ndarray
    gamma_hat: np.ndarray | None
    alpha: float
    variant: str
    objective_value: float
    grad_norm: float
    iterations: int
    converged: bool
    starts_used: int
    covariance: np.ndarray | None = None
    roots: list = field(default_factory=list)

    @property
    def params(self) -> np.ndarray:
        if self.gamma_hat is None:
            return np.asarray(self.theta_hat)
        return np.concatenate([self.theta_hat, self.gamma_hat])

    def to_dict(self) -> dict:
        d = {
            "theta_hat": np.asarray(self.theta_hat).tolist(),
            "gamma_hat": None if self.gamma_hat is None else np.asarray(self.gamma_hat).tolist(),
            "alpha": self.alpha,
            "variant": self.variant,
            "objective_value": self.objective_value,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "starts_used": self.starts_used,
            "covariance": None if self.covariance is None else np.asarray(self.covariance).tolist(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            theta_hat=np.asarray(d["theta_hat"], dtype=float),
            gamma_hat=None if d["gamma_hat"] is None else np.asarray(d["gamma_hat"], dtype=float),
            alpha=d["alpha"],
            variant=d["variant"],
            objective_value=d["objective_value"],
            grad_norm=d["grad_norm"],
            iterations=d["iterations"],
            converged=d["converged"],
            starts_used=d["starts_used"],
            covariance=None if d.get("covariance") is None else np.asarray(d["covariance"], dtype=float),
        )


def _bfgs(fun_grad, x0, tol, max_iter):
    """BFGS with Armijo backtracking; fun_grad returns (value, gradient) or (inf, None)."""
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_grad(x)
    if not np.isfinite(f):
        return x, np.inf, np.inf, 0, False
    n = x.size
    h = np.eye(n)
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return x, f, gnorm, it - 1, True
        # epsilon slack keeps the line search usable when true decrements
        # fall below float resolution of the objective near the optimum
        slack = 1e-12 * (1.0 + abs(f))
        accepted = False
        for attempt in range(2):
            d = -h @ g
            if d @ g >= 0:  # loss of descent direction
                h = np.eye(n)
                d = -g
            t = 1.0
            f_new, g_new = np.inf, None
            for _ in range(60):
                x_new = x + t * d
                f_new, g_new = fun_grad(x_new)
                if np.isfinite(f_new) and f_new <= f + 1e-4 * t * (g @ d) + slack:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
            h = np.eye(n)  # retry once from a steepest-descent metric
        if not accepted:
            return x, f, gnorm, it, gnorm <= tol
        s = x_new - x
        yvec = g_new - g
        sy = s @ yvec
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yvec):
            rho = 1.0 / sy
            v = np.eye(n) - rho * np.outer(s, yvec)
            h = v @ h @ v.T + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
    gnorm = float(np.linalg.norm(g))
    return x, f, gnorm, it, gnorm <= tol


def _pack(model, cfg, theta, gamma):
    t = model.to_unconstrained(theta)
    if cfg.variant == "joint":
        return np.concatenate([t, np.asarray(gamma, dtype=float)])
    return t


def _unpack(model, cfg, vec):
    q = model.theta_dim
    theta = model.from_unconstrained(vec[:q])
    gamma = vec[q:].copy() if cfg.variant == "joint" else None
    return theta, gamma


def _objective_on_vec(model, s, w, cfg):
    q = model.theta_dim

    def fun_grad(vec):
        try:
            theta, gamma = _unpack(model, cfg, vec)
            f = dpd.objective(model, s, w, cfg, theta, gamma)
            g = dpd.objective_gradient(model, s, w, cfg, theta, gamma)
        except (SupportError, dpd.EvaluationError, FloatingPointError, OverflowError):
            return np.inf, None
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, None
        g = g.copy()
        g[:q] *= model.unconstrained_jacobian_diag(theta)
        return f, g

    return fun_grad


def _prepared(sample):
    if isinstance(sample, CensoredSample):
        s = sort_sample(sample)
        return s, km_weights(s)
    s, w = sample  # already (SortedSample, KmWeights)
    return s, w


def fit_mdpde(
    model: ModelSpec,
    sample,
    cfg: DpdConfig,
    solver: SolverConfig | None = None,
    init=None,
) -> FitResult:
    """Minimize the divergence objective; returns the best converged start.

    `init` is an optional (theta, gamma) pair; by default the alpha = 0 fit
    (the weighted likelihood estimate) seeds positive-alpha fits, itself
    seeded by weighted least squares / weighted moments.
    """
    solver = solver or SolverConfig()
    s, w = _prepared(sample)
    if not np.any(s.delta_concomitant == 1):
        raise DegenerateDataError("all observations censored; no event carries weight")

    if init is None:
        theta0, gamma0 = model.init_params(s, w)
        if cfg.alpha > 0:
            try:
                mle = fit_mdpde(model, (s, w), DpdConfig(0.0, cfg.variant), solver, init=(theta0, gamma0))
                theta0, gamma0 = mle.theta_hat, mle.gamma_hat if mle.gamma_hat is not None else gamma0
            except NonConvergenceError:
                pass
    else:
        theta0, gamma0 = init
    x0 = _pack(model, cfg, theta0, gamma0)

    fun_grad = _objective_on_vec(model, s, w, cfg)
    rng = np.random.default_rng(solver.seed)
    runs = []
    starts_used = 0
    for k in range(solver.restarts):
        start = x0
        if k > 0:
            for _ in range(20):
                start = x0 + rng.normal(size=x0.size) * solver.restart_scale * (1.0 + np.abs(x0))
                if np.isfinite(fun_grad(start)[0]):
                    break
        starts_used += 1
        x, f, gnorm, iters, ok = _bfgs(fun_grad, start, solver.grad_tol, solver.max_iter)
        runs.append((k, ok, f, gnorm, iters, x))
    converged = [r for r in runs if r[1]]
    pool = converged if converged else runs
    best = min(pool, key=lambda r: (r[2], r[0]))
    theta, gamma = _unpack(model, cfg, best[5])
    result = FitResult(
        theta_hat=theta,
        gamma_hat=gamma,
        alpha=cfg.alpha,
        variant=cfg.variant,
        objective_value=float(best[2]),
        grad_norm=float(best[3]),
        iterations=int(best[4]),
        converged=bool(best[1]),
        starts_used=starts_used,
    )
    if not converged:
        raise NonConvergenceError(
            f"no start converged (best gradient norm {best[3]:.3g})", best=result
        )
    return result


def weighted_psi_sum(psi_fn, s: SortedSample, w: KmWeights, params) -> np.ndarray:
    return w.w @ psi_fn(s.z_sorted, s.x_concomitant, params)


def psi_sum_jacobian(psi_fn, s, w, params, step=1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of the weighted psi sum."""
    params = np.asarray(params, dtype=float)
    d = params.size
    cols = []
    for j in range(d):
        h = step * (1.0 + abs(params[j]))
        up, dn = params.copy(), params.copy()
        up[j] += h
        dn[j] -= h
        cols.append((weighted_psi_sum(psi_fn, s, w, up) - weighted_psi_sum(psi_fn, s, w, dn)) / (2 * h))
    return np.column_stack(cols)


def solve_mest(psi_fn, sample, solver: SolverConfig | None = None, init=None) -> FitResult:
    """Damped-Newton root of the weighted estimating equation sum W psi = 0."""
    solver = solver or SolverConfig()
    if init is None:
        raise ValueError("solve_mest needs an initial value")
    s, w = _prepared(sample)
    x0 = np.asarray(init, dtype=float)

    def newton(start):
        x = start.copy()
        lam = weighted_psi_sum(psi_fn, s, w, x)
        norm = float(np.linalg.norm(lam))
        for it in range(1, solver.max_iter + 1):
            if norm <= solver.grad_tol:
                return x, norm, it - 1, True
            jac = psi_sum_jacobian(psi_fn, s, w, x)
            try:
                step_dir = np.linalg.solve(jac, -lam)
            except np.linalg.LinAlgError:
                raise DivergenceError("singular Jacobian in Newton iteration")
            t = 1.0
            for _ in range(40):
                try:
                    lam_new = weighted_psi_sum(psi_fn, s, w, x + t * step_dir)
                except (SupportError, dpd.EvaluationError):
                    lam_new = None
                if lam_new is not None and np.all(np.isfinite(lam_new)) and np.linalg.norm(lam_new) < norm:
                    break
                t *= 0.5
            else:
                raise DivergenceError(f"no decrease of the estimating equation (norm {norm:.3g})")
            x = x + t * step_dir
            lam, norm = lam_new, float(np.linalg.norm(lam_new))
            if not np.isfinite(norm) or norm > 1e10 or np.linalg.norm(x) > 1e10:
                raise DivergenceError("Newton iteration diverged")
        return x, norm, solver.max_iter, norm <= solver.grad_tol

    rng = np.random.default_rng(solver.seed)
    roots = []
    errors = []
    for k in range(solver.restarts):
        start = x0 if k == 0 else x0 + rng.normal(size=x0.size) * solver.restart_scale * (1.0 + np.abs(x0))
        try:
            roots.append(newton(start))
        except DivergenceError as exc:
            errors.append(exc)
    converged = [r for r in roots if r[3]]
    if not converged:
        raise errors[0] if errors else DivergenceError("no converged root")
    # the reported root is the converged one closest to the initial value
    best = min(converged, key=lambda r: float(np.linalg.norm(r[0] - x0)))
    return FitResult(
        theta_hat=best[0],
        gamma_hat=None,
        alpha=float("nan"),
        variant="m-est",
        objective_value=float("nan"),
        grad_norm=float(best[1]),
        iterations=int(best[2]),
        converged=True,
        starts_used=solver.restarts,
        roots=[r[0] for r in converged],
    )


def one_step(psi_fn, sample, start) -> FitResult:
    """Single Newton update from a root-n-consistent start; no iteration."""
    s, w = _prepared(sample)
    start = np.asarray(start, dtype=float)
    lam = weighted_psi_sum(psi_fn, s, w, start)
    jac = psi_sum_jacobian(psi_fn, s, w, start)
    try:
        delta = np.linalg.solve(jac, lam)
    except np.linalg.LinAlgError:
        raise DivergenceError("singular Jacobian at the one-step expansion point")
    x = start - delta
    return FitResult(
        theta_hat=x,
        gamma_hat=None,
        alpha=float("nan"),
        variant="one-step",
        objective_value=float("nan"),
        grad_norm=float(np.linalg.norm(lam)),
        iterations=1,
        converged=True,
        starts_used=1,
    )
