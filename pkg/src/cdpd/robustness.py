"""Influence functions of the weighted M-estimators and boundedness
diagnostics.

The influence function at a contamination point (y0, x0) is
-Lambda^-1 psi(y0, x0), where Lambda is the derivative of the expected
estimating function at the model (differentiating the contaminated
estimating equation at contamination level zero gives the minus sign). Since Lambda is a fixed nonsingular
matrix, boundedness of the influence curve in either the response or the
leverage direction is decided entirely by psi; the verdicts here probe
sup norms over geometrically expanding shells and declare a direction
bounded when the cumulative sup stops growing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import dpd
from .dpd import DpdConfig
from .estimate import _prepared, psi_sum_jacobian
from .models import ModelSpec, _hermgauss


class SingularLambdaError(RuntimeError):
    """The expected estimating-function derivative is not invertible."""


@dataclass(frozen=True)
class InfluenceCurve:
    """Influence values on a grid of contamination points.

    points is an (m, 1 + p) array of rows (y0, x0); values is (m, d).
    """

    points: np.ndarray
    values: np.ndarray

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))


@dataclass(frozen=True)
class BoundednessReport:
    curve: InfluenceCurve
    bounded_in_y: bool
    bounded_in_x: bool
    y_growth: float
    x_growth: float


def _split_params(model, cfg, params):
    params = np.asarray(params, dtype=float)
    q = model.theta_dim
    theta = params[:q]
    gamma = params[q:] if cfg.variant == "joint" else None
    return theta, gamma


def expected_psi(model: ModelSpec, cfg: DpdConfig, psi_params, data_params=None, x_gamma=None, nodes=40):
    """E[psi(Y, X; psi_params)] under the model law at data_params (p = 1 only).

    The data law draws X ~ N(x_gamma, 1) and Y | X from the conditional
    model at data_params; psi is evaluated at psi_params, which may differ
    (that distinction is what makes the derivative of this map nonzero).
    data_params defaults to psi_params and x_gamma to its gamma block.
    """
    psi_params = np.asarray(psi_params, dtype=float)
    if data_params is None:
        data_params = psi_params
    theta, gamma = _split_params(model, cfg, psi_params)
    data_theta, data_gamma = _split_params(model, cfg, np.asarray(data_params, dtype=float))
    if x_gamma is None:
        if data_gamma is None:
            raise ValueError("conditional variant needs an explicit covariate-law center")
        x_gamma = data_gamma
    x_gamma = np.atleast_1d(np.asarray(x_gamma, dtype=float))
    if x_gamma.size != 1 or model.p != 1:
        raise ValueError("model-law quadrature supports one covariate only")

    t, weights = _hermgauss(nodes)
    x_nodes = x_gamma[0] + np.sqrt(2.0) * t

    total = 0.0
    for xi, wi in zip(x_nodes, weights):
        x_row = np.array([[xi]])

        def integrand(y):
            dens = float(np.exp(model.cond_log_density(np.array([y]), x_row, data_theta)[0]))
            row = dpd.psi_matrix(model, cfg, theta, gamma, np.array([y]), x_row)[0]
            return dens * row

        val, _ = integrate.quad_vec(integrand, 0.0, np.inf, epsabs=1e-9, epsrel=1e-8)
        total = total + wi * val
    return np.asarray(total, dtype=float)


def model_lambda(model: ModelSpec, cfg: DpdConfig, params, x_gamma=None, step=1e-5) -> np.ndarray:
    """Derivative of E[psi(.; t)] in t at the model law held fixed at params."""
    params = np.asarray(params, dtype=float)
    d = params.size
    cols = []
    for j in range(d):
        h = step * (1.0 + abs(params[j]))
        up, dn = params.copy(), params.copy()
        up[j] += h
        dn[j] -= h
        diff = expected_psi(model, cfg, up, params, x_gamma) - expected_psi(model, cfg, dn, params, x_gamma)
        cols.append(diff / (2 * h))
    return np.column_stack(cols)


def _resolve_lambda(model, cfg, params, sample, x_gamma):
    if sample is not None:
        s, w = _prepared(sample)
        lam = psi_sum_jacobian(dpd.mdpde_psi(model, cfg), s, w, np.asarray(params, dtype=float))
    else:
        lam = model_lambda(model, cfg, params, x_gamma)
    cond = np.linalg.cond(lam)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularLambdaError("expected estimating-function derivative is singular")
    return lam


def influence(model: ModelSpec, cfg: DpdConfig, params, point, sample=None, x_gamma=None, lam=None):
    """Influence function Lambda^-1 psi(y0, x0) at one contamination point.

    Lambda comes from model-law quadrature (p = 1), from an empirical
    Jacobian when a sample is supplied, or can be passed precomputed.
    """
    y0, x0 = point
    if lam is None:
        lam = _resolve_lambda(model, cfg, params, sample, x_gamma)
    theta, gamma = _split_params(model, cfg, params)
    row = dpd.psi_matrix(model, cfg, theta, gamma, np.array([float(y0)]), np.atleast_2d(x0))[0]
    return -np.linalg.solve(lam, row)


def _shell_sup(model, cfg, theta, gamma, lam, points):
    vals = []
    norms = []
    for y0, x0 in points:
        try:
            row = dpd.psi_matrix(model, cfg, theta, gamma, np.array([y0]), np.atleast_2d(x0))[0]
            v = -np.linalg.solve(lam, row)
        except (dpd.EvaluationError, FloatingPointError):
            v = np.full(lam.shape[0], np.inf)
        if not np.all(np.isfinite(v)):
            v = np.full(lam.shape[0], np.inf)
        vals.append(((y0, *np.atleast_1d(x0)), v))
        norms.append(float(np.linalg.norm(v)) if np.all(np.isfinite(v)) else np.inf)
    return vals, max(norms) if norms else 0.0


def boundedness_report(
    model: ModelSpec,
    cfg: DpdConfig,
    params,
    sample=None,
    x_gamma=None,
    shells: int = 7,
    per_shell: int = 6,
    ratio_tol: float = 1.05,
    y_base: float = 1.0,
    x_base: float = 1.0,
    y_growth: float = 10.0,
    x_growth: float = 10.0 ** 0.5,
) -> BoundednessReport:
    """Probe influence-curve boundedness over expanding response/leverage shells.

    A direction is called bounded when the cumulative sup norm grows by a
    factor below ratio_tol over the last shell (non-finite values force an
    unbounded verdict).
    """
    lam = _resolve_lambda(model, cfg, params, sample, x_gamma)
    theta, gamma = _split_params(model, cfg, params)
    if x_gamma is None:
        x_ref = gamma if gamma is not None else np.zeros(model.p)
    else:
        x_ref = np.atleast_1d(np.asarray(x_gamma, dtype=float))
    y_ref = 1.0

    old_err = np.seterr(over="ignore", under="ignore", invalid="ignore")
    try:
        all_vals = []

        def run_direction(point_shells):
            cum = 0.0
            cums = []
            for pts in point_shells:
                vals, sup = _shell_sup(model, cfg, theta, gamma, lam, pts)
                all_vals.extend(vals)
                cum = max(cum, sup)
                cums.append(cum)
            if not np.isfinite(cums[-1]):
                return False, np.inf
            growth = cums[-1] / cums[-2] if cums[-2] > 0 else 1.0
            return growth < ratio_tol, growth

        y_shells = []
        for k in range(shells):
            lo, hi = y_base * y_growth**k, y_base * y_growth ** (k + 1)
            ys = np.geomspace(lo, hi, per_shell)
            y_shells.append([(float(y), x_ref) for y in ys])
        bounded_y, gy = run_direction(y_shells)

        x_shells = []
        for k in range(shells):
            lo, hi = x_base * x_growth**k, x_base * x_growth ** (k + 1)
            mags = np.geomspace(lo, hi, max(per_shell // 2, 2))
            pts = []
            for m in mags:
                for sign in (+1.0, -1.0):
                    pts.append((y_ref, x_ref + sign * m))
            x_shells.append(pts)
        bounded_x, gx = run_direction(x_shells)
    finally:
        np.seterr(**old_err)

    points = np.array([[p[0], *p[1:]] for p, _ in all_vals], dtype=float)
    values = np.array([np.where(np.isfinite(v), v, np.inf) for _, v in all_vals], dtype=float)
    curve = InfluenceCurve(points=points, values=values)
    return BoundednessReport(
        curve=curve, bounded_in_y=bounded_y, bounded_in_x=bounded_x, y_growth=gy, x_growth=gx
    )


def save_curve_csv(curve: InfluenceCurve, path) -> None:
    """Write the influence curve as rows (y0, x0..., IF components)."""
    p = curve.points.shape[1] - 1
    d = curve.values.shape[1]
    header = ["y0", *[f"x0_{j}" for j in range(p)], *[f"if_{j}" for j in range(d)]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for pt, val in zip(curve.points, curve.values):
            writer.writerow([*(float(v) for v in pt), *(float(v) for v in val)])
