"""Acceptance suite: one test per release criterion.

Each test prints a single line

    [ACCEPTANCE] criterion k: PASS|FAIL -- detail

outside the pytest capture, then asserts. The heavy Monte Carlo criteria
(4-7) use fixed seeds so the reported numbers are reproducible bit for
bit on any machine with the same dependency versions.
"""

import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cdpd.asymptotics import sandwich
from cdpd.dpd import DpdConfig, mdpde_psi, objective, objective_gradient
from cdpd.estimate import (
    SolverConfig,
    fit_mdpde,
    one_step,
    psi_sum_jacobian,
)
from cdpd.models import make_model
from cdpd.robustness import boundedness_report, expected_psi
from cdpd.simulate import SimDesign, generate, run_study
from cdpd.survival_data import CensoredSample, km_weights, load_csv, sort_sample

from joblib import Parallel, delayed


def _report(capsys, k, ok, detail):
    status = "PASS" if ok else "FAIL"
    with capsys.disabled():
        print(f"[ACCEPTANCE] criterion {k}: {status} -- {detail}")
    assert ok, f"criterion {k}: {detail}"


SOLVER = SolverConfig(grad_tol=1e-6, max_iter=200, restarts=2)


# ---------------------------------------------------------------- criterion 1

# (z, delta, expected product-limit weights in sorted order), hand-computed
KM_FIXTURES = [
    ([1.0], [1], [1.0]),
    ([1.0], [0], [0.0]),
    ([1.0, 2.0], [1, 1], [1 / 2, 1 / 2]),
    ([1.0, 2.0], [0, 1], [0.0, 1.0]),
    ([1.0, 2.0], [1, 0], [1 / 2, 0.0]),
    ([1.0, 2.0, 3.0], [1, 1, 1], [1 / 3, 1 / 3, 1 / 3]),
    ([1.0, 2.0, 3.0], [1, 0, 1], [1 / 3, 0.0, 2 / 3]),
    ([1.0, 2.0, 3.0], [0, 1, 1], [0.0, 1 / 2, 1 / 2]),
    ([1.0, 2.0, 3.0], [1, 1, 0], [1 / 3, 1 / 3, 0.0]),
    ([1.0, 2.0, 3.0, 4.0], [1, 0, 0, 1], [1 / 4, 0.0, 0.0, 3 / 4]),
    ([1.0, 2.0, 3.0, 4.0], [0, 1, 0, 1], [0.0, 1 / 3, 0.0, 2 / 3]),
    ([2.0, 2.0, 5.0], [0, 1, 1], [1 / 3, 0.0, 2 / 3]),
    ([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], [1, 0, 1, 0, 1, 1],
     [1 / 6, 0.0, 5 / 6 / 4, 0.0, 5 / 6 * 3 / 4 / 2, 5 / 6 * 3 / 4 * 1 / 2]),
]


def test_criterion_1_km_weight_oracles(capsys):
    worst = 0.0
    for z, delta, expected in KM_FIXTURES:
        s = sort_sample(CensoredSample(np.asarray(z, float), np.asarray(delta, float),
                                       np.zeros((len(z), 1))))
        w = km_weights(s)
        worst = max(worst, float(np.max(np.abs(w.w - np.asarray(expected)))))
    rng = np.random.default_rng(0)
    totals_ok = True
    for _ in range(25):
        n = int(rng.integers(2, 30))
        z = rng.exponential(1.0, n)
        delta = (rng.random(n) < 0.6).astype(float)
        delta[np.argmax(z)] = 1.0
        s = sort_sample(CensoredSample(z, delta, np.zeros((n, 1))))
        totals_ok &= abs(km_weights(s).total - 1.0) < 1e-12
    ok = worst < 1e-12 and totals_ok
    _report(capsys, 1, ok,
            f"{len(KM_FIXTURES)} fixtures, max |error| = {worst:.2e}; "
            f"sum(W) = 1 with largest observation uncensored: {totals_ok}")


# ---------------------------------------------------------------- criterion 2

def _random_case(rng, family):
    n = 20
    if family == "erm":
        x = rng.normal(1.0, 1.0, (n, 1))
        z = rng.exponential(np.exp(0.5 * x[:, 0]))
        theta = np.array([0.5 + 0.2 * rng.normal()])
        gamma = np.array([1.0 + 0.2 * rng.normal()])
    elif family == "lrm-exp":
        x = np.abs(rng.normal(5.0, 1.0, (n, 1))) + 0.5
        z = rng.exponential(x[:, 0])
        theta = np.array([1.0 + 0.1 * rng.normal()])
        gamma = np.array([5.0 + 0.2 * rng.normal()])
    else:  # aft-lognormal
        x = rng.normal(1.0, 0.5, (n, 1))
        z = np.exp(0.4 * x[:, 0] + 0.7 * rng.normal(size=n))
        theta = np.array([0.4 + 0.1 * rng.normal(), 0.7 + 0.1 * abs(rng.normal())])
        gamma = np.array([1.0 + 0.2 * rng.normal()])
    delta = (rng.random(n) > 0.2).astype(float)
    s = sort_sample(CensoredSample(z, delta, x))
    return s, km_weights(s), theta, gamma


def test_criterion_2_gradient_vs_finite_differences(capsys):
    rng = np.random.default_rng(2024)
    families = ("erm", "lrm-exp", "aft-lognormal")
    worst = 0.0
    for i in range(50):
        family = families[i % 3]
        model = make_model(family, 1)
        s, w, theta, gamma = _random_case(rng, family)
        params = np.concatenate([theta, gamma])
        q = theta.size
        for alpha in (0.0, 0.1, 0.3, 1.0):
            cfg = DpdConfig(alpha, "joint")

            def f(v):
                return objective(model, s, w, cfg, v[:q], v[q:])

            grad = objective_gradient(model, s, w, cfg, params[:q], params[q:])
            fd = np.zeros(params.size)
            for j in range(params.size):
                h = 1e-6 * (1.0 + abs(params[j]))
                up, dn = params.copy(), params.copy()
                up[j] += h
                dn[j] -= h
                fd[j] = (f(up) - f(dn)) / (2 * h)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-8)
            worst = max(worst, float(rel))
    ok = worst < 1e-4
    _report(capsys, 2, ok,
            f"50 random points x 3 families x 4 alphas, max relative error = {worst:.2e} "
            f"(threshold 1e-4)")


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_unbiased_estimating_equation(capsys):
    model = make_model("erm", 1)
    params = np.array([0.5, 1.0])
    worst = 0.0
    for alpha in (0.1, 0.3, 0.5):
        val = expected_psi(model, DpdConfig(alpha, "joint"), params)
        worst = max(worst, float(np.max(np.abs(val))))
    ok = worst < 1e-6
    _report(capsys, 3, ok,
            f"max |E[psi]| over alpha in (0.1, 0.3, 0.5) = {worst:.2e} (threshold 1e-6)")


# ---------------------------------------------------------------- criterion 4

def test_criterion_4_clean_efficiency_table(capsys):
    report = run_study(SimDesign(seed=20260824), n_jobs=os.cpu_count() or 4)
    eff = report.rel_efficiency
    alphas = report.alphas
    eff1 = float(eff[alphas.index(1.0)])
    eff_ok = abs(eff1 - 49.0) <= 8.0
    # allow small Monte Carlo noise: an inversion only counts when the
    # efficiency rises by more than 2 percentage points
    inversions = int(np.sum(np.diff(eff) > 2.0))
    mono_ok = inversions <= 1
    mse0 = float(report.mse_total[alphas.index(0.0)])
    mse_ok = 0.11 <= mse0 <= 0.17
    ok = eff_ok and mono_ok and mse_ok
    _report(capsys, 4, ok,
            f"rel.eff(alpha=1) = {eff1:.1f}% (target 49+-8: {eff_ok}); "
            f"monotone nonincreasing with {inversions} inversion(s) > 2pt: {mono_ok}; "
            f"total MSE(alpha=0) = {mse0:.4f} in [0.11, 0.17]: {mse_ok}")


# ---------------------------------------------------------------- criterion 5

def test_criterion_5_contamination_robustness(capsys):
    report = run_study(SimDesign(replications=250, contamination=0.10,
                                 channel="response", seed=20260824),
                       n_jobs=os.cpu_count() or 4)
    alphas = report.alphas
    mse0 = float(report.mse_total[alphas.index(0.0)])
    mse5 = float(report.mse_total[alphas.index(0.5)])
    bias0 = float(report.bias_total[alphas.index(0.0)])
    big = [float(report.bias_total[j]) for j, a in enumerate(alphas) if a >= 0.3]
    mse_ok = mse5 <= mse0 / 2
    bias_ok = max(big) <= bias0 / 2
    ok = mse_ok and bias_ok
    _report(capsys, 5, ok,
            f"MSE(0.5) = {mse5:.4f} <= MSE(0)/2 = {mse0 / 2:.4f}: {mse_ok}; "
            f"max bias(alpha>=0.3) = {max(big):.4f} <= bias(0)/2 = {bias0 / 2:.4f}: {bias_ok}")


# ---------------------------------------------------------------- criterion 6

def _coverage_rep(design, rep):
    sample = generate(design, rep)
    model = make_model("erm", 1)
    cfg = DpdConfig(0.3, "joint")
    try:
        fit = fit_mdpde(model, sample, cfg, solver=SOLVER)
        sw = sandwich(model, sample, fit, cfg)
    except Exception:
        return None
    return bool(abs(fit.theta_hat[0] - design.theta0) <= 1.96 * sw.se[0])


def test_criterion_6_wald_coverage(capsys):
    design = SimDesign(n=500, replications=500, model="erm", theta0=0.5,
                       gamma0=1.0, censoring=0.10, seed=606, alphas=(0.3,))
    res = Parallel(n_jobs=os.cpu_count() or 4, prefer="processes")(
        delayed(_coverage_rep)(design, r) for r in range(design.replications)
    )
    hits = [r for r in res if r is not None]
    coverage = float(np.mean(hits))
    failures = design.replications - len(hits)
    ok = 0.92 <= coverage <= 0.98 and failures <= 10
    _report(capsys, 6, ok,
            f"Wald 95% coverage of theta0 = {coverage:.3f} over {len(hits)} fits "
            f"({failures} failures), target [0.92, 0.98]")


# ---------------------------------------------------------------- criterion 7

def _one_step_rep(design, rep):
    sample = generate(design, rep)
    model = make_model("lrm-exp", 1)
    cfg = DpdConfig(0.3, "joint")
    try:
        mle = fit_mdpde(model, sample, DpdConfig(0.0, "joint"), solver=SOLVER)
        full = fit_mdpde(model, sample, cfg, solver=SOLVER,
                         init=(mle.theta_hat, mle.gamma_hat))
        os_fit = one_step(mdpde_psi(model, cfg), sample,
                          np.concatenate([mle.theta_hat, mle.gamma_hat]))
    except Exception:
        return None
    return float(np.linalg.norm(os_fit.theta_hat - full.params))


def test_criterion_7_one_step_equivalence(capsys):
    design = SimDesign(n=500, replications=100, seed=707, alphas=(0.0, 0.3))
    res = Parallel(n_jobs=os.cpu_count() or 4, prefer="processes")(
        delayed(_one_step_rep)(design, r) for r in range(design.replications)
    )
    dist = [r for r in res if r is not None]
    med = float(np.median(dist))
    ok = len(dist) >= 98 and med < 0.02
    _report(capsys, 7, ok,
            f"median one-step vs fully-iterated distance = {med:.2e} over "
            f"{len(dist)} replications (threshold 0.02)")


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_influence_verdicts(capsys):
    model = make_model("erm", 1)
    params = np.array([0.5, 1.0])
    rj = boundedness_report(model, DpdConfig(0.5, "joint"), params)
    rc = boundedness_report(model, DpdConfig(0.5, "conditional"), params[:1],
                            x_gamma=params[1:])
    rm = boundedness_report(model, DpdConfig(0.0, "joint"), params)
    got = [(rj.bounded_in_y, rj.bounded_in_x),
           (rc.bounded_in_y, rc.bounded_in_x),
           (rm.bounded_in_y, rm.bounded_in_x)]
    want = [(True, True), (True, False), (False, False)]
    ok = got == want
    _report(capsys, 8, ok,
            f"(y, x) verdicts joint a=0.5 / conditional a=0.5 / a=0: {got} "
            f"(expected {want})")


# ---------------------------------------------------------------- criterion 9

HEART_CSV = os.environ.get(
    "CDPD_HEART_CSV",
    os.path.join(os.path.dirname(__file__), "data", "stanford_heart.csv"),
)


def _sigma_relative_variation(full, cleaned, alphas):
    model = make_model("aft-lognormal", full.p)
    rel = []
    init_f = init_c = None
    for a in alphas:
        cfg = DpdConfig(a, "conditional")
        ff = fit_mdpde(model, full, cfg, solver=SOLVER, init=init_f)
        fc = fit_mdpde(model, cleaned, cfg, solver=SOLVER, init=init_c)
        init_f, init_c = (ff.theta_hat, None), (fc.theta_hat, None)
        sf, sc = ff.theta_hat[-1], fc.theta_hat[-1]
        rel.append(abs(sf - sc) / sf)
    return np.asarray(rel)


def test_criterion_9_heart_transplant_variation(capsys):
    if not os.path.exists(HEART_CSV):
        with capsys.disabled():
            print("[ACCEPTANCE] criterion 9: SKIP -- heart-transplant CSV not "
                  "present (set CDPD_HEART_CSV or add tests/data/stanford_heart.csv); "
                  "the synthetic companion test covers the code path")
        pytest.skip("heart-transplant dataset not available in this environment")
    full = load_csv(HEART_CSV, "time", "status", ["age", "t5"], intercept=True)
    keep = np.ones(full.n, dtype=bool)
    keep[[1, 15, 20]] = False  # patient IDs 2, 16, 21 (1-based)
    cleaned = CensoredSample(full.z[keep], full.delta[keep], full.x[keep])
    alphas = (0.0, 0.1, 0.3, 0.5, 0.7, 1.0)
    rel = _sigma_relative_variation(full, cleaned, alphas)
    decreasing = bool(np.all(np.diff(rel) < 0))
    factor_ok = rel[0] >= 3.0 * rel[-1]
    ok = decreasing and factor_ok
    _report(capsys, 9, ok,
            f"sigma relative variation {np.round(rel, 4).tolist()}; strictly "
            f"decreasing: {decreasing}; alpha=0 / alpha=1 >= 3: {factor_ok}")


def test_criterion_9_companion_synthetic_outliers():
    # same workflow on synthetic data with three gross response outliers,
    # so the sweep logic stays verified when the public dataset is absent
    rng = np.random.default_rng(909)
    n = 100
    x1 = rng.normal(0.0, 1.0, n)
    x = np.column_stack([np.ones(n), x1])
    y = np.exp(1.0 + 0.5 * x1 + 0.6 * rng.normal(size=n))
    c = np.exp(1.0 + 0.5 * x1 + 0.6 * rng.normal(size=n) + 2.2)
    z = np.minimum(y, c)
    delta = (y <= c).astype(float)
    out = np.array([5, 40, 77])
    z[out] = z[out] * 60.0
    delta[out] = 1.0
    full = CensoredSample(z, delta, x)
    keep = np.ones(n, dtype=bool)
    keep[out] = False
    cleaned = CensoredSample(z[keep], delta[keep], x[keep])
    rel = _sigma_relative_variation(full, cleaned, (0.0, 0.1, 0.3, 0.5, 0.7, 1.0))
    assert rel[0] > rel[1:].max()
    assert rel[0] >= 3.0 * rel[-1]


# --------------------------------------------------------------- criterion 10

def test_criterion_10_complete_data_reduction(capsys):
    rng = np.random.default_rng(10)
    n = 300
    # intercept-only exponential model: MLE has the closed form log(mean y)
    y = rng.exponential(np.e, n)
    erm_sample = CensoredSample(y, np.ones(n), np.ones((n, 1)))
    fit_e = fit_mdpde(make_model("erm", 1), erm_sample, DpdConfig(0.0, "joint"))
    err_e = max(abs(fit_e.theta_hat[0] - np.log(y.mean())),
                abs(fit_e.gamma_hat[0] - 1.0))

    # linear-mean exponential model: MLE theta = mean(y / x), gamma = mean(x)
    x = rng.normal(5.0, 1.0, (n, 1))
    z = rng.exponential(1.0 * x[:, 0])
    lrm_sample = CensoredSample(z, np.ones(n), x)
    model = make_model("lrm-exp", 1)
    cfg = DpdConfig(0.0, "joint")
    fit_l = fit_mdpde(model, lrm_sample, cfg)
    err_l = max(abs(fit_l.theta_hat[0] - np.mean(z / x[:, 0])),
                abs(fit_l.gamma_hat[0] - np.mean(x)))
    mle_ok = max(err_e, err_l) < 1e-6

    # with no censoring the sandwich must equal the textbook M-estimation
    # covariance Lam^-1 Cov(psi) Lam^-1 / n
    sw = sandwich(model, lrm_sample, fit_l, cfg)
    s = sort_sample(lrm_sample)
    psi_fn = mdpde_psi(model, cfg)
    rows = psi_fn(s.z_sorted, s.x_concomitant, fit_l.params)
    lam = psi_sum_jacobian(psi_fn, s, km_weights(s), fit_l.params)
    lam_inv = np.linalg.inv(lam)
    oracle = lam_inv @ np.cov(rows, rowvar=False, ddof=1) @ lam_inv.T / n
    sand_err = float(np.max(np.abs(sw.cov - 0.5 * (oracle + oracle.T))))
    sand_ok = sand_err < 1e-10
    ok = mle_ok and sand_ok
    _report(capsys, 10, ok,
            f"max MLE deviation = {max(err_e, err_l):.2e} (threshold 1e-6); "
            f"sandwich vs textbook max |diff| = {sand_err:.2e} (threshold 1e-10)")
