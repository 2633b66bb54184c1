"""Command-line front-end: fit, alpha-sweep, simulation study, influence.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 simulation-study failure. Every run writes a manifest JSON describing
the resolved configuration, input hashes, seed and artifacts, so that
re-running with the same inputs reproduces the outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import asymptotics, robustness, simulate
from .dpd import DpdConfig
from .estimate import (
    DivergenceError,
    FitResult,
    NonConvergenceError,
    SolverConfig,
    fit_mdpde,
)
from .models import MODEL_TAGS, SupportError, make_model
from .simulate import SimDesign, StudyFailureError
from .survival_data import CensoredSample, DataError, load_csv

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_STUDY = 4

DEFAULT_ALPHA = 0.3
DEFAULT_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 1.0)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, subcommand, config, inputs, artifacts, seed=None):
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "input_hashes": {str(p): _sha256(p) for p in inputs},
        "seed": seed,
        "artifacts": [str(a) for a in artifacts],
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_sample(args) -> CensoredSample:
    cols = [c.strip() for c in args.covariate_cols.split(",") if c.strip()]
    if not cols:
        raise DataError("need at least one covariate column")
    return load_csv(
        args.csv,
        time_col=args.time_col,
        status_col=args.status_col,
        covariate_cols=cols,
        intercept=args.intercept,
    )


def _fit_text(fit: FitResult, se=None) -> str:
    lines = [f"variant: {fit.variant}   alpha: {fit.alpha}"]
    names = [f"theta[{i}]" for i in range(len(fit.theta_hat))]
    if fit.gamma_hat is not None:
        names += [f"gamma[{i}]" for i in range(len(fit.gamma_hat))]
    params = fit.params
    lines.append(f"{'parameter':>10} {'estimate':>12} {'std.err':>12}")
    for i, name in enumerate(names):
        se_txt = f"{se[i]:>12.6g}" if se is not None else f"{'--':>12}"
        lines.append(f"{name:>10} {params[i]:>12.6g} {se_txt}")
    lines.append(
        f"objective: {fit.objective_value:.8g}   grad.norm: {fit.grad_norm:.3g}   "
        f"iterations: {fit.iterations}   converged: {fit.converged}"
    )
    return "\n".join(lines) + "\n"


def _fit_once(model, sample, cfg, solver):
    fit = fit_mdpde(model, sample, cfg, solver=solver)
    se = None
    try:
        sw = asymptotics.sandwich(model, sample, fit, cfg)
        fit.covariance = sw.cov
        se = sw.se
    except (asymptotics.SingularCovarianceError, np.linalg.LinAlgError):
        pass
    return fit, se


def cmd_fit(args) -> int:
    sample = _load_sample(args)
    model = make_model(args.model, p=sample.p)
    cfg = DpdConfig(alpha=args.alpha, variant=args.variant)
    solver = SolverConfig(seed=args.seed)
    fit, se = _fit_once(model, sample, cfg, solver)

    os.makedirs(args.output_dir, exist_ok=True)
    json_path = os.path.join(args.output_dir, "fit.json")
    with open(json_path, "w") as fh:
        payload = fit.to_dict()
        payload["se"] = None if se is None else np.asarray(se).tolist()
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    txt_path = os.path.join(args.output_dir, "fit.txt")
    with open(txt_path, "w") as fh:
        fh.write(_fit_text(fit, se))
    write_manifest(
        args.output_dir,
        "fit",
        _args_config(args),
        [args.csv],
        [json_path, txt_path],
        seed=args.seed,
    )
    sys.stdout.write(_fit_text(fit, se))
    return EXIT_OK


def _parse_alphas(text) -> tuple:
    alphas = tuple(float(a) for a in text.split(",") if a.strip() != "")
    if not alphas:
        raise DataError("empty alpha grid")
    return alphas


def _exclude_rows(sample: CensoredSample, rows) -> CensoredSample:
    keep = np.ones(sample.n, dtype=bool)
    for r in rows:
        if not 1 <= r <= sample.n:
            raise DataError(f"row {r} out of range 1..{sample.n}")
        keep[r - 1] = False
    return CensoredSample(z=sample.z[keep], delta=sample.delta[keep], x=sample.x[keep])


def cmd_sweep(args) -> int:
    args.csv = args.full_csv
    full = _load_sample(args)
    if args.cleaned_csv:
        args.csv = args.cleaned_csv
        cleaned = _load_sample(args)
    elif args.exclude_rows:
        rows = [int(r) for r in args.exclude_rows.split(",")]
        cleaned = _exclude_rows(full, rows)
    else:
        raise DataError("sweep needs --cleaned-csv or --exclude-rows")

    model_full = make_model(args.model, p=full.p)
    model_clean = make_model(args.model, p=cleaned.p)
    alphas = _parse_alphas(args.alphas)
    solver = SolverConfig(seed=args.seed)

    rows_out = []
    init_f = init_c = None
    for a in sorted(alphas):
        cfg = DpdConfig(alpha=a, variant=args.variant)
        fit_f = fit_mdpde(model_full, full, cfg, solver=solver, init=init_f)
        fit_c = fit_mdpde(model_clean, cleaned, cfg, solver=solver, init=init_c)
        init_f = (fit_f.theta_hat, fit_f.gamma_hat)
        init_c = (fit_c.theta_hat, fit_c.gamma_hat)
        pf, pc = fit_f.params, fit_c.params
        denom = np.where(np.abs(pf) > 0, np.abs(pf), np.nan)
        rel = np.abs(pf - pc) / denom
        rows_out.append((a, pf, pc, rel))

    os.makedirs(args.output_dir, exist_ok=True)
    csv_path = os.path.join(args.output_dir, "sweep.csv")
    d = len(rows_out[0][1])
    import csv as _csv

    with open(csv_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["alpha"]
            + [f"full_{j}" for j in range(d)]
            + [f"cleaned_{j}" for j in range(d)]
            + [f"rel_variation_{j}" for j in range(d)]
        )
        for a, pf, pc, rel in rows_out:
            writer.writerow([a, *pf, *pc, *rel])

    txt_path = os.path.join(args.output_dir, "sweep.txt")
    with open(txt_path, "w") as fh:
        fh.write(f"{'alpha':>6}  " + "  ".join(f"{'relvar_' + str(j):>10}" for j in range(d)) + "\n")
        for a, _, _, rel in rows_out:
            fh.write(f"{a:>6.2f}  " + "  ".join(f"{v:>10.4f}" for v in rel) + "\n")

    inputs = [args.full_csv] + ([args.cleaned_csv] if args.cleaned_csv else [])
    write_manifest(args.output_dir, "sweep", _args_config(args), inputs, [csv_path, txt_path], seed=args.seed)
    with open(txt_path) as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    else:
        overrides = {}
    design = SimDesign(
        n=overrides.get("n", args.n),
        replications=overrides.get("replications", args.replications),
        theta0=overrides.get("theta0", args.theta0),
        gamma0=overrides.get("gamma0", args.gamma0),
        model=overrides.get("model", args.model),
        censoring=overrides.get("censoring", args.censoring),
        contamination=overrides.get("contamination", args.contamination),
        channel=overrides.get("channel", args.channel),
        alphas=tuple(overrides.get("alphas", _parse_alphas(args.alphas))),
        seed=overrides.get("seed", args.seed),
    )
    report = simulate.run_study(design, n_jobs=args.jobs)

    os.makedirs(args.output_dir, exist_ok=True)
    csv_path = os.path.join(args.output_dir, "report.csv")
    report.to_csv(csv_path)
    txt_path = os.path.join(args.output_dir, "report.txt")
    with open(txt_path, "w") as fh:
        fh.write(report.to_text())
    inputs = [args.config] if args.config else []
    write_manifest(
        args.output_dir,
        "simulate",
        _args_config(args),
        inputs,
        [csv_path, txt_path],
        seed=design.seed,
    )
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_influence(args) -> int:
    cfg = DpdConfig(alpha=args.alpha, variant=args.variant)
    if args.fit_file:
        with open(args.fit_file) as fh:
            fit = FitResult.from_dict(json.load(fh))
        params = fit.params
        p = 1 if fit.gamma_hat is None else len(fit.gamma_hat)
    elif args.params:
        params = np.asarray([float(v) for v in args.params.split(",")], dtype=float)
        p = 1
    else:
        raise DataError("influence needs --params or --fit-file")
    model = make_model(args.model, p=p)

    x_gamma = None if args.x_center is None else np.atleast_1d(args.x_center)
    report = robustness.boundedness_report(
        model, cfg, params, x_gamma=x_gamma, shells=args.shells
    )

    os.makedirs(args.output_dir, exist_ok=True)
    csv_path = os.path.join(args.output_dir, "influence.csv")
    robustness.save_curve_csv(report.curve, csv_path)
    verdict = (
        f"bounded_in_y: {report.bounded_in_y} (growth {report.y_growth:.4g})\n"
        f"bounded_in_x: {report.bounded_in_x} (growth {report.x_growth:.4g})\n"
    )
    txt_path = os.path.join(args.output_dir, "verdicts.txt")
    with open(txt_path, "w") as fh:
        fh.write(verdict)
    inputs = [args.fit_file] if args.fit_file else []
    write_manifest(
        args.output_dir, "influence", _args_config(args), inputs, [csv_path, txt_path]
    )
    sys.stdout.write(verdict)
    return EXIT_OK


def _args_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")}


def _add_io_flags(p):
    p.add_argument("--output-dir", default=".", help="directory for artifacts")
    p.add_argument("--seed", type=int, default=0)


def _add_data_flags(p):
    p.add_argument("--time-col", required=True)
    p.add_argument("--status-col", required=True)
    p.add_argument("--covariate-cols", required=True, help="comma-separated covariate columns")
    p.add_argument("--intercept", action="store_true", help="prepend a constant-1 covariate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdpd",
        description="Robust divergence-based estimation for censored regression",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_fit = sub.add_parser("fit", help="fit one model at one alpha")
    p_fit.add_argument("csv")
    _add_data_flags(p_fit)
    p_fit.add_argument("--model", required=True, choices=sorted(MODEL_TAGS))
    p_fit.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p_fit.add_argument("--variant", choices=["joint", "conditional"], default="joint")
    _add_io_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_sweep = sub.add_parser("sweep", help="alpha sweep with relative variation vs a cleaned dataset")
    p_sweep.add_argument("full_csv")
    _add_data_flags(p_sweep)
    p_sweep.add_argument("--cleaned-csv")
    p_sweep.add_argument("--exclude-rows", help="comma-separated 1-based data rows to drop")
    p_sweep.add_argument("--model", required=True, choices=sorted(MODEL_TAGS))
    p_sweep.add_argument("--alphas", default=",".join(str(a) for a in DEFAULT_GRID))
    p_sweep.add_argument("--variant", choices=["joint", "conditional"], default="conditional")
    _add_io_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_sim = sub.add_parser("simulate", help="Monte Carlo bias/MSE study")
    p_sim.add_argument("--config", help="JSON file overriding design flags")
    p_sim.add_argument("--n", type=int, default=100)
    p_sim.add_argument("--replications", type=int, default=1000)
    p_sim.add_argument("--theta0", type=float, default=1.0)
    p_sim.add_argument("--gamma0", type=float, default=5.0)
    p_sim.add_argument("--model", default="lrm-exp", choices=sorted(MODEL_TAGS))
    p_sim.add_argument("--censoring", type=float, default=0.10)
    p_sim.add_argument("--contamination", type=float, default=0.0)
    p_sim.add_argument("--channel", choices=["response", "covariate"], default="response")
    p_sim.add_argument("--alphas", default=",".join(str(a) for a in simulate.DEFAULT_ALPHAS))
    p_sim.add_argument("--jobs", type=int, default=None)
    _add_io_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_inf = sub.add_parser("influence", help="influence curve and boundedness verdicts")
    p_inf.add_argument("--model", required=True, choices=sorted(MODEL_TAGS))
    p_inf.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p_inf.add_argument("--variant", choices=["joint", "conditional"], default="joint")
    p_inf.add_argument("--params", help="comma-separated parameter vector (theta then gamma)")
    p_inf.add_argument("--fit-file", help="fit.json from the fit subcommand")
    p_inf.add_argument("--x-center", type=float, default=None, help="covariate-law center for quadrature")
    p_inf.add_argument("--shells", type=int, default=7)
    _add_io_flags(p_inf)
    p_inf.set_defaults(func=cmd_influence)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (DataError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except (
        NonConvergenceError,
        DivergenceError,
        SupportError,
        asymptotics.SingularCovarianceError,
        robustness.SingularLambdaError,
        np.linalg.LinAlgError,
    ) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except StudyFailureError as exc:
        sys.stderr.write(f"study failure: {exc}\n")
        return EXIT_STUDY


if __name__ == "__main__":
    sys.exit(main())
