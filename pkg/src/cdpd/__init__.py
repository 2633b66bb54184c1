"""Robust divergence-based estimation for right-censored regression with
stochastic covariates: product-limit weighting, density-power-divergence
objectives, weighted M-estimation, sandwich covariances, influence
diagnostics and a Monte Carlo study harness.
"""

from .survival_data import (
    CensoredSample,
    DataError,
    KmWeights,
    SortedSample,
    km_weights,
    load_csv,
    marginal_km_survival,
    sort_sample,
    stute_cdf,
)
from .models import (
    AftModel,
    ExpRegModel,
    LinearExpModel,
    ModelSpec,
    QuadratureConfig,
    SupportError,
    make_model,
)
from .dpd import (
    DpdConfig,
    EvaluationError,
    PsiValue,
    huber_psi0,
    identity_psi0,
    mdpde_psi,
    objective,
    objective_gradient,
    psi,
    psi_matrix,
    wang_psi,
    zhou_psi,
)
from .estimate import (
    DegenerateDataError,
    DivergenceError,
    FitResult,
    NonConvergenceError,
    SolverConfig,
    fit_mdpde,
    one_step,
    solve_mest,
)
from .asymptotics import (
    SandwichCovariance,
    SingularCovarianceError,
    VarianceFunctionals,
    estimate_functionals,
    sandwich,
    sigma_psi,
)
from .robustness import (
    BoundednessReport,
    InfluenceCurve,
    boundedness_report,
    influence,
    save_curve_csv,
)
from .simulate import (
    MonteCarloReport,
    SimDesign,
    StudyFailureError,
    calibrate_tau,
    generate,
    run_study,
)

__version__ = "0.1.0"

__all__ = [
    "AftModel",
    "BoundednessReport",
    "CensoredSample",
    "DataError",
    "DegenerateDataError",
    "DivergenceError",
    "DpdConfig",
    "EvaluationError",
    "ExpRegModel",
    "FitResult",
    "InfluenceCurve",
    "KmWeights",
    "LinearExpModel",
    "ModelSpec",
    "MonteCarloReport",
    "NonConvergenceError",
    "PsiValue",
    "QuadratureConfig",
    "SandwichCovariance",
    "SimDesign",
    "SingularCovarianceError",
    "SolverConfig",
    "SortedSample",
    "StudyFailureError",
    "SupportError",
    "VarianceFunctionals",
    "boundedness_report",
    "calibrate_tau",
    "estimate_functionals",
    "fit_mdpde",
    "generate",
    "huber_psi0",
    "identity_psi0",
    "influence",
    "km_weights",
    "load_csv",
    "make_model",
    "marginal_km_survival",
    "mdpde_psi",
    "objective",
    "objective_gradient",
    "one_step",
    "psi",
    "psi_matrix",
    "run_study",
    "sandwich",
    "save_curve_csv",
    "sigma_psi",
    "solve_mest",
    "sort_sample",
    "stute_cdf",
    "wang_psi",
    "zhou_psi",
]
