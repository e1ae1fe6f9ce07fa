"""One-factor copula mixed models for diagnostic test accuracy meta-analysis."""

import os as _os

# honor the thread cap before any BLAS pool can start; must run ahead of
# the first numpy import in this process
_threads = _os.environ.get("FACTORDTA_THREADS")
if _threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)

from .copulas import (
    CopulaFamily,
    CopulaParam,
    ccdf,
    ccdf_inv,
    copula_cdf,
    copula_density,
    tau_from_theta,
    theta_from_tau,
)
from .estimation import FitConfig, FitResult, StdErrorSet, fit, fit_grid
from .likelihood import (
    Dataset,
    EvaluationError,
    ModelSpec,
    ParamSet,
    StudyRecord,
    glmm_pmf_bvn,
    implied_correlation_matrix,
    mc_pmf_oracle,
    neg_log_lik,
    study_pmf,
)
from .margins import (
    MarginKind,
    MarginSpec,
    binom_pmf,
    latent_cdf,
    latent_pdf,
    latent_quantile,
    prob_from_u,
    u_from_prob,
)
from .quadrature import QuadratureRule, gauss_legendre_01
from .simulation import (
    DVineSpec,
    SimDesign,
    SimStudyReport,
    SimTable,
    SizeDist,
    run_sim_study,
    sample_dvine4,
    sample_one_factor_copula,
    simulate_dataset,
)
from .sroc import (
    ContourGrid,
    SrocCurve,
    default_pair_family,
    density_contour,
    quantile_curve,
    within_test_tau,
)

__version__ = "0.1.0"

__all__ = [
    "ContourGrid",
    "CopulaFamily",
    "CopulaParam",
    "DVineSpec",
    "Dataset",
    "EvaluationError",
    "FitConfig",
    "FitResult",
    "MarginKind",
    "MarginSpec",
    "ModelSpec",
    "ParamSet",
    "QuadratureRule",
    "SimDesign",
    "SimStudyReport",
    "SimTable",
    "SizeDist",
    "SrocCurve",
    "StdErrorSet",
    "StudyRecord",
    "binom_pmf",
    "ccdf",
    "ccdf_inv",
    "copula_cdf",
    "copula_density",
    "default_pair_family",
    "density_contour",
    "fit",
    "fit_grid",
    "gauss_legendre_01",
    "glmm_pmf_bvn",
    "implied_correlation_matrix",
    "latent_cdf",
    "latent_pdf",
    "latent_quantile",
    "mc_pmf_oracle",
    "neg_log_lik",
    "prob_from_u",
    "quantile_curve",
    "run_sim_study",
    "sample_dvine4",
    "sample_one_factor_copula",
    "simulate_dataset",
    "study_pmf",
    "tau_from_theta",
    "theta_from_tau",
    "u_from_prob",
    "within_test_tau",
    "__version__",
]
