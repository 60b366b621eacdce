"""Pair-copula construction (D-vine / C-vine) fitting, simulation, and
uncertainty quantification."""

from .asymptotics import (
    BootstrapResult,
    CovMatrix,
    EfficiencyConfig,
    EfficiencyResult,
    GaussianTrivariateOracle,
    bootstrap_se,
    efficiency_study,
    ml_fisher_ci,
    partial_jacobian,
    partial_to_plain,
    plain_to_partial,
    ssp_sandwich,
    ssp_sandwich_parts,
    trivariate_gaussian_analytic,
)
from .copulas import (
    Family,
    ParamDomain,
    PARAM_DOMAINS,
    PairCopula,
    density,
    fit_pair,
    h,
    h_inverse,
    kendall_tau,
    log_density,
    tau_to_params,
)
from .estimation import (
    FitResult,
    VineSkeleton,
    fit,
    fit_ifm,
    fit_ml,
    fit_sp,
    fit_ssp,
)
from .margins import (
    MarginFamily,
    MarginModel,
    PseudoSample,
    fit_margin,
    marg_cdf,
    marg_pdf,
    marg_quantile,
    pseudo_observations,
)
from .optimize import maximize, numerical_gradient, numerical_hessian
from .vine import (
    LevelArguments,
    VineKind,
    VineSpec,
    full_density,
    full_log_density,
    index_sets,
    level_arguments,
    make_spec,
    simulate,
    spec_from_dict,
    spec_to_dict,
    theta_vector,
    transform_uniforms,
    vine_log_density,
    with_theta,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
