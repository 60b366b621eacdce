"""Uncertainty quantification: analytic trivariate-Gaussian covariances, the
plug-in sandwich for the stepwise estimator, ML Fisher intervals, parametric
bootstrap, and the Monte Carlo relative-efficiency study harness.

Covariance matrices V are scaled for sqrt(n)(theta_hat - theta), so standard
errors are sqrt(V_ii / n).
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from . import copulas, margins as margins_mod, vine as vine_mod
from .copulas import PairCopula, UEPS
from .estimation import FitResult, VineSkeleton, fit as fit_dispatch
from .exceptions import (
    DomainError,
    SingularMatrixError,
    UnsupportedDimensionError,
    VinefitError,
)
from .margins import marg_quantile, pseudo_observations
from .vine import (
    VineSpec,
    level_arguments,
    parameter_labels,
    theta_slices,
    theta_vector,
    transform_uniforms,
    with_theta,
)

Z975 = float(ndtri(0.975))

logger = logging.getLogger(__name__)


@dataclass
class CovMatrix:
    method: str
    matrix: np.ndarray
    labels: list

    def se(self, n):
        return np.sqrt(np.diag(self.matrix) / n)


# ---------------------------------------------------------------------------
# Analytic trivariate-Gaussian covariances
# ---------------------------------------------------------------------------

@dataclass
class GaussianTrivariateOracle:
    v_ml: np.ndarray
    k_theta: np.ndarray
    j_theta: np.ndarray
    b_ssp: np.ndarray
    v_ssp: np.ndarray


def trivariate_gaussian_analytic(r12, r23, r13) -> GaussianTrivariateOracle:
    """Closed-form V_ML, K, J, B and the assembled V_SSP for the trivariate
    Gaussian copula, parameterized by the plain correlations (r12, r23, r13)
    in level order."""
    det = 1.0 + 2.0 * r12 * r23 * r13 - r12 * r12 - r23 * r23 - r13 * r13
    if det <= 0.0 or any(not -1.0 < r < 1.0 for r in (r12, r23, r13)):
        raise DomainError("correlation matrix is not positive definite")

    def v(r_ik, r_il, r_lk):
        return 2.0 * r_ik * (1.0 - r_il**2) * (1.0 - r_lk**2) - r_il * r_lk * det

    v13 = v(r13, r12, r23)
    v23 = v(r23, r12, r13)
    v12 = v(r12, r13, r23)
    v_ml = 0.5 * np.array(
        [
            [2.0 * (1.0 - r12**2) ** 2, v13, v23],
            [v13, 2.0 * (1.0 - r23**2) ** 2, v12],
            [v23, v12, 2.0 * (1.0 - r13**2) ** 2],
        ]
    )

    fisher12 = (1.0 + r12**2) / (1.0 - r12**2) ** 2
    fisher23 = (1.0 + r23**2) / (1.0 - r23**2) ** 2
    partial_num = r13 - r12 * r23
    # The (1,2) denominator must carry the square for J^-1 (K + B) J^-T to
    # reproduce V_ML; verified against an independent quadrature oracle.
    k12 = partial_num * (det + r13**2 - r12**2 * r23**2) / (
        (1.0 - r12**2) * (1.0 - r23**2)
    ) ** 2
    top = (det + 2.0 * partial_num**2) / det**2
    k_theta = np.array(
        [
            [fisher12, k12, 0.0],
            [k12, fisher23, 0.0],
            [0.0, 0.0, top],
        ]
    )

    def j(r_ik, r_il, r_lk):
        return -r_ik * det + 2.0 * (r_il - r_lk * r_ik) * (r_lk - r_il * r_ik)

    j23 = j(r23, r12, r13)
    j12 = j(r12, r13, r23)
    j_theta = np.array(
        [
            [fisher12, 0.0, 0.0],
            [0.0, fisher23, 0.0],
            [j23 / det**2, j12 / det**2, top],
        ]
    )

    a = 1.0 + r12**2 + r13**2 + r23**2

    def b(r_ik, r_il, r_lk):
        return r_ik * a * (1.0 - 2.0 / (1.0 - r_ik**2)) + 2.0 * (1.0 + r_ik**2) * (
            r_ik + r_il * r_lk
        ) / (1.0 - r_ik**2)

    b12 = b(r12, r13, r23)
    b23 = b(r23, r12, r13)
    b_ssp = np.array(
        [
            [
                r12**2 * (1.0 + r12**2) / (1.0 - r12**2) ** 2,
                (r23 * b12 + r12 * b23 - r12 * r23 * a)
                / (2.0 * (1.0 - r12**2) * (1.0 - r23**2)),
                partial_num * b12 / (2.0 * (1.0 - r12**2) * det),
            ],
            [
                (r23 * b12 + r12 * b23 - r12 * r23 * a)
                / (2.0 * (1.0 - r12**2) * (1.0 - r23**2)),
                r23**2 * (1.0 + r23**2) / (1.0 - r23**2) ** 2,
                partial_num * b23 / (2.0 * (1.0 - r23**2) * det),
            ],
            [
                partial_num * b12 / (2.0 * (1.0 - r12**2) * det),
                partial_num * b23 / (2.0 * (1.0 - r23**2) * det),
                (1.0 + r13**2) * partial_num**2 / det**2,
            ],
        ]
    )

    j_inv = np.linalg.inv(j_theta)
    v_ssp = j_inv @ (k_theta + b_ssp) @ j_inv.T
    return GaussianTrivariateOracle(v_ml, k_theta, j_theta, b_ssp, v_ssp)


def partial_to_plain(r12, r23, r13_2):
    """Unconditional r13 from the level-2 partial correlation."""
    return r13_2 * np.sqrt((1.0 - r12**2) * (1.0 - r23**2)) + r12 * r23


def plain_to_partial(r12, r23, r13):
    return (r13 - r12 * r23) / np.sqrt((1.0 - r12**2) * (1.0 - r23**2))


def partial_jacobian(r12, r23, r13_2):
    """Jacobian of (r12, r23, r13) with respect to (r12, r23, r13|2); maps
    covariances in the vine parameterization to the plain-correlation one."""
    s = np.sqrt((1.0 - r12**2) * (1.0 - r23**2))
    g1 = r23 - r13_2 * r12 * np.sqrt((1.0 - r23**2) / (1.0 - r12**2))
    g2 = r12 - r13_2 * r23 * np.sqrt((1.0 - r12**2) / (1.0 - r23**2))
    return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [g1, g2, s]])


# ---------------------------------------------------------------------------
# Numeric scores for the sandwich
# ---------------------------------------------------------------------------

def _perturbed_copulas(c: PairCopula, k, step):
    """Central pair (c+, c-, denom) for parameter k, one-sided at domain edges."""
    params = np.asarray(c.params, dtype=float)
    h = step * max(1.0, abs(params[k]))

    def make(delta):
        q = params.copy()
        q[k] += delta
        try:
            return PairCopula(c.family, tuple(q))
        except DomainError:
            return None

    cp, cm = make(h), make(-h)
    if cp is not None and cm is not None:
        return cp, cm, 2.0 * h
    if cp is not None:
        return cp, c, h
    if cm is not None:
        return c, cm, h
    raise DomainError(f"cannot perturb parameter {k} of {c}")


def score_matrix(spec: VineSpec, u, rel_step=1e-5):
    """n x p matrix of the stepwise estimating functions: for each edge, the
    derivative of its log pair density with respect to its own parameters,
    evaluated at the recursion arguments implied by ``spec``."""
    mat = margins_mod.as_matrix(u)
    args = level_arguments(spec, mat)
    p = theta_vector(spec).size
    out = np.empty((mat.shape[0], p))
    for j, i, sl in theta_slices(spec):
        c = spec.edge(i, j)
        a1, a2 = args[j - 1][i - 1]
        for k in range(sl.stop - sl.start):
            cp, cm, denom = _perturbed_copulas(c, k, rel_step)
            out[:, sl.start + k] = (
                copulas.log_density(cp, a1, a2) - copulas.log_density(cm, a1, a2)
            ) / denom
    return out


def _theta_perturbation(spec, theta, m, rel_step):
    h = rel_step * max(1.0, abs(theta[m]))

    def make(delta):
        q = theta.copy()
        q[m] += delta
        try:
            return with_theta(spec, q)
        except DomainError:
            return None

    sp, sm = make(h), make(-h)
    if sp is not None and sm is not None:
        return sp, sm, 2.0 * h
    if sp is not None:
        return sp, spec, h
    if sm is not None:
        return spec, sm, h
    raise DomainError(f"cannot perturb theta[{m}]")


def j_hat(spec: VineSpec, u, rel_step=1e-5):
    """Minus the mean Jacobian of the estimating functions with respect to theta.

    Blocks above the diagonal come out exactly zero: scores at a level do not
    depend on parameters from deeper levels.
    """
    mat = margins_mod.as_matrix(u)
    theta = theta_vector(spec)
    p = theta.size
    jm = np.empty((p, p))
    for m in range(p):
        sp, sm, denom = _theta_perturbation(spec, theta, m, rel_step)
        mean_p = score_matrix(sp, mat).mean(axis=0)
        mean_m = score_matrix(sm, mat).mean(axis=0)
        jm[:, m] = -(mean_p - mean_m) / denom
    return jm


def _dscore_du(spec, pts, col, step=1e-4):
    """Derivative of the score vector with respect to coordinate ``col`` at the
    given points; asymmetric (clamping-aware) differences near 0 and 1."""
    hp = np.minimum(step, (1.0 - UEPS) - pts[:, col])
    hm = np.minimum(step, pts[:, col] - UEPS)
    up = pts.copy()
    um = pts.copy()
    up[:, col] += hp
    um[:, col] -= hm
    s_p = score_matrix(spec, up)
    s_m = score_matrix(spec, um)
    return (s_p - s_m) / np.maximum(hp + hm, 1e-12)[:, None]


@dataclass
class SandwichParts:
    k_hat: np.ndarray
    j_hat: np.ndarray
    b_hat: np.ndarray
    w: np.ndarray


def ssp_sandwich_parts(u, spec: VineSpec, mc_points=100_000, seed=0, u_step=1e-4) -> SandwichParts:
    """K, J, B and the per-observation rank-correction vectors W.

    K and J come from sample moments of numerically differentiated estimating
    functions; W needs d-dimensional integrals, done by quasi-random points
    pushed through the vine's conditional-inverse map.
    """
    mat = margins_mod.as_matrix(u)
    if spec.dim > 3:
        raise UnsupportedDimensionError(
            "the plug-in sandwich needs d-dimensional integrals and is supported "
            "for d <= 3 only; use bootstrap_se instead"
        )
    n = mat.shape[0]
    phi = score_matrix(spec, mat)
    k_hat = phi.T @ phi / n
    jm = j_hat(spec, mat)

    sob = qmc.Sobol(d=spec.dim, scramble=True, seed=seed)
    # round up to a power of two: Sobol balance, and more points only help
    m = 2 ** int(np.ceil(np.log2(max(int(mc_points), 2))))
    pts = transform_uniforms(spec, np.clip(sob.random_base2(int(np.log2(m))), UEPS, 1.0 - UEPS))
    p = phi.shape[1]
    w = np.zeros((n, p))
    for col in range(spec.dim):
        g = _dscore_du(spec, pts, col, step=u_step)  # (m, p)
        order = np.argsort(pts[:, col])
        sorted_u = pts[order, col]
        # suffix[t] = sum of score slopes over points with u_col >= threshold
        suffix = np.vstack([np.cumsum(g[order][::-1], axis=0)[::-1], np.zeros(p)])
        centering = g.T @ pts[:, col]  # sum_m g_m * u_m
        pos = np.searchsorted(sorted_u, mat[:, col], side="left")
        w += (suffix[pos] - centering) / m
    w_c = w - w.mean(axis=0)
    phi_c = phi - phi.mean(axis=0)
    cross = phi_c.T @ w_c / n
    b_hat = w_c.T @ w_c / n + cross + cross.T
    return SandwichParts(k_hat, jm, b_hat, w)


def ssp_sandwich(u, spec: VineSpec, mc_points=100_000, seed=0, u_step=1e-4) -> CovMatrix:
    """Plug-in sandwich covariance J^-1 (K + B) J^-T of the stepwise estimator.

    Only available for d <= 3; use the parametric bootstrap beyond that.
    """
    parts = ssp_sandwich_parts(u, spec, mc_points=mc_points, seed=seed, u_step=u_step)
    try:
        j_inv = np.linalg.inv(parts.j_hat)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("J-hat is singular") from exc
    v = j_inv @ (parts.k_hat + parts.b_hat) @ j_inv.T
    return CovMatrix("ssp", v, parameter_labels(spec))


# ---------------------------------------------------------------------------
# ML Fisher intervals
# ---------------------------------------------------------------------------

def _rowwise_full_loglik(x, margin_models, spec):
    total = np.zeros(x.shape[0])
    u_cols = []
    for l, m in enumerate(margin_models):
        total += margins_mod.marg_log_pdf(m, x[:, l])
        u_cols.append(np.clip(margins_mod.marg_cdf(m, x[:, l]), UEPS, 1.0 - UEPS))
    if theta_vector(spec).size:
        total += vine_mod.vine_log_density(spec, np.column_stack(u_cols))
    return total


def ml_fisher_ci(fit: FitResult, x) -> dict:
    """Standard errors from the sample Fisher matrix of the full likelihood.

    The per-observation score is differentiated numerically; SEs come from the
    dependence-parameter block of the inverse, CIs use the normal rule.
    """
    if fit.method != "ml":
        raise DomainError("Fisher intervals are for ML fits; use bootstrap_se otherwise")
    if not fit.converged:
        raise DomainError("fit did not converge")
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    alphas = fit.margins
    alpha_parts = [np.asarray(m.params, dtype=float) for m in alphas]
    n_alpha = sum(a.size for a in alpha_parts)
    theta = fit.theta
    p = n_alpha + theta.size

    def rebuild(vec):
        models = []
        pos = 0
        for m, a in zip(alphas, alpha_parts):
            models.append(margins_mod.MarginModel(m.family, tuple(vec[pos : pos + a.size])))
            pos += a.size
        spec = with_theta(fit.spec, vec[n_alpha:]) if theta.size else fit.spec
        return models, spec

    full0 = np.concatenate([np.concatenate(alpha_parts) if n_alpha else np.empty(0), theta])
    scores = np.empty((n, p))
    for m in range(p):
        h = 1e-5 * max(1.0, abs(full0[m]))
        vp, vm = full0.copy(), full0.copy()
        vp[m] += h
        vm[m] -= h
        try:
            models_p, spec_p = rebuild(vp)
            models_m, spec_m = rebuild(vm)
        except DomainError:
            vp[m], vm[m] = full0[m] + h, full0[m]
            models_p, spec_p = rebuild(vp)
            models_m, spec_m = rebuild(vm)
            scores[:, m] = (
                _rowwise_full_loglik(x, models_p, spec_p)
                - _rowwise_full_loglik(x, models_m, spec_m)
            ) / h
            continue
        scores[:, m] = (
            _rowwise_full_loglik(x, models_p, spec_p)
            - _rowwise_full_loglik(x, models_m, spec_m)
        ) / (2.0 * h)
    info = scores.T @ scores / n
    try:
        inv = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("sample Fisher matrix is singular") from exc
    se_all = np.sqrt(np.maximum(np.diag(inv), 0.0) / n)
    se_theta = se_all[n_alpha:]
    se_alpha = se_all[:n_alpha]
    out = {
        "se": se_theta,
        "ci": np.column_stack([theta - Z975 * se_theta, theta + Z975 * se_theta]),
        "se_margins": se_alpha,
        "ci_margins": np.column_stack(
            [full0[:n_alpha] - Z975 * se_alpha, full0[:n_alpha] + Z975 * se_alpha]
        ),
        "labels": parameter_labels(fit.spec),
    }
    fit.se, fit.ci = out["se"], out["ci"]
    fit.se_margins, fit.ci_margins = out["se_margins"], out["ci_margins"]
    return out


# ---------------------------------------------------------------------------
# Parametric bootstrap
# ---------------------------------------------------------------------------

def _refit_like(fit: FitResult, skeleton, margin_families, u_sim):
    if fit.method in ("ssp", "sp"):
        ub = pseudo_observations(u_sim)
        return fit_dispatch(fit.method, u=ub, skeleton=skeleton)
    x = np.column_stack(
        [marg_quantile(m, u_sim[:, l]) for l, m in enumerate(fit.margins)]
    )
    return fit_dispatch(fit.method, x=x, margin_families=margin_families, skeleton=skeleton)


def _bootstrap_worker(payload):
    fit, skeleton, margin_families, n, ss = payload
    rng = np.random.default_rng(ss)
    u_sim = transform_uniforms(fit.spec, rng.random((n, fit.spec.dim)))
    try:
        refit = _refit_like(fit, skeleton, margin_families, u_sim)
    except VinefitError as exc:
        return ("fail", str(exc))
    alpha = (
        np.concatenate([np.asarray(m.params, float) for m in refit.margins])
        if refit.margins
        else None
    )
    return ("ok", refit.theta, alpha)


@dataclass
class BootstrapResult:
    method: str
    n_replicates: int
    n_failed: int
    se: np.ndarray
    ci: np.ndarray
    se_margins: np.ndarray | None
    ci_margins: np.ndarray | None
    labels: list
    replicate_thetas: np.ndarray = field(repr=False, default=None)


def bootstrap_se(fit: FitResult, n_boot=200, seed=0, n_jobs=1) -> BootstrapResult:
    """Parametric bootstrap from the fitted model, refitting with the same
    method; SEs are replicate standard deviations, CIs use the normal rule.
    Deterministic given the seed, for any worker count."""
    if not fit.converged:
        raise DomainError("fit did not converge; bootstrap would be meaningless")
    skeleton = VineSkeleton(fit.spec.kind, fit.spec.dim, fit.spec.families)
    margin_families = [m.family for m in fit.margins] if fit.margins else None
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(n_boot)
    payloads = [(fit, skeleton, margin_families, fit.n_obs, ss) for ss in children]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_bootstrap_worker, payloads, chunksize=8))
    else:
        results = [_bootstrap_worker(p) for p in payloads]
    thetas = [r[1] for r in results if r[0] == "ok"]
    alphas = [r[2] for r in results if r[0] == "ok" and r[2] is not None]
    n_failed = n_boot - len(thetas)
    if n_failed:
        first = next(r[1] for r in results if r[0] == "fail")
        logger.warning("skipped %d/%d bootstrap replicates (e.g. %s)", n_failed, n_boot, first)
    if n_failed > 0.10 * n_boot:
        raise VinefitError(f"{n_failed}/{n_boot} bootstrap replicates failed")
    t = np.vstack(thetas) if thetas and thetas[0].size else np.empty((len(thetas), 0))
    se = t.std(axis=0, ddof=1) if t.size else np.empty(0)
    ci = np.column_stack([fit.theta - Z975 * se, fit.theta + Z975 * se]) if se.size else np.empty((0, 2))
    se_m = ci_m = None
    if alphas:
        am = np.vstack(alphas)
        se_m = am.std(axis=0, ddof=1)
        center = np.concatenate([np.asarray(m.params, float) for m in fit.margins])
        ci_m = np.column_stack([center - Z975 * se_m, center + Z975 * se_m])
    fit.se, fit.ci = se, ci
    fit.se_margins, fit.ci_margins = se_m, ci_m
    return BootstrapResult(
        method=fit.method,
        n_replicates=n_boot,
        n_failed=n_failed,
        se=se,
        ci=ci,
        se_margins=se_m,
        ci_margins=ci_m,
        labels=parameter_labels(fit.spec),
        replicate_thetas=t,
    )


# ---------------------------------------------------------------------------
# Monte Carlo relative-efficiency study
# ---------------------------------------------------------------------------

@dataclass
class EfficiencyConfig:
    spec: VineSpec                  # truth
    margins: list                   # true MarginModel per column
    n: int
    n_replicates: int
    estimators: tuple = ("ml", "ifm", "sp", "ssp")
    seed: int = 0
    n_jobs: int = 1
    force_large: bool = False


@dataclass
class EfficiencyResult:
    labels: list
    estimators: tuple
    variances: dict
    efficiency: dict                # Var_ML / Var_method, per parameter
    n_replicates: int
    n_failed: dict
    estimates: dict = field(repr=False, default=None)


def _efficiency_worker(payload):
    spec_dict, margin_payload, n, estimators, force_large, ss = payload
    spec = vine_mod.spec_from_dict(spec_dict)
    margin_models = [
        margins_mod.MarginModel(fam, tuple(params)) for fam, params in margin_payload
    ]
    skeleton = VineSkeleton(spec.kind, spec.dim, spec.families)
    margin_families = [m.family for m in margin_models]
    rng = np.random.default_rng(ss)
    u_sim = transform_uniforms(spec, rng.random((n, spec.dim)))
    x = np.column_stack([marg_quantile(m, u_sim[:, l]) for l, m in enumerate(margin_models)])
    ub = pseudo_observations(x)
    out = {}
    for method in estimators:
        kwargs = {} if method == "ssp" else {"force_large": force_large}
        try:
            if method in ("sp", "ssp"):
                res = fit_dispatch(method, u=ub, skeleton=skeleton, **kwargs)
            else:
                res = fit_dispatch(
                    method, x=x, margin_families=margin_families, skeleton=skeleton, **kwargs
                )
            out[method] = res.theta
        except VinefitError:
            out[method] = None
    return out


def efficiency_study(config: EfficiencyConfig) -> EfficiencyResult:
    """Simulate N datasets at the true parameters, fit with each estimator, and
    report per-parameter variance ratios Var_ML / Var_method."""
    estimators = tuple(e.lower() for e in config.estimators)
    if "ml" not in estimators:
        raise DomainError("the efficiency denominator is ML; include it in estimators")
    margin_payload = [(m.family, tuple(m.params)) for m in config.margins]
    seed = config.seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(config.n_replicates)
    payloads = [
        (
            vine_mod.spec_to_dict(config.spec),
            margin_payload,
            config.n,
            estimators,
            config.force_large,
            ss,
        )
        for ss in children
    ]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            rows = list(pool.map(_efficiency_worker, payloads, chunksize=1))
    else:
        rows = [_efficiency_worker(p) for p in payloads]

    estimates, n_failed = {}, {}
    for method in estimators:
        good = [r[method] for r in rows if r[method] is not None]
        n_failed[method] = config.n_replicates - len(good)
        if n_failed[method]:
            logger.warning(
                "skipped %d/%d replicates for %s", n_failed[method], config.n_replicates, method
            )
        if n_failed[method] > 0.10 * config.n_replicates:
            raise VinefitError(
                f"{n_failed[method]}/{config.n_replicates} replicates failed for {method}"
            )
        estimates[method] = np.vstack(good)
    variances = {m: estimates[m].var(axis=0, ddof=1) for m in estimators}
    efficiency = {
        m: variances["ml"] / variances[m] for m in estimators if m != "ml"
    }
    return EfficiencyResult(
        labels=parameter_labels(config.spec),
        estimators=estimators,
        variances=variances,
        efficiency=efficiency,
        n_replicates=config.n_replicates,
        n_failed=n_failed,
        estimates=estimates,
    )
