"""The four vine estimators: ML (joint), IFM (two-step), SP (pseudo-likelihood),
and the stepwise semiparametric SSP estimator.

SSP fits one edge at a time, level by level, conditioning on the estimates from
preceding levels; SP and ML optimize jointly and refuse to run above a
parameter cap unless forced, while SSP has no cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import copulas, margins as margins_mod, vine as vine_mod
from .copulas import Family, fit_pair
from .exceptions import (
    ConvergenceError,
    DomainError,
    EdgeFitError,
    ParameterCapError,
    VinefitError,
)
from .margins import MarginFamily, as_matrix, fit_margin, marg_cdf, marg_log_pdf
from .optimize import maximize
from .vine import VineKind, VineSpec, n_edges, theta_vector, with_theta

DEFAULT_PARAM_CAP = 60


@dataclass(frozen=True)
class VineSkeleton:
    """Vine kind plus per-edge family assignments (level-major), parameters free."""

    kind: VineKind
    dim: int
    families: tuple

    def __post_init__(self):
        object.__setattr__(self, "kind", VineKind(self.kind))
        fams = tuple(Family(f) for f in self.families)
        if len(fams) != n_edges(self.dim):
            raise DomainError(
                f"a {self.dim}-dimensional vine needs {n_edges(self.dim)} families, got {len(fams)}"
            )
        object.__setattr__(self, "families", fams)

    def level_families(self, j):
        start = sum(self.dim - l for l in range(1, j))
        return self.families[start : start + self.dim - j]

    @property
    def n_theta(self):
        return sum(copulas.N_PARAMS[f] for f in self.families)


@dataclass
class FitResult:
    method: str
    spec: VineSpec
    theta: np.ndarray
    loglik: float                       # full log-likelihood for ML/IFM, pseudo for SP/SSP
    converged: bool
    n_obs: int
    margins: list | None = None         # fitted MarginModel per column (ML/IFM)
    loglik_margins: float | None = None
    n_eval: int = 0
    level_converged: list | None = None  # SSP per-level convergence flags
    se: np.ndarray | None = None         # filled by the asymptotics layer
    ci: np.ndarray | None = None
    se_margins: np.ndarray | None = None
    ci_margins: np.ndarray | None = None


def _spec_from_edges(skeleton, fitted_levels):
    return VineSpec(skeleton.kind, skeleton.dim, tuple(tuple(l) for l in fitted_levels))


# ---------------------------------------------------------------------------
# SSP: level-by-level, one edge at a time
# ---------------------------------------------------------------------------

def fit_ssp(u, skeleton: VineSkeleton, multistart=False) -> FitResult:
    """Stepwise semiparametric fit on pseudo-observations.

    Each level-j edge is fitted by maximum pseudo-likelihood on its level-j
    arguments; the fresh estimates then generate the level-(j+1) arguments.
    A failed edge aborts deeper levels, since their arguments would be invalid.
    """
    mat = as_matrix(u)
    if mat.shape[1] != skeleton.dim:
        raise DomainError(f"data has {mat.shape[1]} columns, skeleton has dim {skeleton.dim}")
    args = vine_mod._level1_args(skeleton.kind, vine_mod._clamp(mat))
    levels = []
    level_ok = []
    loglik = 0.0
    n_eval = 0
    for j in range(1, skeleton.dim):
        fams = skeleton.level_families(j)
        fitted = []
        ok = True
        for i, fam in enumerate(fams, start=1):
            a1, a2 = args[i - 1]
            if fam is Family.INDEPENDENCE:
                fitted.append(copulas.independence())
                continue
            try:
                pf = fit_pair(a1, a2, fam, multistart=multistart)
            except Exception as exc:  # noqa: BLE001 - tag with the vine position
                raise EdgeFitError(j, i, exc) from exc
            fitted.append(pf.copula)
            loglik += pf.loglik
            n_eval += pf.n_eval
            ok = ok and pf.converged
        levels.append(fitted)
        level_ok.append(ok)
        if j < skeleton.dim - 1:
            args = vine_mod._advance(skeleton.kind, fitted, args)
    spec = _spec_from_edges(skeleton, levels)
    return FitResult(
        method="ssp",
        spec=spec,
        theta=theta_vector(spec),
        loglik=loglik,
        converged=all(level_ok),
        n_obs=mat.shape[0],
        n_eval=n_eval,
        level_converged=level_ok,
    )


# ---------------------------------------------------------------------------
# Joint copula-parameter optimization shared by SP and the IFM second step
# ---------------------------------------------------------------------------

def _eta_split(skeleton):
    sizes = [copulas.N_PARAMS[f] for f in skeleton.families]
    offsets = np.cumsum([0] + sizes)
    return sizes, offsets


def _theta_to_eta(skeleton, theta):
    sizes, offsets = _eta_split(skeleton)
    pieces = []
    for fam, lo, hi in zip(skeleton.families, offsets[:-1], offsets[1:]):
        pieces.append(copulas.params_to_eta(fam, theta[lo:hi]))
    return np.concatenate(pieces) if pieces else np.empty(0)


def _eta_to_theta(skeleton, eta):
    sizes, offsets = _eta_split(skeleton)
    pieces = []
    for fam, lo, hi in zip(skeleton.families, offsets[:-1], offsets[1:]):
        pieces.append(copulas.eta_to_params(fam, eta[lo:hi]))
    return np.array([p for piece in pieces for p in piece])


def _check_cap(n_params, force, what):
    if n_params > DEFAULT_PARAM_CAP and not force:
        raise ParameterCapError(
            f"{what} refuses {n_params} parameters (cap {DEFAULT_PARAM_CAP}); "
            "pass force_large=True to override"
        )


def _maximize_copula(skeleton, mat, theta0, fatol):
    """Joint pseudo/plug-in likelihood over all copula parameters."""
    template = with_theta(
        vine_mod.make_spec(
            skeleton.kind,
            [f.value for f in skeleton.families],
            _default_theta(skeleton),
        ),
        theta0,
    )

    def objective(eta):
        spec = with_theta(template, _eta_to_theta(skeleton, eta))
        return float(np.sum(vine_mod.vine_log_density(spec, mat)))

    eta0 = _theta_to_eta(skeleton, theta0)
    res = maximize(objective, eta0, fatol=fatol)
    theta = _eta_to_theta(skeleton, res.x)
    return with_theta(template, theta), theta, res


def _default_theta(skeleton):
    out = []
    for f in skeleton.families:
        if f is Family.GAUSSIAN:
            out.append(0.0)
        elif f is Family.STUDENT_T:
            out.extend([0.0, 10.0])
        elif f is Family.GUMBEL:
            out.append(1.5)
    return out


def fit_sp(u, skeleton: VineSkeleton, theta0=None, force_large=False) -> FitResult:
    """Semiparametric fit: jointly maximize the pseudo log-likelihood over theta.

    Starts from the SSP estimate, so the achieved value never falls below it.
    At d = 2 the two programs coincide (single edge, same objective), so the
    SSP result is returned directly.
    """
    mat = as_matrix(u)
    if skeleton.n_theta == 0:
        fit = fit_ssp(mat, skeleton)
        fit.method = "sp"
        return fit
    if skeleton.dim == 2:
        fit = fit_ssp(mat, skeleton)
        fit.method = "sp"
        return fit
    _check_cap(skeleton.n_theta, force_large, "SP")
    if theta0 is None:
        base = fit_ssp(mat, skeleton)
        theta0 = base.theta
        floor = base.loglik
    else:
        theta0 = np.asarray(theta0, dtype=float)
        floor = None
    try:
        spec, theta, res = _maximize_copula(skeleton, mat, theta0, fatol=1e-9)
    except ConvergenceError as exc:
        exc.best_point = (
            _eta_to_theta(skeleton, exc.best_point) if exc.best_point is not None else None
        )
        raise
    loglik = res.fun
    if floor is not None and loglik < floor - 1e-6:
        raise ConvergenceError(
            "SP optimization ended below its SSP start", best_point=theta, best_value=loglik
        )
    return FitResult(
        method="sp",
        spec=spec,
        theta=theta,
        loglik=loglik,
        converged=res.converged,
        n_obs=mat.shape[0],
        n_eval=res.n_eval,
    )


def fit_ifm(x, margin_families, skeleton: VineSkeleton, theta0=None, force_large=False) -> FitResult:
    """Inference functions for margins: margin MLEs first, then the copula
    parameters by maximizing the plug-in copula log-likelihood."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != skeleton.dim:
        raise DomainError(f"data must be (n, {skeleton.dim})")
    if len(margin_families) != skeleton.dim:
        raise DomainError("need one margin family per column")
    fits = []
    for l, fam in enumerate(margin_families):
        try:
            fits.append(fit_margin(fam, x[:, l]))
        except VinefitError as exc:
            raise type(exc)(f"IFM margin step, column {l + 1}: {exc}") from exc
    alpha = [f.model for f in fits]
    loglik_m = sum(f.loglik for f in fits)
    u = np.column_stack(
        [vine_mod._clamp(marg_cdf(m, x[:, l])) for l, m in enumerate(alpha)]
    )
    if skeleton.n_theta == 0:
        return FitResult(
            method="ifm", spec=_independence_spec(skeleton), theta=np.empty(0),
            loglik=loglik_m, converged=True, n_obs=x.shape[0],
            margins=alpha, loglik_margins=loglik_m,
        )
    _check_cap(skeleton.n_theta, force_large, "IFM step 2")
    if theta0 is None:
        # Stepwise start on the parametric uniforms; cheap and basin-correct.
        theta0 = fit_ssp(u, skeleton).theta
    if skeleton.dim == 2:
        pf = fit_pair(u[:, 0], u[:, 1], skeleton.families[0], start=tuple(theta0))
        spec = _spec_from_edges(skeleton, [[pf.copula]])
        theta, loglik_c, conv, nev = theta_vector(spec), pf.loglik, pf.converged, pf.n_eval
    else:
        spec, theta, res = _maximize_copula(skeleton, u, np.asarray(theta0, float), fatol=1e-9)
        loglik_c, conv, nev = res.fun, res.converged, res.n_eval
    return FitResult(
        method="ifm",
        spec=spec,
        theta=theta,
        loglik=loglik_m + loglik_c,
        converged=conv and all(f.converged for f in fits),
        n_obs=x.shape[0],
        margins=alpha,
        loglik_margins=loglik_m,
        n_eval=nev,
    )


def _independence_spec(skeleton):
    levels = []
    for j in range(1, skeleton.dim):
        levels.append([copulas.independence() for _ in range(skeleton.dim - j)])
    return _spec_from_edges(skeleton, levels)


def _margin_eta_concat(margin_families, alphas):
    return np.concatenate(
        [margins_mod.margin_params_to_eta(f, a.params) for f, a in zip(margin_families, alphas)]
    )


def fit_ml(x, margin_families, skeleton: VineSkeleton, start=None, force_large=False) -> FitResult:
    """Joint maximum likelihood over marginal and copula parameters.

    The default start is the IFM margin estimates together with the SSP copula
    estimates. Refuses to run when the total parameter count exceeds the cap.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != skeleton.dim:
        raise DomainError(f"data must be (n, {skeleton.dim})")
    margin_families = [MarginFamily(f) for f in margin_families]
    n_alpha = sum(margins_mod.N_PARAMS[f] for f in margin_families)
    _check_cap(n_alpha + skeleton.n_theta, force_large, "ML")

    if start is None:
        alpha0 = [fit_margin(f, x[:, l]).model for l, f in enumerate(margin_families)]
        theta0 = fit_ssp(margins_mod.pseudo_observations(x), skeleton).theta
    else:
        alpha0, theta0 = start
        theta0 = np.asarray(theta0, dtype=float)

    alpha_sizes = [margins_mod.N_PARAMS[f] for f in margin_families]
    alpha_offsets = np.cumsum([0] + alpha_sizes)
    template = vine_mod.make_spec(
        skeleton.kind, [f.value for f in skeleton.families], _default_theta(skeleton)
    ) if skeleton.n_theta else _independence_spec(skeleton)

    def unpack(eta):
        alphas = []
        for fam, lo, hi in zip(margin_families, alpha_offsets[:-1], alpha_offsets[1:]):
            alphas.append(
                margins_mod.MarginModel(fam, margins_mod.margin_eta_to_params(fam, eta[lo:hi]))
            )
        theta = _eta_to_theta(skeleton, eta[n_alpha:]) if skeleton.n_theta else np.empty(0)
        return alphas, theta

    def objective(eta):
        try:
            alphas, theta = unpack(eta)
        except DomainError:
            return -np.inf
        total = 0.0
        u_cols = []
        for l, m in enumerate(alphas):
            lp = marg_log_pdf(m, x[:, l])
            s = float(np.sum(lp))
            if not np.isfinite(s):
                return -np.inf
            total += s
            u_cols.append(vine_mod._clamp(marg_cdf(m, x[:, l])))
        if skeleton.n_theta:
            spec = with_theta(template, theta)
            total += float(np.sum(vine_mod.vine_log_density(spec, np.column_stack(u_cols))))
        return total

    eta0 = np.concatenate(
        [
            _margin_eta_concat(margin_families, alpha0),
            _theta_to_eta(skeleton, theta0) if skeleton.n_theta else np.empty(0),
        ]
    )
    res = maximize(objective, eta0, fatol=1e-9)
    alphas, theta = unpack(res.x)
    spec = with_theta(template, theta) if skeleton.n_theta else template
    loglik_m = float(sum(np.sum(marg_log_pdf(m, x[:, l])) for l, m in enumerate(alphas)))
    return FitResult(
        method="ml",
        spec=spec,
        theta=theta,
        loglik=res.fun,
        converged=res.converged,
        n_obs=x.shape[0],
        margins=alphas,
        loglik_margins=loglik_m,
        n_eval=res.n_eval,
    )


def fit(method, *, u=None, x=None, margin_families=None, skeleton=None, **kwargs):
    """Dispatch by method name; SP/SSP take pseudo-observations, IFM/ML raw data."""
    method = method.lower()
    if method == "ssp":
        return fit_ssp(u if u is not None else margins_mod.pseudo_observations(x), skeleton, **kwargs)
    if method == "sp":
        return fit_sp(u if u is not None else margins_mod.pseudo_observations(x), skeleton, **kwargs)
    if method == "ifm":
        return fit_ifm(x, margin_families, skeleton, **kwargs)
    if method == "ml":
        return fit_ml(x, margin_families, skeleton, **kwargs)
    raise DomainError(f"unknown method {method!r}; expected ml, ifm, sp or ssp")
