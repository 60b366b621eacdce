"""Bivariate copula families: density, h-function, inverse h, Kendall's tau, pair fitting.

Families: independence, Gaussian (rho), Student-t (rho, nu), Gumbel (delta).
All evaluation functions are vectorized over their unit-interval arguments and
pure, so they are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import optimize as sciopt
from scipy.special import betaincinv, gammaln, ndtr, ndtri, stdtr
from scipy.stats import kendalltau

from .exceptions import ConvergenceError, DegenerateDataError, DomainError

# Unit-interval inputs are clamped to this band before evaluation; pseudo
# observations never reach 0/1 but deep h-recursions can underflow.
UEPS = 1e-10

# h outputs are only kept strictly inside (0, 1); clamping them as hard as the
# inputs would collapse distinct conditional CDF values near saturation.
_OPEN_EPS = 1e-15

# Ceiling for the Student-t degrees of freedom in unconstrained coordinates.
NU_CAP = 300.0

# Bounds for 1-d searches in unconstrained coordinates.
_ETA_RHO_BOUNDS = (-18.0, 18.0)      # rho = tanh(eta)
_ETA_DELTA_BOUNDS = (-30.0, 8.0)     # delta = 1 + exp(eta)


class Family(str, Enum):
    INDEPENDENCE = "indep"
    GAUSSIAN = "gaussian"
    STUDENT_T = "t"
    GUMBEL = "gumbel"


N_PARAMS = {
    Family.INDEPENDENCE: 0,
    Family.GAUSSIAN: 1,
    Family.STUDENT_T: 2,
    Family.GUMBEL: 1,
}

PARAM_NAMES = {
    Family.INDEPENDENCE: (),
    Family.GAUSSIAN: ("rho",),
    Family.STUDENT_T: ("rho", "nu"),
    Family.GUMBEL: ("delta",),
}


@dataclass(frozen=True)
class ParamDomain:
    """Validity interval of one parameter plus its unconstrained map.

    ``transform`` names the strictly increasing bijection from the reals onto
    the interior that the optimizers search in.
    """

    name: str
    lower: float
    upper: float
    lower_open: bool
    upper_open: bool
    transform: str

    def contains(self, value):
        lo_ok = value > self.lower if self.lower_open else value >= self.lower
        hi_ok = value < self.upper if self.upper_open else value <= self.upper
        return lo_ok and hi_ok


PARAM_DOMAINS = {
    Family.INDEPENDENCE: (),
    Family.GAUSSIAN: (ParamDomain("rho", -1.0, 1.0, True, True, "tanh"),),
    Family.STUDENT_T: (
        ParamDomain("rho", -1.0, 1.0, True, True, "tanh"),
        ParamDomain("nu", 2.0, np.inf, True, True, "2 + exp, capped at 300"),
    ),
    Family.GUMBEL: (ParamDomain("delta", 1.0, np.inf, False, True, "1 + exp"),),
}


def _check_params(family, params):
    params = tuple(float(p) for p in params)
    domains = PARAM_DOMAINS[family]
    if len(params) != len(domains):
        raise DomainError(
            f"{family.value} copula takes {len(domains)} parameter(s), got {len(params)}"
        )
    for value, dom in zip(params, domains):
        if not np.isfinite(value) or not dom.contains(value):
            lo = "(" if dom.lower_open else "["
            hi = ")" if dom.upper_open else "]"
            raise DomainError(
                f"{family.value} {dom.name} must lie in {lo}{dom.lower}, {dom.upper}{hi}, "
                f"got {value}"
            )
    return params


@dataclass(frozen=True)
class PairCopula:
    """A bivariate copula family tag plus its parameter vector."""

    family: Family
    params: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "params", _check_params(self.family, self.params))

    def __repr__(self):
        inside = ", ".join(
            f"{k}={v:.6g}" for k, v in zip(PARAM_NAMES[self.family], self.params)
        )
        return f"PairCopula({self.family.value}{', ' + inside if inside else ''})"


def independence():
    return PairCopula(Family.INDEPENDENCE)


def _clamp(u):
    return np.clip(np.asarray(u, dtype=float), UEPS, 1.0 - UEPS)


def _t_ppf(p, nu):
    """Student-t quantile via the inverse incomplete beta (faster than stdtrit)."""
    p = np.asarray(p, dtype=float)
    q = np.minimum(p, 1.0 - p)
    z = betaincinv(0.5 * nu, 0.5, 2.0 * q)
    z = np.maximum(z, 1e-300)
    return np.sign(p - 0.5) * np.sqrt(nu * (1.0 - z) / z)


# ---------------------------------------------------------------------------
# log density
# ---------------------------------------------------------------------------

def _log_density_gaussian(u, v, rho):
    x = ndtri(u)
    y = ndtri(v)
    r2 = rho * rho
    return -0.5 * np.log1p(-r2) - (r2 * (x * x + y * y) - 2.0 * rho * x * y) / (
        2.0 * (1.0 - r2)
    )


def _log_density_student(u, v, rho, nu):
    x = _t_ppf(u, nu)
    y = _t_ppf(v, nu)
    r2 = rho * rho
    const = gammaln(0.5 * (nu + 2.0)) + gammaln(0.5 * nu) - 2.0 * gammaln(0.5 * (nu + 1.0))
    quad = (x * x + y * y - 2.0 * rho * x * y) / (nu * (1.0 - r2))
    return (
        const
        - 0.5 * np.log1p(-r2)
        + 0.5 * (nu + 1.0) * (np.log1p(x * x / nu) + np.log1p(y * y / nu))
        - 0.5 * (nu + 2.0) * np.log1p(quad)
    )


def _gumbel_parts(u, v, delta):
    # Returns (log u, log v, log utilde, log vtilde, log s, t) with
    # s = utilde^delta + vtilde^delta and t = s^(1/delta), all overflow-safe.
    lu = np.log(u)
    lv = np.log(v)
    llu = np.log(-lu)
    llv = np.log(-lv)
    ls = np.logaddexp(delta * llu, delta * llv)
    t = np.exp(ls / delta)
    return lu, lv, llu, llv, ls, t


def _log_density_gumbel(u, v, delta):
    if delta == 1.0:
        return np.zeros(np.broadcast(u, v).shape)
    lu, lv, llu, llv, ls, t = _gumbel_parts(u, v, delta)
    return (
        -t
        + (delta - 1.0) * (llu + llv)
        + np.log(t + delta - 1.0)
        - lu
        - lv
        - (2.0 - 1.0 / delta) * ls
    )


def log_density(c: PairCopula, u, v):
    """log c(u, v); computed in log space so corners do not overflow."""
    u = _clamp(u)
    v = _clamp(v)
    if c.family is Family.INDEPENDENCE:
        return np.zeros(np.broadcast(u, v).shape)
    if c.family is Family.GAUSSIAN:
        return _log_density_gaussian(u, v, c.params[0])
    if c.family is Family.STUDENT_T:
        return _log_density_student(u, v, *c.params)
    return _log_density_gumbel(u, v, c.params[0])


def density(c: PairCopula, u, v):
    """Copula density c(u, v); finite and positive on the clamped square."""
    return np.exp(log_density(c, u, v))


# ---------------------------------------------------------------------------
# h-functions (conditional CDF of the first argument given the second)
# ---------------------------------------------------------------------------

def h(c: PairCopula, u, v):
    """h(u, v) = dC(u, v)/dv, the conditional CDF of U given V = v."""
    u = _clamp(u)
    v = _clamp(v)
    if c.family is Family.INDEPENDENCE:
        return np.broadcast_to(u, np.broadcast(u, v).shape).copy()
    if c.family is Family.GAUSSIAN:
        rho = c.params[0]
        out = ndtr((ndtri(u) - rho * ndtri(v)) / np.sqrt(1.0 - rho * rho))
    elif c.family is Family.STUDENT_T:
        rho, nu = c.params
        x = _t_ppf(u, nu)
        y = _t_ppf(v, nu)
        scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0))
        out = stdtr(nu + 1.0, (x - rho * y) / scale)
    else:
        delta = c.params[0]
        if delta == 1.0:
            return np.broadcast_to(u, np.broadcast(u, v).shape).copy()
        lu, lv, llu, llv, ls, t = _gumbel_parts(u, v, delta)
        out = np.exp(-t + (delta - 1.0) * llv - lv - (1.0 - 1.0 / delta) * ls)
    return np.clip(out, _OPEN_EPS, 1.0 - _OPEN_EPS)


def logc_and_h(c: PairCopula, u, v, need_h12=False, need_h21=False):
    """Fused evaluation of log c(u, v) with h(u|v) and/or h(v|u).

    Shares the expensive data transforms (normal/t quantiles, Gumbel logs)
    between the density and the conditional CDFs; the individual results are
    bit-identical to log_density() and h(). This is the hot path of the vine
    recursion.
    """
    u = _clamp(u)
    v = _clamp(v)
    h12 = h21 = None
    if c.family is Family.INDEPENDENCE:
        shape = np.broadcast(u, v).shape
        logc = np.zeros(shape)
        if need_h12:
            h12 = np.broadcast_to(u, shape).copy()
        if need_h21:
            h21 = np.broadcast_to(v, shape).copy()
        return logc, h12, h21
    if c.family is Family.GAUSSIAN:
        rho = c.params[0]
        x = ndtri(u)
        y = ndtri(v)
        r2 = rho * rho
        logc = -0.5 * np.log1p(-r2) - (r2 * (x * x + y * y) - 2.0 * rho * x * y) / (
            2.0 * (1.0 - r2)
        )
        if need_h12:
            h12 = np.clip(
                ndtr((x - rho * y) / np.sqrt(1.0 - rho * rho)), _OPEN_EPS, 1.0 - _OPEN_EPS
            )
        if need_h21:
            h21 = np.clip(
                ndtr((y - rho * x) / np.sqrt(1.0 - rho * rho)), _OPEN_EPS, 1.0 - _OPEN_EPS
            )
        return logc, h12, h21
    if c.family is Family.STUDENT_T:
        rho, nu = c.params
        x = _t_ppf(u, nu)
        y = _t_ppf(v, nu)
        r2 = rho * rho
        const = gammaln(0.5 * (nu + 2.0)) + gammaln(0.5 * nu) - 2.0 * gammaln(0.5 * (nu + 1.0))
        quad = (x * x + y * y - 2.0 * rho * x * y) / (nu * (1.0 - r2))
        logc = (
            const
            - 0.5 * np.log1p(-r2)
            + 0.5 * (nu + 1.0) * (np.log1p(x * x / nu) + np.log1p(y * y / nu))
            - 0.5 * (nu + 2.0) * np.log1p(quad)
        )
        if need_h12:
            scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0))
            h12 = np.clip(
                stdtr(nu + 1.0, (x - rho * y) / scale), _OPEN_EPS, 1.0 - _OPEN_EPS
            )
        if need_h21:
            scale = np.sqrt((nu + x * x) * (1.0 - rho * rho) / (nu + 1.0))
            h21 = np.clip(
                stdtr(nu + 1.0, (y - rho * x) / scale), _OPEN_EPS, 1.0 - _OPEN_EPS
            )
        return logc, h12, h21
    delta = c.params[0]
    if delta == 1.0:
        shape = np.broadcast(u, v).shape
        logc = np.zeros(shape)
        if need_h12:
            h12 = np.broadcast_to(u, shape).copy()
        if need_h21:
            h21 = np.broadcast_to(v, shape).copy()
        return logc, h12, h21
    lu, lv, llu, llv, ls, t = _gumbel_parts(u, v, delta)
    logc = (
        -t
        + (delta - 1.0) * (llu + llv)
        + np.log(t + delta - 1.0)
        - lu
        - lv
        - (2.0 - 1.0 / delta) * ls
    )
    if need_h12:
        h12 = np.clip(
            np.exp(-t + (delta - 1.0) * llv - lv - (1.0 - 1.0 / delta) * ls),
            _OPEN_EPS,
            1.0 - _OPEN_EPS,
        )
    if need_h21:
        h21 = np.clip(
            np.exp(-t + (delta - 1.0) * llu - lu - (1.0 - 1.0 / delta) * ls),
            _OPEN_EPS,
            1.0 - _OPEN_EPS,
        )
    return logc, h12, h21


def h_inverse(c: PairCopula, p, v):
    """Solve h(u, v) = p for u.

    Closed form for independence, Gaussian and Student-t; monotone bisection
    for Gumbel (h is strictly increasing in u since dh/du equals the density).
    """
    p = np.clip(np.asarray(p, dtype=float), _OPEN_EPS, 1.0 - _OPEN_EPS)
    v = _clamp(v)
    if c.family is Family.INDEPENDENCE:
        return np.broadcast_to(p, np.broadcast(p, v).shape).copy()
    if c.family is Family.GAUSSIAN:
        rho = c.params[0]
        out = ndtr(ndtri(p) * np.sqrt(1.0 - rho * rho) + rho * ndtri(v))
        return np.clip(out, _OPEN_EPS, 1.0 - _OPEN_EPS)
    if c.family is Family.STUDENT_T:
        rho, nu = c.params
        y = _t_ppf(v, nu)
        scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0))
        x = _t_ppf(p, nu + 1.0) * scale + rho * y
        return np.clip(stdtr(nu, x), _OPEN_EPS, 1.0 - _OPEN_EPS)
    delta = c.params[0]
    if delta == 1.0:
        return np.broadcast_to(p, np.broadcast(p, v).shape).copy()
    p_b, v_b = np.broadcast_arrays(p, v)
    lo = np.full(p_b.shape, _OPEN_EPS)
    hi = np.full(p_b.shape, 1.0 - _OPEN_EPS)
    max_iter = 200
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = h(c, mid, v_b) < p_b
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < 1e-13:
            break
    else:
        raise ConvergenceError(
            "h_inverse bisection did not converge (pathological parameters?)",
            best_point=0.5 * (lo + hi),
        )
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Kendall's tau
# ---------------------------------------------------------------------------

def kendall_tau(c: PairCopula):
    """Population Kendall's tau (closed forms)."""
    if c.family is Family.INDEPENDENCE:
        return 0.0
    if c.family in (Family.GAUSSIAN, Family.STUDENT_T):
        return 2.0 / np.pi * np.arcsin(c.params[0])
    return 1.0 - 1.0 / c.params[0]


def tau_to_params(family: Family, tau, nu_start=10.0):
    """Start values by Kendall-tau inversion. Used to seed the optimizers."""
    family = Family(family)
    if family is Family.INDEPENDENCE:
        return ()
    if family is Family.GAUSSIAN:
        return (float(np.clip(np.sin(0.5 * np.pi * tau), -0.99, 0.99)),)
    if family is Family.STUDENT_T:
        return (float(np.clip(np.sin(0.5 * np.pi * tau), -0.99, 0.99)), nu_start)
    if tau >= 0.99:
        return (100.0,)
    return (max(1.0 / (1.0 - max(tau, 0.0)), 1.0 + 1e-8),)


# ---------------------------------------------------------------------------
# Unconstrained reparametrization (rho = tanh eta, nu = 2 + exp eta capped,
# delta = 1 + exp eta)
# ---------------------------------------------------------------------------

def params_to_eta(family: Family, params):
    family = Family(family)
    if family is Family.INDEPENDENCE:
        return np.empty(0)
    if family is Family.GAUSSIAN:
        return np.array([np.arctanh(params[0])])
    if family is Family.STUDENT_T:
        nu = min(params[1], NU_CAP - 1e-9)
        return np.array([np.arctanh(params[0]), np.log(nu - 2.0)])
    return np.array([np.log(max(params[0] - 1.0, 1e-300))])


def eta_to_params(family: Family, eta):
    family = Family(family)
    if family is Family.INDEPENDENCE:
        return ()
    if family is Family.GAUSSIAN:
        return (float(np.tanh(eta[0])),)
    if family is Family.STUDENT_T:
        return (float(np.tanh(eta[0])), float(min(2.0 + np.exp(eta[1]), NU_CAP)))
    return (1.0 + float(np.exp(eta[0])),)


# ---------------------------------------------------------------------------
# Single-pair maximum pseudo-likelihood fit
# ---------------------------------------------------------------------------

@dataclass
class PairFit:
    copula: PairCopula
    loglik: float
    converged: bool
    n_eval: int
    grad_norm: float  # norm of the mean-log-likelihood gradient, unconstrained coords


def _nll_factory(family, u, v):
    """Negative log-likelihood in unconstrained coordinates, with the
    parameter-independent data transforms hoisted out of the search loop."""
    n = u.size
    if family is Family.GAUSSIAN:
        x = ndtri(u)
        y = ndtri(v)
        sxx = float(np.dot(x, x) + np.dot(y, y))
        sxy = float(np.dot(x, y))

        def nll(eta):
            rho = np.tanh(eta[0])
            r2 = rho * rho
            return 0.5 * n * np.log1p(-r2) + (r2 * sxx - 2.0 * rho * sxy) / (
                2.0 * (1.0 - r2)
            )

        return nll
    if family is Family.GUMBEL:
        llu = np.log(-np.log(u))
        llv = np.log(-np.log(v))
        sll = float(np.sum(llu + llv))
        sluv = float(np.sum(np.log(u) + np.log(v)))

        def nll(eta):
            delta = 1.0 + np.exp(eta[0])
            ls = np.logaddexp(delta * llu, delta * llv)
            t = np.exp(ls / delta)
            ll = (
                -np.sum(t)
                + (delta - 1.0) * sll
                + np.sum(np.log(t + delta - 1.0))
                - sluv
                - (2.0 - 1.0 / delta) * np.sum(ls)
            )
            return -ll

        return nll

    def nll(eta):  # Student-t
        params = eta_to_params(family, eta)
        return -float(np.sum(_log_density_student(u, v, *params)))

    return nll


def fit_pair(u, v, family, start=None, multistart=False):
    """Maximize sum_k log c(u_k, v_k; theta) for a single pair copula.

    One-parameter families use bounded Brent in unconstrained coordinates;
    Student-t uses Nelder-Mead started from the tau-inversion rho and nu = 10.
    """
    family = Family(family)
    u = _clamp(np.asarray(u, dtype=float).ravel())
    v = _clamp(np.asarray(v, dtype=float).ravel())
    if u.size != v.size:
        raise DomainError("u and v must have the same length")
    if u.size < 10:
        raise DomainError(f"need at least 10 observations, got {u.size}")
    if np.all(u == u[0]) and np.all(v == v[0]):
        raise DegenerateDataError("all (u, v) pairs identical")

    if family is Family.INDEPENDENCE:
        return PairFit(independence(), 0.0, True, 0, 0.0)

    if start is not None:
        start_params = _check_params(family, start)
    else:
        tau = kendalltau(u, v).statistic
        if not np.isfinite(tau):
            tau = 0.0
        start_params = tau_to_params(family, tau)
    eta0 = params_to_eta(family, start_params)
    nll = _nll_factory(family, u, v)

    starts = [eta0]
    if multistart:
        rng = np.random.default_rng(0)
        for _ in range(5):
            starts.append(eta0 + rng.normal(scale=0.7, size=eta0.size))

    best_eta, best_val, n_eval, ok = None, np.inf, 0, False
    for s in starts:
        if family in (Family.GAUSSIAN, Family.GUMBEL):
            bounds = _ETA_RHO_BOUNDS if family is Family.GAUSSIAN else _ETA_DELTA_BOUNDS
            res = sciopt.minimize_scalar(
                lambda e: nll(np.array([e])),
                bounds=(max(bounds[0], s[0] - 25.0), min(bounds[1], s[0] + 25.0)),
                method="bounded",
                options={"xatol": 1e-11, "maxiter": 500},
            )
            cand_eta, cand_val = np.array([res.x]), float(res.fun)
            n_eval += res.nfev
            success = bool(res.success)
        else:
            res = sciopt.minimize(
                nll,
                s,
                method="Nelder-Mead",
                options={"fatol": 1e-10, "xatol": 1e-9, "maxfev": 4000, "adaptive": True},
            )
            cand_eta, cand_val = res.x, float(res.fun)
            n_eval += res.nfev
            success = bool(res.success)
        if cand_val < best_val:
            best_eta, best_val, ok = cand_eta, cand_val, success

    if best_eta is None or not np.isfinite(best_val):
        raise ConvergenceError(f"pair fit failed for {family.value}")

    step = 1e-6
    grad = np.array(
        [
            (nll(best_eta + step * e_i) - nll(best_eta - step * e_i)) / (2 * step)
            for e_i in np.eye(best_eta.size)
        ]
    )
    grad_norm = float(np.linalg.norm(grad)) / u.size
    cop = PairCopula(family, eta_to_params(family, best_eta))
    return PairFit(cop, -best_val, ok, n_eval, grad_norm)
