"""Shared optimizer and numerical differentiation.

``maximize`` wraps Nelder-Mead with restart-on-collapse: after a successful
inner run the search restarts from the incumbent, and stops once a restart no
longer improves the objective beyond the f tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize as sciopt

from .exceptions import ConvergenceError, DomainError


@dataclass
class MaximizeResult:
    x: np.ndarray
    fun: float
    n_eval: int
    n_restarts: int
    converged: bool


def maximize(f, x0, fatol=1e-9, xatol=1e-8, max_evals=None, max_restarts=5):
    """Maximize ``f`` from ``x0`` in unconstrained coordinates.

    Terminates when the simplex f-spread falls below ``fatol`` (and a restart
    confirms the point) or the evaluation budget of ``2000 * dim`` is spent,
    in which case a ConvergenceError carrying the best point is raised.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    f0 = float(f(x0))
    if not np.isfinite(f0):
        raise DomainError("objective is not finite at the start point")
    budget = int(max_evals) if max_evals is not None else 2000 * x0.size

    best_x, best_f = x0, f0
    spent = 0
    for restart in range(max_restarts + 1):
        options = {
            "fatol": fatol,
            "xatol": xatol,
            "maxfev": max(budget - spent, 2),
            "adaptive": x0.size > 4,
        }
        if restart > 0:
            # confirmation restarts probe a small simplex around the incumbent;
            # a collapsed first run still rolls downhill from here
            scale = 1e-3 * np.maximum(1.0, np.abs(best_x))
            options["initial_simplex"] = np.vstack(
                [best_x, best_x + np.diag(scale)]
            )
        res = sciopt.minimize(
            lambda x: -f(x),
            best_x,
            method="Nelder-Mead",
            options=options,
        )
        spent += res.nfev
        improved = -res.fun > best_f + 10.0 * fatol
        if -res.fun > best_f:
            best_x, best_f = np.atleast_1d(res.x), float(-res.fun)
        if res.success and not improved and restart > 0:
            return MaximizeResult(best_x, best_f, spent, restart, True)
        if spent >= budget:
            raise ConvergenceError(
                f"Nelder-Mead exceeded {budget} evaluations",
                best_point=best_x,
                best_value=best_f,
            )
    return MaximizeResult(best_x, best_f, spent, max_restarts, True)


def _steps(theta, rel):
    theta = np.asarray(theta, dtype=float)
    return rel * np.maximum(1.0, np.abs(theta))


def numerical_gradient(f, theta, rel_step=1e-5):
    """Central-difference gradient with step ``rel_step * max(1, |theta_i|)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    hs = _steps(theta, rel_step)
    grad = np.empty(theta.size)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += hs[i]
        tm[i] -= hs[i]
        fp, fm = f(tp), f(tm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError(f"objective not finite near theta[{i}]")
        grad[i] = (fp - fm) / (2.0 * hs[i])
    return grad


def numerical_hessian(f, theta, rel_step=1e-4):
    """Central second differences, symmetrized."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    p = theta.size
    hs = _steps(theta, rel_step)
    f0 = f(theta)
    if not np.isfinite(f0):
        raise DomainError("objective not finite at theta")
    hess = np.empty((p, p))
    for i in range(p):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += hs[i]
        tm[i] -= hs[i]
        fp, fm = f(tp), f(tm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError(f"objective not finite near theta[{i}]")
        hess[i, i] = (fp - 2.0 * f0 + fm) / (hs[i] * hs[i])
        for j in range(i + 1, p):
            tpp, tpm, tmp, tmm = theta.copy(), theta.copy(), theta.copy(), theta.copy()
            tpp[[i, j]] += [hs[i], hs[j]]
            tpm[i] += hs[i]
            tpm[j] -= hs[j]
            tmp[i] -= hs[i]
            tmp[j] += hs[j]
            tmm[[i, j]] -= [hs[i], hs[j]]
            vals = np.array([f(tpp), f(tpm), f(tmp), f(tmm)])
            if not np.all(np.isfinite(vals)):
                raise DomainError(f"objective not finite near theta[{i}],theta[{j}]")
            hess[i, j] = hess[j, i] = (vals[0] - vals[1] - vals[2] + vals[3]) / (
                4.0 * hs[i] * hs[j]
            )
    return 0.5 * (hess + hess.T)
