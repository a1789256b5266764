"""Small dense Levenberg-Marquardt solver shared by the curve fits.

Problems here have a handful of parameters and at most a few hundred
residuals, so the normal equations are solved directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import FitDiverged

XTOL = 1e-10
MAX_ITER = 200


@dataclass(frozen=True, eq=False)
class LSQResult:
    params: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    initial_residual_norm: float
    n_iter: int
    converged: bool
    jacobian: np.ndarray

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def numeric_jacobian(fun: Callable, p: np.ndarray, r0: np.ndarray = None) -> np.ndarray:
    """Central differences with steps scaled to each parameter."""
    p = np.asarray(p, dtype=np.float64)
    jac = np.empty((np.size(r0) if r0 is not None else np.size(fun(p)), p.size))
    for i in range(p.size):
        h = 1e-6 * max(abs(p[i]), 1e-3)
        up = p.copy()
        dn = p.copy()
        up[i] += h
        dn[i] -= h
        jac[:, i] = (fun(up) - fun(dn)) / (2 * h)
    return jac


def levenberg_marquardt(fun: Callable, p0, jac: Callable = None, *, xtol: float = XTOL,
                        max_iter: int = MAX_ITER, absolute_sigma: bool = True) -> LSQResult:
    """Minimise ``sum(fun(p)**2)``.

    Stops when the relative step ``|dp| < xtol (|p| + xtol)`` or after
    ``max_iter`` iterations.  ``covariance`` is ``(J^T J)^-1`` at the
    solution, multiplied by the reduced chi-square unless ``absolute_sigma``
    (residuals already divided by their standard deviations).
    """
    p = np.array(p0, dtype=np.float64)
    jac = jac or (lambda q: numeric_jacobian(fun, q))
    r = np.asarray(fun(p), dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise FitDiverged("residuals are not finite at the initial guess")
    cost = float(r @ r)
    initial = cost
    mu = 1e-3
    converged = False
    it = 0
    J = jac(p)
    for it in range(1, max_iter + 1):
        A = J.T @ J
        g = J.T @ r
        diag = np.maximum(np.diag(A), 1e-300)
        accepted = False
        while mu < 1e16:
            try:
                step = -np.linalg.solve(A + mu * np.diag(diag), g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            trial = p + step
            r_new = np.asarray(fun(trial), dtype=np.float64)
            with np.errstate(over="ignore"):
                c_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if c_new <= cost:
                p, r, cost = trial, r_new, c_new
                mu = max(mu / 3.0, 1e-12)
                accepted = True
                break
            mu *= 4.0
        if not np.all(np.isfinite(p)):
            raise FitDiverged("parameters became non-finite")
        if not accepted or np.linalg.norm(step) < xtol * (np.linalg.norm(p) + xtol):
            converged = True
            if accepted:
                J = jac(p)
            break
        J = jac(p)
    JtJ = J.T @ J
    try:
        cov = np.linalg.pinv(JtJ)
    except np.linalg.LinAlgError:
        raise FitDiverged("normal matrix is not invertible at the solution") from None
    dof = r.size - p.size
    if not absolute_sigma and dof > 0:
        cov = cov * cost / dof
    return LSQResult(p, cov, float(np.sqrt(cost)), float(np.sqrt(initial)), it, converged, J)
