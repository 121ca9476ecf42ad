"""Levenberg-Marquardt least squares with a central-difference Jacobian.

Kept small on purpose: every fit in the package has at most a handful of
parameters, and the step history is exposed for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize


class FitError(RuntimeError):
    """A fit could not be carried out or did not produce a usable result."""


@dataclass
class LeastSquaresResult:
    x: np.ndarray
    cost: float
    residuals: np.ndarray
    jacobian: np.ndarray
    iterations: int
    nfev: int
    converged: bool
    message: str
    gradient_norm: float
    initial_gradient_norm: float
    cost_history: list = field(default_factory=list)
    method: str = "lm"

    def covariance(self) -> np.ndarray:
        """Parameter covariance scaled by the residual variance."""
        m, n = self.jacobian.shape
        dof = max(m - n, 1)
        s2 = 2.0 * self.cost / dof
        jtj = self.jacobian.T @ self.jacobian
        return np.linalg.pinv(jtj) * s2

    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance()), 0.0, None))


def numeric_jacobian(fun, x, r0=None, rel_step=1e-6):
    """Central-difference Jacobian with steps ``rel_step * max(|x_i|, 1)``."""
    x = np.asarray(x, dtype=float)
    if r0 is None:
        r0 = fun(x)
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (fun(xp) - fun(xm)) / (2 * h)
    return jac


def levenberg_marquardt(
    fun,
    x0,
    *,
    max_iterations: int = 200,
    ftol: float = 1e-12,
    gtol: float = 1e-14,
    rel_step: float = 1e-6,
    fallback: bool = True,
) -> LeastSquaresResult:
    """Minimize ``0.5 * sum(fun(x)**2)``.

    Terminates when an accepted step changes the objective by less than
    ``ftol`` relative, the gradient falls below ``gtol`` relative to its initial
    norm, or ``max_iterations`` is reached. A non-finite Jacobian switches to
    a Nelder-Mead search when ``fallback`` is set.
    """
    x = np.array(x0, dtype=float)
    r = np.asarray(fun(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise FitError("residuals are not finite at the initial guess")
    cost = 0.5 * float(r @ r)
    nfev = 1
    history = [cost]
    mu = 1e-3
    g0 = None
    message = "maximum iterations reached"
    converged = False
    jac = np.zeros((r.size, x.size))
    gnorm = np.inf

    it = 0
    while it < max_iterations:
        it += 1
        jac = numeric_jacobian(fun, x, r, rel_step)
        nfev += 2 * x.size
        if not np.all(np.isfinite(jac)):
            if fallback:
                return _nelder_mead(fun, x, max_iterations, ftol, nfev)
            raise FitError("Jacobian is not finite")
        grad = jac.T @ r
        gnorm = float(np.linalg.norm(grad))
        if g0 is None:
            g0 = gnorm
        if cost == 0.0 or gnorm <= gtol * max(g0, np.finfo(float).tiny):
            converged, message = True, "gradient below tolerance"
            break
        jtj = jac.T @ jac
        scale = np.maximum(np.diag(jtj), 1e-30)
        accepted = False
        while mu < 1e20:
            try:
                step = np.linalg.solve(jtj + mu * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            x_new = x + step
            r_new = np.asarray(fun(x_new), dtype=float)
            nfev += 1
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new < cost:
                accepted = True
                break
            mu *= 4.0
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        rel_change = (cost - cost_new) / cost
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        mu = max(mu / 5.0, 1e-12)
        if rel_change < ftol:
            converged, message = True, "relative objective change below tolerance"
            break
    else:
        jac = numeric_jacobian(fun, x, r, rel_step)
        gnorm = float(np.linalg.norm(jac.T @ r))

    if converged and message != "gradient below tolerance":
        jac = numeric_jacobian(fun, x, r, rel_step)
        gnorm = float(np.linalg.norm(jac.T @ r))
    return LeastSquaresResult(
        x=x,
        cost=cost,
        residuals=r,
        jacobian=jac,
        iterations=it,
        nfev=nfev,
        converged=converged,
        message=message,
        gradient_norm=gnorm,
        initial_gradient_norm=g0 if g0 is not None else gnorm,
        cost_history=history,
    )


def _nelder_mead(fun, x, max_iterations, ftol, nfev):
    res = minimize(
        lambda p: 0.5 * float(np.sum(np.asarray(fun(p)) ** 2)),
        x,
        method="Nelder-Mead",
        options={"maxiter": max_iterations * 50, "xatol": 1e-12, "fatol": ftol},
    )
    r = np.asarray(fun(res.x), dtype=float)
    jac = numeric_jacobian(fun, res.x, r)
    finite = np.all(np.isfinite(jac)) and np.all(np.isfinite(r))
    return LeastSquaresResult(
        x=res.x,
        cost=float(res.fun),
        residuals=r,
        jacobian=jac,
        iterations=int(res.nit),
        nfev=nfev + int(res.nfev),
        converged=bool(res.success),
        message="nelder-mead: " + str(res.message),
        gradient_norm=float(np.linalg.norm(jac.T @ r)) if finite else np.nan,
        initial_gradient_norm=np.nan,
        method="nelder-mead",
    )
