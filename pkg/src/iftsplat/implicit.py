"""Implicit-function-theorem backward pass through the proximal inner problem.

At a stationary point of the inner objective, with the Gauss-Newton Hessian
``H = J^T J + diag(lam_eff)``, one solve ``H v = dL_outer/dp*`` yields both

    dL/dp0  = lam_eff * v
    dL/dlam = -v * (p* - p0) * lambda_global * M

where the second line is taken w.r.t. the raw weights ``lam`` (the
``lambda_global * M`` factor is the chain through ``lam_eff``).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NotStationary, ShapeError, SolverStalled
from .linsys import NormalOperator, PcgConfig, effective_damping, pcg_solve, scale_vector


@dataclass(frozen=True)
class BackwardResult:
    grad_init: np.ndarray
    grad_lam: np.ndarray
    v: np.ndarray
    solver_iters: int
    solver_residual: float
    solver_converged: bool
    stationarity_at_solve: float
    trusted: bool

    def diagnostics(self) -> dict:
        return {
            "stationarity": self.stationarity_at_solve,
            "solver_iters": self.solver_iters,
            "solver_residual": self.solver_residual,
            "trusted": int(self.trusted),
        }


def implicit_backward(p_star, p0, lam, scaler, ctx, outer_grad, cfg: PcgConfig = PcgConfig(),
                      lambda_global=1.0, stationarity_tol=1e-3) -> BackwardResult:
    p_star = np.asarray(p_star, dtype=np.float64)
    p0 = np.asarray(p0, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    outer_grad = np.asarray(outer_grad, dtype=np.float64)
    if not (p_star.shape == p0.shape == lam.shape == outer_grad.shape):
        raise ShapeError("p_star, p0, lam and outer_grad must share one shape")
    if not np.all(np.isfinite(outer_grad)):
        raise ValueError("outer gradient is not finite")

    m = scale_vector(scaler, lam.size)
    lam_eff = effective_damping(lam, m, lambda_global)
    op = NormalOperator(p_star, ctx, lam_eff)
    lin = op.lin
    stationarity = float(np.max(np.abs(lin.vjp(lin.residual) + lam_eff * (p_star - p0))))
    trusted = stationarity <= stationarity_tol
    if not trusted:
        warnings.warn(f"inner stationarity {stationarity:.3g} above tolerance {stationarity_tol:.3g}",
                      NotStationary, stacklevel=2)

    sol = pcg_solve(op, outer_grad, cfg)
    if not sol.converged:
        warnings.warn(f"PCG hit max_iters={cfg.max_iters} (rel residual {sol.rel_residual:.3g})",
                      SolverStalled, stacklevel=2)
    v = sol.v
    return BackwardResult(
        grad_init=lam_eff * v,
        grad_lam=-(v * (p_star - p0)) * (lambda_global * m),
        v=v,
        solver_iters=sol.iters,
        solver_residual=sol.rel_residual,
        solver_converged=sol.converged,
        stationarity_at_solve=stationarity,
        trusted=trusted,
    )


def scalar_backward(p_star, p0, lambda_scalar, ctx, outer_grad, cfg: PcgConfig = PcgConfig(),
                    stationarity_tol=1e-3):
    """Global-lambda case: solve (J^T J + lambda I) v = g and return lambda * v."""
    n = np.asarray(p0).size
    res = implicit_backward(p_star, p0, np.full(n, float(lambda_scalar)), None, ctx, outer_grad, cfg,
                            stationarity_tol=stationarity_tol)
    return res.grad_init


def lam_gradient_sign_check(v, p_star, p0) -> np.ndarray:
    """Sign of dL/dlam per entry: -1 where the outer direction agrees with the TTO move."""
    v = np.asarray(v, dtype=np.float64)
    delta = np.asarray(p_star, dtype=np.float64) - np.asarray(p0, dtype=np.float64)
    if v.shape != delta.shape:
        raise ShapeError("v and p_star - p0 must share one shape")
    return np.sign(-(v * delta)).astype(int)
