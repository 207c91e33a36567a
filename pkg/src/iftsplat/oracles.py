"""Independent ground truth for every analytic derivative in the package.

Nothing here calls the renderer's JVP/VJP: finite differences only use
forward residuals, the quadratic task is solved by dense factorization, and
unrolled gradients differentiate the whole inner trajectory.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NonFiniteEval, ShapeError, SingularSystem, TooLarge
from .inner_opt import InnerConfig, descent_step, run_tto
from .linsys import effective_damping, scale_vector


def fd_grad(f, x, h=1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        fp, fm = f(x + e), f(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEval(f"non-finite evaluation at coordinate {k}")
        g[k] = (fp - fm) / (2 * h)
    return g


def dense_jacobian(p, ctx, h=1e-5, max_entries=10_000) -> np.ndarray:
    """Column k = (r(p + h e_k) - r(p - h e_k)) / 2h."""
    p = np.asarray(p, dtype=np.float64)
    m = ctx.n_residuals
    if m * p.size > max_entries:
        raise TooLarge(f"dense Jacobian {m}x{p.size} exceeds {max_entries} entries")
    cols = []
    for k in range(p.size):
        e = np.zeros_like(p)
        e[k] = h
        cols.append((ctx.residual(p + e) - ctx.residual(p - e)) / (2 * h))
    return np.stack(cols, axis=1)


class _LinearLin:
    def __init__(self, task, p):
        self.task = task
        self.n_params = task.n_params
        self.n_residuals = task.n_residuals
        self.residual = task.A @ p - task.b

    def jvp(self, w):
        return self.task.A @ w

    def vjp(self, u):
        return self.task.A.T @ u


@dataclass(frozen=True)
class QuadraticTask:
    """Linear residual model r(p) = A p - b; Gauss-Newton is exact for it."""

    A: np.ndarray
    b: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        a = np.array(self.A, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        if a.ndim != 2 or a.shape[0] != b.size:
            raise ShapeError("A must be m x n with b of length m")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "b", b)

    @property
    def n_params(self):
        return self.A.shape[1]

    @property
    def n_residuals(self):
        return self.A.shape[0]

    def residual(self, p):
        return self.A @ np.asarray(p, dtype=np.float64) - self.b

    def linearize(self, p):
        return _LinearLin(self, np.asarray(p, dtype=np.float64))

    def gram(self):
        if "gram" not in self._cache:
            self._cache["gram"] = self.A.T @ self.A
        return self._cache["gram"]

    @classmethod
    def random(cls, rng, m, n, cond_scale=1.0):
        return cls(rng.normal(size=(m, n)) * cond_scale / np.sqrt(m), rng.normal(size=m))


def quadratic_closed_form(task: QuadraticTask, p0, lam_eff) -> np.ndarray:
    """p* = (A^T A + diag(lam_eff))^-1 (A^T b + lam_eff * p0) by Cholesky."""
    p0 = np.asarray(p0, dtype=np.float64)
    lam_eff = np.asarray(lam_eff, dtype=np.float64)
    h = task.gram() + np.diag(lam_eff)
    try:
        c = scipy.linalg.cho_factor(h)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return scipy.linalg.cho_solve(c, task.A.T @ task.b + lam_eff * p0)


def quadratic_implicit_oracle(task: QuadraticTask, p0, lam, outer_grad_fn, scale=None, lambda_global=1.0):
    """Gradients of L_outer(p*(p0, lam)) by differentiating the closed form.

    With H = A^T A + diag(lam_eff): dp*/dp0 = H^-1 diag(lam_eff) and
    dp*/dlam_k = -H^-1 e_k (p*_k - p0_k) * dlam_eff_k/dlam_k. Both Jacobians
    are formed densely, column by column, independent of any CG path.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    dlam = lambda_global * scale_vector(scale, lam.size)
    lam_eff = dlam * lam
    h = task.gram() + np.diag(lam_eff)
    hinv = np.linalg.inv(h)
    p_star = quadratic_closed_form(task, p0, lam_eff)
    g = outer_grad_fn(p_star)
    dstar_dp0 = hinv @ np.diag(lam_eff)
    dstar_dlam = -hinv * ((p_star - p0) * dlam)[None, :]
    return p_star, dstar_dp0.T @ g, dstar_dlam.T @ g


def unrolled_grad(p0, lam, ctx, cfg: InnerConfig, outer, scale=None, method="fd", h=1e-5,
                  max_params=512):
    """d outer(run_tto(p0)) / d p0 through every inner step.

    ``outer(p)`` returns ``(value, grad)``. ``method="fd"`` reruns the full
    inner optimization for each perturbed coordinate. ``method="forward"``
    propagates the exact tangent of each GD step and needs a residual model
    with a constant Jacobian (``QuadraticTask``); the learning-rate multipliers
    of the reference run are replayed so both methods see the same map.
    ``method="reverse"`` also replays those multipliers and backpropagates
    through every step of any residual model, using full-Hessian products
    from central differences of the photometric gradient; unlike ``"fd"`` it
    cannot be thrown off by accept/reject decisions flipping under a
    perturbation.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    if p0.size > max_params:
        raise TooLarge(f"{p0.size} parameters exceed the unrolling guard of {max_params}")

    if method == "fd":
        def total(x):
            p_star, _ = run_tto(x, lam, ctx, cfg, scale=scale)
            return outer(p_star)[0]
        return fd_grad(total, p0, h)

    if method == "reverse":
        return _unrolled_reverse(p0, lam, ctx, cfg, outer, scale, h)
    if method != "forward":
        raise ValueError(f"unknown method {method!r}")
    if not isinstance(ctx, QuadraticTask):
        raise TypeError("forward-mode unrolling needs a QuadraticTask")
    p_star, report = run_tto(p0, lam, ctx, cfg, scale=scale)
    lam_eff = effective_damping(lam, scale, cfg.lambda_global)
    lr = cfg.lr_vector(p0.size)
    hess = ctx.gram() + np.diag(lam_eff)
    gram = ctx.gram()
    # D_k = d p_k / d p0, differentiating the exact update rule of run_tto
    d = np.eye(p0.size)
    for s in report.step_scales:
        if s == 0.0:
            continue
        step = s * lr
        if cfg.update == "proximal":
            d = (d - step[:, None] * (gram @ d) + np.diag(step * lam_eff)) / (1.0 + step * lam_eff)[:, None]
        else:
            d = d - step[:, None] * (hess @ d - np.diag(lam_eff))
    return d.T @ outer(p_star)[1]


def _unrolled_reverse(p0, lam, ctx, cfg, outer, scale, h):
    if cfg.update != "proximal":
        raise ValueError("reverse unrolling follows the proximal update")
    _, report = run_tto(p0, lam, ctx, cfg, scale=scale)
    lam_eff = effective_damping(lam, scale, cfg.lambda_global)
    lr = cfg.lr_vector(p0.size)

    def photo(p):
        lin = ctx.linearize(p)
        return lin.vjp(lin.residual)

    # replay the accepted steps to recover the trajectory
    traj = []
    p = p0.copy()
    for s in report.step_scales:
        if s == 0.0:
            continue
        traj.append((p, s * lr))
        p = descent_step(p, p0, photo(p), lam_eff, s * lr)

    a = outer(p)[1]
    grad = np.zeros_like(p0)
    for p, step in reversed(traj):
        # p' = (p - step*g(p) + step*lam*p0) / (1 + step*lam)
        b = a / (1.0 + step * lam_eff)
        grad += step * lam_eff * b
        w = step * b
        eps = h * (1.0 + np.linalg.norm(p)) / max(np.linalg.norm(w), 1e-300)
        hw = (photo(p + eps * w) - photo(p - eps * w)) / (2 * eps)
        a = b - hw
    return grad + a


def exact_hessian_implicit(p_star, p0, lam, ctx, outer_grad, scale=None, lambda_global=1.0, h=1e-6):
    """grad_init with the full photometric Hessian instead of J^T J.

    The Hessian is assembled densely from central differences of J^T r, so
    it keeps the residual-curvature term that Gauss-Newton drops. Used to
    tell Gauss-Newton error apart from implementation error.
    """
    p_star = np.asarray(p_star, dtype=np.float64)
    if p_star.size > 512:
        raise TooLarge(f"{p_star.size} parameters exceed the dense Hessian guard")
    lam_eff = effective_damping(lam, scale, lambda_global)

    def photo(p):
        lin = ctx.linearize(p)
        return lin.vjp(lin.residual)

    cols = []
    for k in range(p_star.size):
        e = np.zeros(p_star.size)
        e[k] = h
        cols.append((photo(p_star + e) - photo(p_star - e)) / (2 * h))
    hess = np.stack(cols, axis=1)
    hess = 0.5 * (hess + hess.T) + np.diag(lam_eff)
    return lam_eff * np.linalg.solve(hess, np.asarray(outer_grad, dtype=np.float64))


def comparison_rows(name, analytic, oracle):
    """One CSV row per entry: name, analytic, oracle, abs_err, rel_err."""
    analytic = np.atleast_1d(np.asarray(analytic, dtype=np.float64))
    oracle = np.atleast_1d(np.asarray(oracle, dtype=np.float64))
    denom = max(np.max(np.abs(oracle)), 1e-300)
    rows = []
    for i, (a, o) in enumerate(zip(analytic, oracle)):
        rows.append((f"{name}[{i}]", f"{a:.12g}", f"{o:.12g}", f"{abs(a - o):.6g}", f"{abs(a - o) / denom:.6g}"))
    return rows


def write_comparison_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["name", "analytic", "oracle", "abs_err", "rel_err"])
        w.writerows(rows)
