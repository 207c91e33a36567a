"""Matrix-free normal operator, Jacobi-preconditioned CG and diagonal scaling.

The operator is ``J^T J + diag(damping)`` where ``J`` is the Jacobian of a
residual model (a ContextSet or any object with ``linearize(p)``) and the
damping is the effective proximal weight ``lambda_global * lam * M``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidDiag, NonFiniteBreakdown, ShapeError

M_FLOOR = 1e-8


def scale_vector(scale, n):
    """Resolve ``scale`` (None, DiagScaler or array) to a length-n vector M."""
    if scale is None:
        return np.ones(n)
    if isinstance(scale, DiagScaler):
        return scale.M if scale.initialized else np.ones(n)
    m = np.asarray(scale, dtype=np.float64)
    if m.shape != (n,):
        raise ShapeError(f"scale has shape {m.shape}, expected ({n},)")
    return m


def effective_damping(lam, scale=None, lambda_global=1.0):
    lam = np.asarray(lam, dtype=np.float64)
    return lambda_global * (lam * scale_vector(scale, lam.size))


class NormalOperator:
    """``w -> J^T J w + damping * w`` at base point ``p``; never forms ``J``."""

    def __init__(self, p, ctx, damping, lin=None):
        self.p = np.asarray(p, dtype=np.float64)
        self.ctx = ctx
        self.lin = lin if lin is not None else ctx.linearize(self.p)
        self.n = self.p.size
        d = np.asarray(damping, dtype=np.float64)
        if d.shape != (self.n,):
            raise ShapeError(f"damping has shape {d.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise ValueError("damping must be finite and strictly positive")
        self.damping = d
        self._jtj_diag = None

    @property
    def shape(self):
        return (self.n, self.n)

    def apply(self, w):
        w = np.asarray(w, dtype=np.float64)
        if w.shape[0] != self.n:
            raise ShapeError(f"vector has {w.shape[0]} rows, expected {self.n}")
        d = self.damping if w.ndim == 1 else self.damping[:, None]
        return self.lin.vjp(self.lin.jvp(w)) + d * w

    __matmul__ = apply

    def jtj_diagonal(self):
        if self._jtj_diag is None:
            self._jtj_diag = jtj_diag(self.lin)
        return self._jtj_diag

    def diagonal(self):
        return self.jtj_diagonal() + self.damping


def apply(op: NormalOperator, w):
    return op.apply(w)


def jtj_diag(lin, chunk=256):
    n = lin.n_params
    out = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        basis = np.zeros((n, stop - start))
        basis[np.arange(start, stop), np.arange(stop - start)] = 1.0
        jw = lin.jvp(basis)
        out[start:stop] = np.einsum("mk,mk->k", jw, jw)
    return out


def exact_diag(p, ctx):
    """diag(J^T J) from one JVP per unit vector."""
    return jtj_diag(ctx.linearize(np.asarray(p, dtype=np.float64)))


@dataclass(frozen=True)
class DiagScaler:
    """Moving average M of diag(J^T J) used to scale the proximal weights."""

    M: np.ndarray | None = field(default=None, repr=False)
    decay: float = 0.9
    initialized: bool = False

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.M is not None:
            m = np.array(self.M, dtype=np.float64)
            if self.initialized and np.any(m <= 0):
                raise ValueError("M must be positive once initialized")
            m.setflags(write=False)
            object.__setattr__(self, "M", m)

    def to_json(self):
        return {"decay": self.decay, "initialized": self.initialized,
                "M": None if self.M is None else self.M.tolist()}

    @classmethod
    def from_json(cls, doc):
        return cls(None if doc["M"] is None else np.asarray(doc["M"]), doc["decay"], doc["initialized"])


def update_scaler(s: DiagScaler, diag) -> DiagScaler:
    diag = np.asarray(diag, dtype=np.float64)
    if np.any(diag < 0) or not np.all(np.isfinite(diag)):
        raise InvalidDiag("diagonal entries must be finite and non-negative")
    clipped = np.maximum(diag, M_FLOOR)
    if not s.initialized:
        return DiagScaler(clipped, s.decay, True)
    if s.M.shape != diag.shape:
        raise ShapeError("diag shape does not match the scaler")
    return DiagScaler(s.decay * s.M + (1.0 - s.decay) * clipped, s.decay, True)


@dataclass(frozen=True)
class PcgConfig:
    tol: float = 1e-8
    max_iters: int = 500
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if self.tol <= 0 or self.max_iters < 1:
            raise ValueError("need tol > 0 and max_iters >= 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


class PcgResult(NamedTuple):
    v: np.ndarray
    iters: int
    rel_residual: float
    converged: bool


def pcg_solve(op, g, cfg: PcgConfig = PcgConfig(), callback=None) -> PcgResult:
    """Solve ``op v = g`` by preconditioned CG from ``v0 = 0``.

    ``op`` needs ``apply`` and, for the Jacobi preconditioner, ``diagonal``.
    ``callback(k, v)`` is invoked after every iteration. If ``max_iters`` is
    exhausted the iterate with the smallest residual is returned, flagged
    not converged.
    """
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NonFiniteBreakdown("right-hand side is not finite")
    gnorm = np.linalg.norm(g)
    v = np.zeros_like(g)
    if gnorm == 0.0:
        return PcgResult(v, 0, 0.0, True)
    inv_diag = 1.0 / op.diagonal() if cfg.preconditioner == "jacobi" else None

    def precond(r):
        return r * inv_diag if inv_diag is not None else r.copy()

    r = g.copy()
    z = precond(r)
    d = z.copy()
    rz = r @ z
    best_v, best_res = v, gnorm
    iters = 0
    converged = False
    while iters < cfg.max_iters:
        ad = op.apply(d)
        dad = d @ ad
        if not (np.isfinite(dad) and np.isfinite(rz)) or dad <= 0:
            raise NonFiniteBreakdown(f"CG breakdown at iteration {iters}: d^T A d = {dad}")
        step = rz / dad
        v = v + step * d
        r = r - step * ad
        iters += 1
        if callback is not None:
            callback(iters, v)
        rnorm = np.linalg.norm(r)
        if rnorm < best_res:
            best_v, best_res = v, rnorm
        if rnorm <= cfg.tol * gnorm:
            converged = True
            break
        z = precond(r)
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    if not converged:
        v = best_v
    rel = float(np.linalg.norm(op.apply(v) - g) / gnorm)
    return PcgResult(v, iters, rel, converged)
