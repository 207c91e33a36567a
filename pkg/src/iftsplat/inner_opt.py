"""Test-time optimization of the uncertainty-weighted proximal objective.

    L_inner(p) = 1/2 |r(p)|^2 + 1/2 (p - p0)^T diag(lam_eff) (p - p0)

with ``lam_eff = lambda_global * lam * M``, minimized by first-order descent
with per-attribute-group learning rates.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLoss, ShapeError
from .gs_core import STRIDE, group_vector
from .linsys import effective_damping

# Sized against diag(J^T J) of the normalized residual on 32x32 two-view
# scenes: roughly 0.3 / (largest curvature in the group).
DEFAULT_LR = {
    "mean": 1.5,
    "log_scale": 40.0,
    "rot": 20.0,
    "opacity": 2000.0,
    "color": 600.0,
}


@dataclass(frozen=True)
class InnerConfig:
    steps: int = 50
    learning_rate: dict | float = field(default_factory=lambda: dict(DEFAULT_LR))
    stationarity_tol: float = 1e-3
    lambda_global: float = 1.0
    max_halvings: int = 5
    increase_slack: float = 0.10
    update: str = "proximal"  # or "gradient"

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        lrs = self.learning_rate.values() if isinstance(self.learning_rate, dict) else [self.learning_rate]
        if any(lr <= 0 for lr in lrs):
            raise ValueError("learning rates must be positive")
        if self.update not in ("proximal", "gradient"):
            raise ValueError(f"unknown update rule {self.update!r}")

    def lr_vector(self, n: int) -> np.ndarray:
        if isinstance(self.learning_rate, dict):
            if n % STRIDE:
                raise ShapeError("per-group learning rates need the Gaussian layout")
            return group_vector(n, self.learning_rate)
        return np.full(n, float(self.learning_rate))


@dataclass
class TtoReport:
    loss_trace: list
    final_stationarity: float
    converged: bool
    step_scales: list  # learning-rate multiplier actually applied per step (0 = rejected)
    aborted: bool = False

    @property
    def halvings(self) -> int:
        return sum(s < 1.0 for s in self.step_scales)

    def csv_rows(self):
        return [(k, f"{v:.17g}") for k, v in enumerate(self.loss_trace)]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "inner_loss"])
            w.writerows(self.csv_rows())


def _check(p, p0, lam):
    p = np.asarray(p, dtype=np.float64)
    p0 = np.asarray(p0, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if not (p.shape == p0.shape == lam.shape) or p.ndim != 1:
        raise ShapeError(f"shape mismatch: p {p.shape}, p0 {p0.shape}, lam {lam.shape}")
    return p, p0, lam


def _loss_from(res, p, p0, lam_eff):
    dp = p - p0
    return 0.5 * float(res @ res) + 0.5 * float(dp @ (lam_eff * dp))


def inner_loss(p, p0, lam, ctx, scale=None, lambda_global=1.0) -> float:
    p, p0, lam = _check(p, p0, lam)
    return _loss_from(ctx.residual(p), p, p0, effective_damping(lam, scale, lambda_global))


def inner_grad(p, p0, lam, ctx, scale=None, lambda_global=1.0, lin=None) -> np.ndarray:
    """J^T r + lam_eff * (p - p0)."""
    p, p0, lam = _check(p, p0, lam)
    lin = lin if lin is not None else ctx.linearize(p)
    return lin.vjp(lin.residual) + effective_damping(lam, scale, lambda_global) * (p - p0)


def descent_step(p, p0, photo_grad, lam_eff, lr):
    """One proximal-gradient step: explicit on the photometric term,
    closed form on the diagonal proximal term. Fixed points satisfy
    ``photo_grad + lam_eff * (p - p0) = 0`` for any positive rate."""
    return (p - lr * photo_grad + (lr * lam_eff) * p0) / (1.0 + lr * lam_eff)


def run_tto(p0, lam, ctx, cfg: InnerConfig = InnerConfig(), scale=None):
    """Descend the inner objective from ``p0`` for ``cfg.steps`` steps.

    ``cfg.update == "gradient"`` takes plain steps ``p - lr * grad``;
    the default ``"proximal"`` treats the proximal term in closed form (see
    :func:`descent_step`), which stays stable when ``lam_eff * lr`` is large.
    A step that raises the loss by more than ``increase_slack`` is retried
    with half the rate, at most ``max_halvings`` times; if it still fails the
    iterate is kept. Returns ``(p_star, report)``.
    """
    p0, _, lam = _check(p0, p0, lam)
    lam_eff = effective_damping(lam, scale, cfg.lambda_global)
    lr = cfg.lr_vector(p0.size)

    p = p0.copy()
    lin = ctx.linearize(p)
    loss = _loss_from(lin.residual, p, p0, lam_eff)
    trace = [loss]
    scales = []
    aborted = False
    if not np.isfinite(loss):
        warnings.warn("initial inner loss is not finite", NonFiniteLoss, stacklevel=2)
        return p, TtoReport([loss] * (cfg.steps + 1), float("inf"), False, [0.0] * cfg.steps, True)

    photo = lin.vjp(lin.residual)
    grad = photo + lam_eff * (p - p0)
    for _ in range(cfg.steps):
        mult = 1.0
        accepted = False
        for _attempt in range(cfg.max_halvings + 1):
            if cfg.update == "proximal":
                trial = descent_step(p, p0, photo, lam_eff, mult * lr)
            else:
                trial = p - (mult * lr) * grad
            trial_lin = ctx.linearize(trial)
            trial_loss = _loss_from(trial_lin.residual, trial, p0, lam_eff)
            if not np.isfinite(trial_loss):
                aborted = True
                break
            if trial_loss <= loss * (1.0 + cfg.increase_slack):
                accepted = True
                break
            mult *= 0.5
        if aborted:
            warnings.warn("inner loss became non-finite; returning last finite iterate", NonFiniteLoss, stacklevel=2)
            break
        if accepted:
            p, lin, loss = trial, trial_lin, trial_loss
            photo = lin.vjp(lin.residual)
            grad = photo + lam_eff * (p - p0)
        else:
            mult = 0.0
        scales.append(mult)
        trace.append(loss)

    stationarity = float(np.max(np.abs(grad))) if grad.size else 0.0
    if aborted:
        trace += [loss] * (cfg.steps + 1 - len(trace))
        scales += [0.0] * (cfg.steps - len(scales))
    converged = (not aborted) and stationarity <= cfg.stationarity_tol
    return p, TtoReport(trace, stationarity, converged, scales, aborted)
