"""Outer loop: meta-learn a shared initialization and uncertainty weights.

The learnable state replaces a feed-forward predictor: ``theta0`` is one
shared parameter vector and ``lam = softplus(lam_raw) + LAMBDA_MIN`` one
shared weight per parameter. Stage 1 trains ``theta0`` on the zero-shot
novel-view loss (inner optimum taken to be the initialization itself);
stage 2 runs TTO on every task and backpropagates through it implicitly.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .gs_core import LAMBDA_MIN, ParamVector, sigmoid
from .implicit import implicit_backward
from .inner_opt import InnerConfig, run_tto
from .linsys import DiagScaler, PcgConfig, jtj_diag, update_scaler
from .parallel import map_tasks
from .renderer import ContextSet, render

PSNR_CAP = 99.0


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class MetaParams:
    theta0: np.ndarray
    lam_raw: np.ndarray
    scaler: DiagScaler = field(default_factory=DiagScaler)

    def __post_init__(self):
        for name in ("theta0", "lam_raw"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.theta0.shape != self.lam_raw.shape:
            raise ValueError("theta0 and lam_raw must have the same length")

    @property
    def lam(self) -> np.ndarray:
        return softplus(self.lam_raw) + LAMBDA_MIN

    @classmethod
    def initial(cls, theta0, lam_value=1.0, decay=0.9):
        theta0 = np.asarray(theta0, dtype=np.float64)
        # values at or below the floor land a hair above it
        raw = np.full(theta0.size, float(softplus_inv(max(lam_value - LAMBDA_MIN, 1e-12))))
        return cls(theta0, raw, DiagScaler(decay=decay))

    def to_json(self) -> dict:
        return {
            "params": ParamVector(self.theta0).to_json(),
            "lam_raw": self.lam_raw.tolist(),
            "scaler": self.scaler.to_json(),
        }

    @classmethod
    def from_json(cls, doc) -> "MetaParams":
        return cls(
            np.asarray(ParamVector.from_json(doc["params"])),
            np.asarray(doc["lam_raw"], dtype=np.float64),
            DiagScaler.from_json(doc["scaler"]),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "MetaParams":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MetaConfig:
    stage1_steps: int = 100
    stage2_steps: int = 100
    outer_lr: float = 1.0        # multiplier on the inner per-group rates for theta0
    lam_lr: float = 3000.0       # rate for lam_raw; its gradient is O(1e-4)
    lambda_proxy: float = 0.1
    batch: int = 4
    seed: int = 0
    inner: InnerConfig = field(default_factory=InnerConfig)
    pcg: PcgConfig = field(default_factory=PcgConfig)
    learn_lam: bool = True

    def __post_init__(self):
        if min(self.stage1_steps, self.stage2_steps) < 0 or self.batch < 1:
            raise ValueError("step counts must be >= 0 and batch >= 1")
        if self.outer_lr <= 0 or self.lam_lr < 0 or self.lambda_proxy < 0:
            raise ValueError("rates must be positive")


@dataclass(frozen=True)
class EvalRow:
    task_id: int
    psnr_before: float
    psnr_after: float

    @property
    def delta(self) -> float:
        return self.psnr_after - self.psnr_before


def mse_loss(p, views: ContextSet):
    """Mean squared error over every pixel/channel of ``views`` and its gradient."""
    lin = views.linearize(p)
    r = lin.residual  # already scaled by 1/sqrt(count), so r.r is the MSE
    return float(r @ r), 2.0 * lin.vjp(r)


def outer_loss(p_star, novel: ContextSet):
    return mse_loss(p_star, novel)


def proxy_loss(p0, ctx_and_novel: ContextSet, lambda_proxy=0.1):
    if lambda_proxy == 0:
        return 0.0, np.zeros(np.asarray(p0).size)
    value, grad = mse_loss(p0, ctx_and_novel)
    return lambda_proxy * value, lambda_proxy * grad


def psnr(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, -10.0 * np.log10(mse)))


def image_psnr(p, views: ContextSet) -> float:
    err = np.concatenate([(render(p, cam) - img).ravel() for cam, img in views.views])
    return psnr(float(np.mean(err**2)))


@dataclass
class StepDiagnostics:
    stage: int
    outer_loss: float
    proxy_loss: float
    grad_norm_init: float
    grad_norm_lam: float
    untrusted: int = 0
    stalled: int = 0
    solver_iters: float = 0.0
    stationarity: float = 0.0


def meta_step(mp: MetaParams, tasks, cfg: MetaConfig, stage: int = 2):
    """One outer update over a batch of tasks; returns (new MetaParams, StepDiagnostics)."""
    theta0 = np.array(mp.theta0)
    n = theta0.size
    lam = mp.lam
    g_theta = np.zeros(n)
    g_lam = np.zeros(n)
    diags = []
    d = StepDiagnostics(stage, 0.0, 0.0, 0.0, 0.0)
    scaler = mp.scaler
    if not scaler.initialized:
        first = [jtj_diag(t.context.linearize(theta0)) for t in tasks]
        scaler = update_scaler(scaler, np.mean(first, axis=0))

    def one(task):
        if stage == 1:
            value, grad = outer_loss(theta0, task.novel)
            return value, grad, None, None, jtj_diag(task.context.linearize(theta0))
        p_star, _ = run_tto(theta0, lam, task.context, cfg.inner, scale=scaler)
        value, grad = outer_loss(p_star, task.novel)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = implicit_backward(p_star, theta0, lam, scaler, task.context, grad, cfg.pcg,
                                    lambda_global=cfg.inner.lambda_global,
                                    stationarity_tol=cfg.inner.stationarity_tol)
        proxy = proxy_loss(theta0, task.supervision, cfg.lambda_proxy)
        return value, None, res, proxy, jtj_diag(task.context.linearize(p_star))

    # reduce in task order so the update does not depend on the worker count
    for value, grad, res, proxy, diag in map_tasks(one, tasks):
        d.outer_loss += value
        diags.append(diag)
        if res is None:
            g_theta += grad
            continue
        g_theta += res.grad_init + proxy[1]
        g_lam += res.grad_lam
        d.proxy_loss += proxy[0]
        d.untrusted += int(not res.trusted)
        d.stalled += int(not res.solver_converged)
        d.solver_iters += res.solver_iters / len(tasks)
        d.stationarity = max(d.stationarity, res.stationarity_at_solve)

    k = len(tasks)
    g_theta /= k
    g_lam /= k
    d.outer_loss /= k
    d.proxy_loss /= k
    g_raw = g_lam * sigmoid(mp.lam_raw)  # d softplus / dx = sigmoid(x)
    d.grad_norm_init = float(np.linalg.norm(g_theta))
    d.grad_norm_lam = float(np.linalg.norm(g_raw))

    new_theta = theta0 - cfg.outer_lr * cfg.inner.lr_vector(n) * g_theta
    new_raw = mp.lam_raw - cfg.lam_lr * g_raw if (stage == 2 and cfg.learn_lam) else mp.lam_raw
    scaler = update_scaler(scaler, np.mean(diags, axis=0))
    return MetaParams(new_theta, new_raw, scaler), d


def meta_train(mp: MetaParams, train_tasks, cfg: MetaConfig, log=None):
    """Two-stage schedule; batches cycle deterministically through ``train_tasks``.

    ``log(step, diagnostics)`` is called after every outer step.
    Returns the final MetaParams and the list of diagnostics.
    """
    rng = np.random.default_rng(cfg.seed)
    history = []
    schedule = [1] * cfg.stage1_steps + [2] * cfg.stage2_steps
    for step, stage in enumerate(schedule):
        idx = rng.choice(len(train_tasks), size=min(cfg.batch, len(train_tasks)), replace=False)
        mp, diag = meta_step(mp, [train_tasks[i] for i in idx], cfg, stage=stage)
        history.append(diag)
        if log is not None:
            log(step, diag)
    return mp, history


def evaluate(mp: MetaParams, tasks, inner_cfg: InnerConfig, lam=None, task_ids=None):
    """PSNR on novel views before and after TTO from ``mp.theta0``.

    ``lam`` overrides the learned weights (e.g. a constant vector).
    """
    lam = mp.lam if lam is None else np.asarray(lam, dtype=np.float64)

    def one(task):
        before = image_psnr(mp.theta0, task.novel)
        p_star, _ = run_tto(mp.theta0, lam, task.context, inner_cfg, scale=mp.scaler)
        return before, image_psnr(p_star, task.novel)

    ids = range(len(tasks)) if task_ids is None else task_ids
    return [EvalRow(int(i), b, a) for i, (b, a) in zip(ids, map_tasks(one, tasks))]


def write_eval_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task_id", "psnr_before", "psnr_after", "delta"])
        for r in rows:
            w.writerow([r.task_id, f"{r.psnr_before:.6f}", f"{r.psnr_after:.6f}", f"{r.delta:.6f}"])


def write_history_csv(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "stage", "outer_loss", "proxy_loss", "grad_norm_init", "grad_norm_lam",
                    "untrusted", "stalled", "solver_iters", "stationarity"])
        for k, h in enumerate(history):
            w.writerow([k, h.stage, f"{h.outer_loss:.10g}", f"{h.proxy_loss:.10g}", f"{h.grad_norm_init:.10g}",
                        f"{h.grad_norm_lam:.10g}", h.untrusted, h.stalled, f"{h.solver_iters:.3f}",
                        f"{h.stationarity:.6g}"])
