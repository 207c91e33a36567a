"""Experiment drivers shared by the command line and the acceptance tests.

Two groups live here: the gradient-validation suite (analytic paths against
the oracles) and the trend experiment (two-stage meta-training followed by
the four-way before/after TTO comparison).
"""
from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .gs_core import LAMBDA_MIN, STRIDE, ParamVector
from .implicit import implicit_backward, lam_gradient_sign_check
from .inner_opt import InnerConfig, run_tto
from .linsys import DiagScaler, NormalOperator, PcgConfig, exact_diag, pcg_solve, update_scaler
from .meta import MetaConfig, MetaParams, evaluate, meta_train, outer_loss
from .oracles import (
    QuadraticTask, comparison_rows, dense_jacobian, exact_hessian_implicit, quadratic_closed_form,
    quadratic_implicit_oracle, unrolled_grad,
)
from .renderer import Camera, ContextSet, render
from .tasks import DEFAULT_JITTER, TaskInstance, TaskSpec, base_scene, gen_task, jitter_scene, task_family

TRAIN_SEED_OFFSET = 10_000
INIT_SEED = 123
CONST_LAM = 1.0


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    detail: str = ""

    def row(self):
        return [self.name, f"{self.value:.6g}", f"{self.tol:.3g}", int(self.passed), self.detail]


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _cos(a, b):
    return float(a @ b / max(np.linalg.norm(a) * np.linalg.norm(b), 1e-300))


def _max_check(name, values, tol, detail=""):
    worst = float(np.max(values)) if len(values) else 0.0
    return Check(name, worst, tol, bool(worst < tol), detail)


# -- gradient validation ----------------------------------------------------------

def small_splat_task(seed, num_gaussians=2, size=(4, 4), num_context=2):
    spec = TaskSpec(num_gaussians=num_gaussians, image_size=size, num_context=num_context,
                    num_novel=1, family_seed=0, seed=seed)
    return gen_task(spec)


def check_renderer(seed=0, n_tasks=20, h=1e-5):
    """jvp/vjp against dense central differences on 2-Gaussian 4x4 tasks."""
    rng = np.random.default_rng([seed, 1])
    jac_err, adj_err, rows = [], [], []
    for k in range(n_tasks):
        task = small_splat_task(seed * 1000 + k)
        p = jitter_scene(np.asarray(task.gt_params), DEFAULT_JITTER, rng)
        ctx = task.context
        lin = ctx.linearize(p)
        dense = dense_jacobian(p, ctx, h=h)
        analytic = lin.jvp(np.eye(p.size))
        scale = max(np.max(np.abs(dense)), 1e-300)
        jac_err.append(np.max(np.abs(analytic - dense)) / scale)
        analytic_t = lin.vjp(np.eye(ctx.n_residuals)).T
        jac_err.append(np.max(np.abs(analytic_t - dense)) / scale)
        w = rng.normal(size=p.size)
        u = rng.normal(size=ctx.n_residuals)
        jw, jtu = lin.jvp(w), lin.vjp(u)
        adj_err.append(abs(jw @ u - w @ jtu) / max(np.linalg.norm(jw) * np.linalg.norm(u), 1e-300))
        if k == 0:
            rows += comparison_rows("jvp_task0", analytic @ w, dense @ w)
    return [
        _max_check("renderer_jacobian_vs_fd", jac_err, 1e-4, f"{n_tasks} tasks"),
        _max_check("renderer_adjoint_identity", adj_err, 1e-6, f"{n_tasks} tasks"),
    ], rows


def _random_quadratic_system(rng, n):
    task = QuadraticTask.random(rng, n + int(rng.integers(0, n)), n, cond_scale=rng.uniform(0.5, 3.0))
    damping = 10.0 ** rng.uniform(-3, 1, n)
    return task, damping


def check_pcg(seed=0, n_systems=20, quadratic_only=False):
    """PCG against a dense solve, plus symmetry and positive-definiteness of the operator."""
    rng = np.random.default_rng([seed, 2])
    cfg = PcgConfig(tol=1e-12, max_iters=2000)
    sol_err, sym_err, min_eig, stalled = [], [], [], 0
    for k in range(n_systems):
        if quadratic_only or k % 2 == 0:
            task, damping = _random_quadratic_system(rng, int(rng.integers(5, 40)))
            p = rng.normal(size=task.n_params)
        else:
            task = small_splat_task(seed * 1000 + k, size=(6, 6)).context
            p = np.asarray(small_splat_task(seed * 1000 + k, size=(6, 6)).gt_params)
            damping = 10.0 ** rng.uniform(-4, -1, p.size)
        op = NormalOperator(p, task, damping)
        dense = op.apply(np.eye(op.n))
        g = rng.normal(size=op.n)
        res = pcg_solve(op, g, cfg)
        stalled += int(not res.converged)
        sol_err.append(_rel(res.v, np.linalg.solve(dense, g)))
        sym_err.append(np.max(np.abs(dense - dense.T)) / np.max(np.abs(dense)))
        min_eig.append(np.linalg.eigvalsh(0.5 * (dense + dense.T))[0])
    checks = [
        _max_check("pcg_vs_dense_solve", sol_err, 1e-6, f"{n_systems} systems, {stalled} stalled"),
        _max_check("normal_operator_symmetry", sym_err, 1e-12),
        Check("normal_operator_min_eigenvalue", float(np.min(min_eig)), 0.0, bool(np.min(min_eig) > 0)),
    ]
    if stalled:
        checks.append(Check("pcg_within_max_iters", float(stalled), 0.0, False))
    return checks, []


def _quadratic_outer(rng, n):
    c = rng.normal(size=(n + 2, n)) / np.sqrt(n)
    d = rng.normal(size=n + 2)

    def outer(p):
        r = c @ p - d
        return 0.5 * float(r @ r), c.T @ r
    return outer


def check_quadratic_implicit(seed=0, n_tasks=50):
    """grad_init and grad_lam against differentiation of the closed form."""
    rng = np.random.default_rng([seed, 3])
    cfg = PcgConfig(tol=1e-13, max_iters=2000)
    err_init, err_lam, rows = [], [], []
    for k in range(n_tasks):
        n = int(rng.integers(3, 25))
        task = QuadraticTask.random(rng, int(rng.integers(n // 2 + 1, 2 * n)), n, rng.uniform(0.5, 2.0))
        p0 = rng.normal(size=n)
        lam = 10.0 ** rng.uniform(-2, 1, n)
        scale = 10.0 ** rng.uniform(-1, 1, n)
        lam_global = float(rng.uniform(0.5, 2.0))
        outer = _quadratic_outer(rng, n)
        p_star, o_init, o_lam = quadratic_implicit_oracle(task, p0, lam, lambda p: outer(p)[1], scale, lam_global)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = implicit_backward(p_star, p0, lam, scale, task, outer(p_star)[1], cfg, lambda_global=lam_global)
        err_init.append(_rel(res.grad_init, o_init))
        err_lam.append(_rel(res.grad_lam, o_lam))
        if k == 0:
            rows += comparison_rows("quad_grad_init", res.grad_init, o_init)
            rows += comparison_rows("quad_grad_lam", res.grad_lam, o_lam)
    return [
        _max_check("quadratic_grad_init", err_init, 1e-6, f"{n_tasks} tasks"),
        _max_check("quadratic_grad_lam", err_lam, 1e-6, f"{n_tasks} tasks"),
    ], rows


def check_lambda_extremes(seed=0, n_tasks=5, quadratic_only=False):
    """Strong prior passes the outer gradient through; weak prior makes it vanish."""
    rng = np.random.default_rng([seed, 4])
    cfg = PcgConfig(tol=1e-12, max_iters=2000)
    strong, weak = [], []
    for _ in range(n_tasks):
        n = int(rng.integers(4, 20))
        q, _ = np.linalg.qr(rng.normal(size=(n + 3, n)))  # orthonormal columns: J^T J = I
        task = QuadraticTask(q * rng.uniform(0.8, 1.25, n), rng.normal(size=n + 3))
        p0 = rng.normal(size=n)
        outer = _quadratic_outer(rng, n)
        for lam_value, bucket in ((1e6, strong), (1e-4, weak)):
            lam = np.full(n, lam_value)
            p_star = quadratic_closed_form(task, p0, lam)
            g = outer(p_star)[1]
            res = implicit_backward(p_star, p0, lam, None, task, g, cfg)
            bucket.append(_rel(res.grad_init, g) if lam_value > 1 else
                          float(np.linalg.norm(res.grad_init) / np.linalg.norm(g)))
    if not quadratic_only:
        for k in range(2):
            task = small_splat_task(seed * 1000 + k, size=(8, 8))
            p0 = np.asarray(task.gt_params) + 0.01 * rng.normal(size=2 * STRIDE)
            lam = np.full(p0.size, 1e6)
            p_star, _ = run_tto(p0, lam, task.context, InnerConfig(steps=5))
            g = outer_loss(p_star, task.novel)[1]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = implicit_backward(p_star, p0, lam, None, task.context, g, cfg)
            strong.append(_rel(res.grad_init, g))
    return [
        _max_check("lambda_strong_limit", strong, 1e-3, "lam_eff = 1e6"),
        _max_check("lambda_weak_limit", weak, 1e-3, "lam_eff = 1e-4, J^T J ~ I"),
    ], []


def check_sign_law(seed=0, n_pairs=1000):
    """sign(grad_lam) == -sign(v * (p* - p0)) entry by entry, exactly."""
    rng = np.random.default_rng([seed, 5])
    mismatches = 0
    total = 0
    for _ in range(n_pairs):
        n = int(rng.integers(2, 8))
        task = QuadraticTask.random(rng, n + 2, n)
        p0 = rng.normal(size=n)
        p_star = p0 + rng.normal(size=n) * (rng.random(n) > 0.1)  # some entries do not move
        lam = 10.0 ** rng.uniform(-3, 2, n)
        scale = 10.0 ** rng.uniform(-2, 2, n)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = implicit_backward(p_star, p0, lam, scale, task, rng.normal(size=n),
                                    lambda_global=float(rng.uniform(0.1, 3.0)))
        expected = -np.sign(res.v * (p_star - p0))
        mismatches += int(np.sum(np.sign(res.grad_lam) != expected))
        mismatches += int(np.sum(lam_gradient_sign_check(res.v, p_star, p0) != expected))
        total += n
    return [Check("lam_gradient_sign_law", float(mismatches), 0.0, mismatches == 0,
                  f"{n_pairs} pairs, {total} entries")], []


def check_lam_fd_quadratic(seed=0, n_tasks=10, h=1e-4):
    """Centered difference over single Lambda entries with the closed-form inner solve."""
    rng = np.random.default_rng([seed, 6])
    errs = []
    for _ in range(n_tasks):
        n = int(rng.integers(3, 10))
        task = QuadraticTask.random(rng, n + 3, n)
        p0 = rng.normal(size=n)
        lam = 10.0 ** rng.uniform(-1, 1, n)
        outer = _quadratic_outer(rng, n)
        p_star = quadratic_closed_form(task, p0, lam)
        res = implicit_backward(p_star, p0, lam, None, task, outer(p_star)[1], PcgConfig(tol=1e-13))
        k = int(rng.integers(n))
        e = np.zeros(n)
        e[k] = h
        fd = (outer(quadratic_closed_form(task, p0, lam + e))[0]
              - outer(quadratic_closed_form(task, p0, lam - e))[0]) / (2 * h)
        errs.append(abs(res.grad_lam[k] - fd) / max(abs(fd), 1e-12))
    return [_max_check("lam_fd_quadratic", errs, 0.05, f"{n_tasks} tasks")], []


# splatting TTO long enough to reach |grad|_inf < 1e-5 on 2-Gaussian 12x12 tasks
STATIONARY_STEPS = 500
STATIONARY_TOL = 1e-5


def splat_check_setup(seed, k, size=(12, 12)):
    """Task k of the splatting gradient checks, its starting point and scaler."""
    task = small_splat_task(seed * 1000 + k, size=size)
    p0 = base_scene(2, 0)
    scaler = update_scaler(DiagScaler(), exact_diag(p0, task.context))
    return task, p0, scaler


def check_implicit_vs_unrolled(seed=0, n_tasks=10, steps=STATIONARY_STEPS, break_stationarity=False,
                               pcg_tol=1e-8):
    """Implicit grad_init against finite differences through the full TTO map.

    With ``break_stationarity`` the inner loop is cut to 2 steps and the check
    becomes whether every backward call is flagged untrusted.
    """
    if break_stationarity:
        steps = 2
    cfg = InnerConfig(steps=steps, stationarity_tol=STATIONARY_TOL)
    cos, mag, exact_mag, stat, untrusted, rows = [], [], [], [], 0, []
    for k in range(n_tasks):
        task, p0, scaler = splat_check_setup(seed, k)
        lam = np.full(p0.size, CONST_LAM)
        p_star, report = run_tto(p0, lam, task.context, cfg, scale=scaler)
        g = outer_loss(p_star, task.novel)[1]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = implicit_backward(p_star, p0, lam, scaler, task.context, g, PcgConfig(tol=pcg_tol),
                                    stationarity_tol=STATIONARY_TOL)
        untrusted += int(not res.trusted)
        stat.append(report.final_stationarity)
        if break_stationarity:
            continue
        oracle = unrolled_grad(p0, lam, task.context, cfg, lambda p: outer_loss(p, task.novel), scale=scaler)
        cos.append(_cos(res.grad_init, oracle))
        mag.append(abs(np.linalg.norm(res.grad_init) / np.linalg.norm(oracle) - 1.0))
        exact = exact_hessian_implicit(p_star, p0, lam, task.context, g, scale=scaler)
        exact_mag.append(abs(np.linalg.norm(exact) / np.linalg.norm(oracle) - 1.0))
        if k == 0:
            rows += comparison_rows("splat_grad_init", res.grad_init, oracle)
    if break_stationarity:
        rate = untrusted / n_tasks
        return [Check("untrusted_rate_when_broken", rate, 0.0, rate > 0, f"{steps} inner steps")], rows
    return [
        _max_check("splat_stationarity", stat, STATIONARY_TOL, f"{steps} inner steps"),
        Check("splat_implicit_unrolled_cosine", float(np.min(cos)), 0.99, bool(np.min(cos) > 0.99),
              f"{n_tasks} tasks"),
        _max_check("splat_implicit_unrolled_magnitude", mag, 0.05, f"{n_tasks} tasks"),
        # same comparison with the residual-curvature term kept; separates Gauss-Newton error from bugs
        _max_check("splat_exact_hessian_unrolled_magnitude", exact_mag, 0.05, "diagnostic, dense Hessian"),
        Check("untrusted_rate_at_stationarity", untrusted / n_tasks, 0.0, untrusted == 0),
    ], rows


def check_lam_fd_splat(seed=0, n_entries=3, h=1e-4):
    """Centered difference over single Lambda entries, rerunning TTO each time."""
    cfg = InnerConfig(steps=STATIONARY_STEPS, stationarity_tol=STATIONARY_TOL)
    task, p0, scaler = splat_check_setup(seed, 0)
    lam = np.full(p0.size, CONST_LAM)

    def total(lam_vec):
        return outer_loss(run_tto(p0, lam_vec, task.context, cfg, scale=scaler)[0], task.novel)[0]

    p_star, _ = run_tto(p0, lam, task.context, cfg, scale=scaler)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = implicit_backward(p_star, p0, lam, scaler, task.context, outer_loss(p_star, task.novel)[1])
    # probe the entries with the largest analytic gradient, where relative error is meaningful
    errs = []
    for k in np.argsort(-np.abs(res.grad_lam))[:n_entries]:
        e = np.zeros(p0.size)
        e[k] = h
        fd = (total(lam + e) - total(lam - e)) / (2 * h)
        errs.append(abs(res.grad_lam[k] - fd) / max(abs(fd), 1e-300))
    return [_max_check("lam_fd_splat", errs, 0.15, f"{n_entries} entries")], []


def gradcheck_suite(seed=0, quadratic_only=False, break_stationarity=False, pcg_tol=None, full=False):
    """Run the oracle checks; returns (checks, comparison_rows).

    The default sizes keep the suite around a minute; ``full`` uses the
    acceptance-test counts.
    """
    checks, rows = [], []

    def add(result):
        checks.extend(result[0])
        rows.extend(result[1])

    add(check_pcg(seed, 20 if full else 6, quadratic_only))
    add(check_quadratic_implicit(seed, 50 if full else 10))
    add(check_lambda_extremes(seed, quadratic_only=quadratic_only))
    add(check_sign_law(seed, 1000 if full else 200))
    add(check_lam_fd_quadratic(seed))
    if not quadratic_only:
        add(check_renderer(seed, 20 if full else 4))
        add(check_implicit_vs_unrolled(seed, 10 if full else 1, break_stationarity=break_stationarity,
                                       pcg_tol=1e-8 if pcg_tol is None else pcg_tol))
        if not break_stationarity:
            add(check_lam_fd_splat(seed))
    return checks, rows


def write_checks_csv(path, checks):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["check", "value", "tolerance", "passed", "detail"])
        for c in checks:
            w.writerow(c.row())


# -- trend experiment -------------------------------------------------------------

@dataclass(frozen=True)
class TrendConfig:
    spec: TaskSpec = field(default_factory=lambda: TaskSpec(exposure_corruption=0.15))
    n_train: int = 64
    n_eval: int = 30
    stage1_steps: int = 60
    stage2_steps: int = 40
    batch: int = 4
    outer_lr: float = 1.0
    lam_lr: float = 3000.0
    lambda_proxy: float = 0.1
    tto_steps: int = 50
    lambda_global: float = 1.0
    pcg_tol: float = 1e-8
    seed: int = 0

    @property
    def inner(self) -> InnerConfig:
        return InnerConfig(steps=self.tto_steps, lambda_global=self.lambda_global)

    @property
    def meta(self) -> MetaConfig:
        return MetaConfig(self.stage1_steps, self.stage2_steps, self.outer_lr, self.lam_lr,
                          self.lambda_proxy, self.batch, self.seed, self.inner, PcgConfig(tol=self.pcg_tol))


def train_seeds(n):
    return range(TRAIN_SEED_OFFSET, TRAIN_SEED_OFFSET + n)


def eval_seeds(n):
    return range(n)


def initial_guess(spec: TaskSpec) -> np.ndarray:
    """A rough shared starting point: the family's base scene, perturbed once."""
    base = base_scene(spec.num_gaussians, spec.family_seed)
    return jitter_scene(base, DEFAULT_JITTER, np.random.default_rng([spec.family_seed, INIT_SEED]))


def train_two_stage(cfg: TrendConfig, log=None):
    """Stage 1 gives the zero-shot checkpoint; stage 2 continues from it.

    Returns (zero_shot, meta, history).
    """
    tasks = task_family(cfg.spec, train_seeds(cfg.n_train))
    mp = MetaParams.initial(initial_guess(cfg.spec), CONST_LAM)
    stage1 = replace(cfg.meta, stage2_steps=0)
    zero_shot, h1 = meta_train(mp, tasks, stage1, log=log)
    stage2 = replace(cfg.meta, stage1_steps=0, seed=cfg.seed + 1)
    meta, h2 = meta_train(zero_shot, tasks, stage2, log=log)
    return zero_shot, meta, h1 + h2


REPORT_CONFIGS = ("zero_shot", "meta", "meta_learned_lam", "meta_lam_min")
REPORT_LABELS = {
    "zero_shot": "zero-shot init",
    "meta": "meta init",
    "meta_learned_lam": "meta init + learned Λ",
    "meta_lam_min": "meta init + Λ≡Λ_min",
}


def report_rows(zero_shot: MetaParams, meta: MetaParams, tasks, inner_cfg: InnerConfig, task_ids=None):
    """EvalRows for the four configurations on the same tasks.

    The zero-shot init runs plain TTO (Λ ≡ Λ_min); "meta" keeps the constant
    starting Λ, isolating the effect of learning it.
    """
    n = meta.theta0.size
    lam_min = np.full(n, LAMBDA_MIN)
    return {
        "zero_shot": evaluate(zero_shot, tasks, inner_cfg, lam=lam_min, task_ids=task_ids),
        "meta": evaluate(meta, tasks, inner_cfg, lam=np.full(n, CONST_LAM), task_ids=task_ids),
        "meta_learned_lam": evaluate(meta, tasks, inner_cfg, task_ids=task_ids),
        "meta_lam_min": evaluate(meta, tasks, inner_cfg, lam=lam_min, task_ids=task_ids),
    }


def summarize(rows):
    before = float(np.mean([r.psnr_before for r in rows]))
    after = float(np.mean([r.psnr_after for r in rows]))
    return before, after, after - before


def write_report_csv(path, table):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["config", "task_id", "psnr_before", "psnr_after", "delta"])
        for name in REPORT_CONFIGS:
            for r in table[name]:
                w.writerow([name, r.task_id, f"{r.psnr_before:.6f}", f"{r.psnr_after:.6f}", f"{r.delta:.6f}"])


def report_markdown(table, title="Novel-view PSNR before and after TTO") -> str:
    lines = [f"# {title}", "", f"{len(table['meta'])} held-out tasks, mean over tasks.", "",
             "| configuration | PSNR before | PSNR after | Δ |", "|---|---:|---:|---:|"]
    for name in REPORT_CONFIGS:
        b, a, d = summarize(table[name])
        lines.append(f"| {REPORT_LABELS[name]} | {b:.3f} | {a:.3f} | {d:+.3f} |")
    return "\n".join(lines) + "\n"


def run_trend_experiment(cfg: TrendConfig = TrendConfig(), log=None):
    """Train, then evaluate the four configurations on held-out tasks."""
    t0 = time.perf_counter()
    zero_shot, meta, history = train_two_stage(cfg, log=log)
    held_out = task_family(cfg.spec, eval_seeds(cfg.n_eval))
    table = report_rows(zero_shot, meta, held_out, cfg.inner, task_ids=list(eval_seeds(cfg.n_eval)))
    return {"zero_shot": zero_shot, "meta": meta, "history": history, "table": table,
            "seconds": time.perf_counter() - t0}


# -- where learned Λ ends up ------------------------------------------------------

LOC_SHARED = 3
LOC_SINGLE = 3


def _overlap_scene(rng):
    """Three Gaussians seen by both context cameras, three seen by one only."""
    n = LOC_SHARED + LOC_SINGLE
    b = np.zeros((n, STRIDE))
    b[:LOC_SHARED, 0] = rng.uniform(-0.6, -0.2, LOC_SHARED)
    b[LOC_SHARED:, 0] = rng.uniform(0.55, 0.75, LOC_SINGLE)
    b[:, 1] = rng.uniform(-0.4, 0.4, n)
    b[:, 2] = rng.uniform(-0.3, 0.3, n)
    b[:, 3:6] = np.log(rng.uniform(0.08, 0.15, (n, 3)))
    q = rng.normal(size=(n, 4))
    b[:, 6:10] = q / np.linalg.norm(q, axis=1, keepdims=True)
    b[:, 10] = rng.uniform(1.0, 2.5, n)
    b[:, 11:14] = rng.normal(0.0, 1.2, (n, 3))
    return b.reshape(-1)


def _overlap_cameras(rng, size=16):
    f = 1.4 * size

    def cam(eye, target):
        return Camera.look_at(np.asarray(eye) + rng.normal(0.0, 0.02, 3), target, f, size, size)

    context = [cam([0.3, -0.5, -3.0], [0.1, 0, 0]), cam([-1.4, -0.5, -2.8], [-1.1, 0, 0])]
    novel = [cam([x, -0.3, -3.0], [0, 0, 0]) for x in (-0.4, 0.6)]
    return context, novel


def overlap_family(family_seed, n_tasks=6, size=16):
    """Tasks whose second context camera never sees the last three Gaussians.

    Returns (base_scene, tasks).
    """
    base = _overlap_scene(np.random.default_rng([family_seed, 1]))
    spec = TaskSpec(num_gaussians=LOC_SHARED + LOC_SINGLE, image_size=(size, size), family_seed=family_seed)
    tasks = []
    for s in range(n_tasks):
        rng = np.random.default_rng([family_seed, s, 2])
        gt = jitter_scene(base, DEFAULT_JITTER, rng)
        ctx, nov = _overlap_cameras(rng, size)
        tasks.append(TaskInstance(
            ParamVector(gt),
            ContextSet(tuple((c, render(gt, c)) for c in ctx)),
            ContextSet(tuple((c, render(gt, c)) for c in nov)),
            replace(spec, seed=s),
        ))
    return base, tasks


def lam_localization(family_seed, steps=24, n_tasks=6, batch=3, lam_lr=3000.0):
    """Mean learned Λ on the means of shared vs single-view Gaussians.

    Only Λ and theta0 are trained (stage 2 from a jittered base scene).
    Returns (shared, single).
    """
    base, tasks = overlap_family(family_seed, n_tasks)
    init = jitter_scene(base, DEFAULT_JITTER, np.random.default_rng([family_seed, 9]))
    cfg = MetaConfig(stage1_steps=0, stage2_steps=steps, batch=batch, lam_lr=lam_lr, seed=family_seed)
    mp, _ = meta_train(MetaParams.initial(init, CONST_LAM), tasks, cfg)
    lam = mp.lam.reshape(-1, STRIDE)[:, 0:3]
    return float(lam[:LOC_SHARED].mean()), float(lam[LOC_SHARED:].mean())
