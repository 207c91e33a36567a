"""How far the Gauss-Newton implicit gradient sits from true unrolling.

For one 12x12 task the script compares three gradients of the novel-view
loss with respect to the initialization:

  implicit     J^T J + diag(lam) system, solved by PCG (what training uses)
  exact        same formula with the dense full Hessian (oracle only)
  unrolled     reverse pass through all 500 inner steps

The implicit one drops the residual-curvature term, so its distance from
the unrolled gradient grows with the residual left at the optimum.
"""
import warnings

import numpy as np

from iftsplat.implicit import implicit_backward
from iftsplat.inner_opt import InnerConfig, run_tto
from iftsplat.meta import outer_loss
from iftsplat.oracles import exact_hessian_implicit, unrolled_grad
from iftsplat.harness import STATIONARY_STEPS, STATIONARY_TOL, splat_check_setup


def compare(a, b):
    cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return f"cosine {cos:.5f}, norm ratio {np.linalg.norm(a) / np.linalg.norm(b):.4f}"


cfg = InnerConfig(steps=STATIONARY_STEPS, stationarity_tol=STATIONARY_TOL)
for k in range(3):
    task, p0, scaler = splat_check_setup(0, k)
    lam = np.ones(p0.size)
    p_star, report = run_tto(p0, lam, task.context, cfg, scale=scaler)
    g = outer_loss(p_star, task.novel)[1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        implicit = implicit_backward(p_star, p0, lam, scaler, task.context, g).grad_init
    exact = exact_hessian_implicit(p_star, p0, lam, task.context, g, scale=scaler)
    unrolled = unrolled_grad(p0, lam, task.context, cfg, lambda p: outer_loss(p, task.novel), scale=scaler,
                             method="reverse")
    r = task.context.linearize(p_star).residual
    print(f"task {k}: stationarity {report.final_stationarity:.1e}, residual^2 {r @ r:.2e}")
    print(f"  implicit vs unrolled: {compare(implicit, unrolled)}")
    print(f"  exact    vs unrolled: {compare(exact, unrolled)}")
