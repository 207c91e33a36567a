"""Gaussian-splatting test-time optimization with implicit meta-gradients."""
from .errors import *  # noqa: F401,F403
from .gs_core import (
    LAMBDA_MIN, STRIDE, GaussianAttrib, ParamVector, RegWeights, RenderableGaussian,
    activate, pack, unpack,
)
from .implicit import BackwardResult, implicit_backward, scalar_backward
from .inner_opt import InnerConfig, TtoReport, descent_step, inner_grad, inner_loss, run_tto
from .linsys import DiagScaler, NormalOperator, PcgConfig, PcgResult, exact_diag, pcg_solve, update_scaler
from .meta import EvalRow, MetaConfig, MetaParams, evaluate, meta_step, meta_train, psnr
from .renderer import Camera, ContextSet, jvp, render, residual, vjp
from .tasks import TaskInstance, TaskSpec, gen_task, load_task, save_task, task_family

__version__ = "0.1.0"
