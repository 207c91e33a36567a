"""A small version of the trend experiment: train, then report.

Uses fewer training and held-out tasks than the acceptance run so it
finishes in well under a minute. The table compares the zero-shot init,
the meta init with a constant weight, with the learned weights, and with
the weights at their floor.
"""
from dataclasses import replace

import numpy as np

from iftsplat.gs_core import GROUPS, STRIDE
from iftsplat.harness import TrendConfig, report_markdown, run_trend_experiment

cfg = replace(TrendConfig(), n_train=24, n_eval=10, stage1_steps=30, stage2_steps=20)
result = run_trend_experiment(cfg, log=lambda step, d: print(
    f"step {step:3d} stage {d.stage} outer {d.outer_loss:.5f}") if step % 10 == 0 else None)
print()
print(report_markdown(result["table"]))

lam = result["meta"].lam.reshape(-1, STRIDE)
print("mean learned weight per attribute group:")
for name, sl in GROUPS.items():
    print(f"  {name:>9}: {lam[:, sl].mean():.3f}")
print(f"({result['seconds']:.0f}s)")
