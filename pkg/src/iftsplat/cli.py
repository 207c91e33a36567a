"""Command line: gen, gradcheck, tto, meta-train, eval, report.

Every command writes CSV (plus PPM images or a markdown table) under
``--out``. Numbers are formatted with fixed precision so repeated runs with
the same flags and seed produce byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import IftSplatError
from .gs_core import LAMBDA_MIN
from .harness import (
    CONST_LAM, REPORT_CONFIGS, TrendConfig, eval_seeds, gradcheck_suite, initial_guess, report_markdown,
    report_rows, summarize, train_seeds, train_two_stage, write_checks_csv, write_report_csv,
)
from .inner_opt import InnerConfig, run_tto
from .meta import MetaParams, evaluate, image_psnr, write_eval_csv, write_history_csv
from .oracles import write_comparison_csv
from .renderer import render, write_ppm
from .tasks import TaskSpec, gen_task, load_task, save_task, task_family

EXIT_FAIL = 1
EXIT_NO_CHECKPOINT = 2
EXIT_BAD_TASK = 3


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _image_size(text):
    parts = text.lower().split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad image size {text!r}; use 32 or 32x24") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2:
        raise argparse.ArgumentTypeError(f"bad image size {text!r}")
    return tuple(dims)


def _spec(args) -> TaskSpec:
    return TaskSpec(num_gaussians=args.gaussians, image_size=args.image_size,
                    exposure_corruption=args.exposure or None, family_seed=args.seed)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_checkpoint(path) -> MetaParams:
    if path is None or not Path(path).is_file():
        raise CliError(EXIT_NO_CHECKPOINT, f"checkpoint not found: {path}")
    try:
        return MetaParams.load(path)
    except (ValueError, KeyError, TypeError, IftSplatError) as exc:
        raise CliError(EXIT_NO_CHECKPOINT, f"unreadable checkpoint {path}: {exc!r}") from exc


def _load_tasks(args, split="eval"):
    """Tasks from ``--task-dir`` files, or generated from ``--seed``/``--tasks``."""
    if args.task_dir:
        files = sorted(Path(args.task_dir).glob("task_*.json"))
        if not files:
            raise CliError(EXIT_BAD_TASK, f"no task_*.json files in {args.task_dir}")
        tasks = []
        for f in files:
            try:
                tasks.append(load_task(f))
            except (OSError, ValueError, KeyError, TypeError, IftSplatError) as exc:
                raise CliError(EXIT_BAD_TASK, f"malformed task file {f}: {exc}") from exc
        return tasks, [t.spec.seed for t in tasks]
    seeds = list(train_seeds(args.tasks) if split == "train" else eval_seeds(args.tasks))
    return task_family(_spec(args), seeds), seeds


def _inner(args) -> InnerConfig:
    return InnerConfig(steps=args.steps, lambda_global=args.lambda_global)


def _lam(choice, mp: MetaParams, value=None, have_checkpoint=True):
    n = mp.theta0.size
    if choice is None:
        choice = "learned" if have_checkpoint else "min"
    if value is not None:
        return np.full(n, max(float(value), LAMBDA_MIN))
    return {"learned": mp.lam, "constant": np.full(n, CONST_LAM), "min": np.full(n, LAMBDA_MIN)}[choice]


# -- commands ---------------------------------------------------------------------

def cmd_gen(args):
    out = _out(args)
    spec = _spec(args)
    seeds = train_seeds(args.tasks) if args.split == "train" else eval_seeds(args.tasks)
    with open(out / "tasks.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task_id", "file", "corrupted_view", "gt_psnr"])
        for s in seeds:
            task = gen_task(replace(spec, seed=int(s)))
            name = f"task_{int(s):05d}.json"
            save_task(task, out / name, embed=args.embed)
            cv = "" if task.corrupted_view is None else task.corrupted_view
            w.writerow([s, name, cv, f"{image_psnr(np.asarray(task.gt_params), task.novel):.6f}"])
    return 0


def cmd_gradcheck(args):
    out = _out(args)
    checks, rows = gradcheck_suite(args.seed, quadratic_only=args.quadratic_only,
                                   break_stationarity=args.break_stationarity, pcg_tol=args.pcg_tol,
                                   full=args.full)
    write_checks_csv(out / "gradcheck.csv", checks)
    write_comparison_csv(out / "comparison.csv", rows)
    failed = [c for c in checks if not c.passed]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3g} (tol {c.tol:.3g}) {c.detail}")
    return EXIT_FAIL if failed else 0


def cmd_tto(args):
    out = _out(args)
    tasks, ids = _load_tasks(args)
    if args.checkpoint is not None:
        mp = _load_checkpoint(args.checkpoint)
    else:
        mp = MetaParams.initial(initial_guess(tasks[0].spec), CONST_LAM)
    lam = _lam(args.lam, mp, args.lam_value, args.checkpoint is not None)
    cfg = _inner(args)
    with open(out / "tto_summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task_id", "psnr_before", "psnr_after", "final_stationarity", "converged", "halvings"])
        for tid, task in zip(ids, tasks):
            p_star, report = run_tto(mp.theta0, lam, task.context, cfg, scale=mp.scaler)
            report.write_csv(out / f"task_{tid:05d}_tto.csv")
            for j, (cam, _) in enumerate(task.novel.views):
                write_ppm(out / f"task_{tid:05d}_novel{j}_before.ppm", render(mp.theta0, cam))
                write_ppm(out / f"task_{tid:05d}_novel{j}_after.ppm", render(p_star, cam))
            w.writerow([tid, f"{image_psnr(mp.theta0, task.novel):.6f}", f"{image_psnr(p_star, task.novel):.6f}",
                        f"{report.final_stationarity:.6g}", int(report.converged), report.halvings])
    return 0


def _trend_config(args) -> TrendConfig:
    return TrendConfig(spec=_spec(args), n_train=args.tasks, stage1_steps=args.stage1_steps,
                       stage2_steps=args.stage2_steps, batch=args.batch, lam_lr=args.lam_lr,
                       outer_lr=args.outer_lr, tto_steps=args.steps, lambda_global=args.lambda_global,
                       pcg_tol=args.pcg_tol, seed=args.seed)


def cmd_meta_train(args):
    out = _out(args)
    cfg = _trend_config(args)

    def log(step, d):
        if args.verbose:
            print(f"step {step} stage {d.stage} outer {d.outer_loss:.6g} untrusted {d.untrusted}", flush=True)

    zero_shot, meta, history = train_two_stage(cfg, log=log)
    zero_shot.save(out / "zero_shot.json")
    meta.save(out / "meta.json")
    write_history_csv(out / "history.csv", history)
    (out / "config.json").write_text(json.dumps({**cfg.__dict__, "spec": cfg.spec.to_json()}, indent=1,
                                                sort_keys=True))
    return 0


def cmd_eval(args):
    out = _out(args)
    mp = _load_checkpoint(args.checkpoint)
    tasks, ids = _load_tasks(args)
    rows = evaluate(mp, tasks, _inner(args), lam=_lam(args.lam, mp, args.lam_value), task_ids=ids)
    write_eval_csv(out / "eval.csv", rows)
    b, a, d = summarize(rows)
    print(f"mean PSNR before {b:.3f} after {a:.3f} delta {d:+.3f} over {len(rows)} tasks")
    return 0


def cmd_report(args):
    out = _out(args)
    ckpt_dir = Path(args.checkpoints)
    zero_shot = _load_checkpoint(ckpt_dir / "zero_shot.json")
    meta = _load_checkpoint(ckpt_dir / "meta.json")
    tasks, ids = _load_tasks(args)
    table = report_rows(zero_shot, meta, tasks, _inner(args), task_ids=ids)
    write_report_csv(out / "report.csv", table)
    with open(out / "report_summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["config", "psnr_before", "psnr_after", "delta"])
        for name in REPORT_CONFIGS:
            w.writerow([name] + [f"{x:.6f}" for x in summarize(table[name])])
    md = report_markdown(table)
    (out / "report.md").write_text(md)
    print(md)
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iftsplat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tasks_default=30, steps_default=50):
        p.add_argument("--seed", type=int, default=0, help="task family seed")
        p.add_argument("--tasks", type=int, default=tasks_default, help="number of tasks")
        p.add_argument("--out", default="out")
        p.add_argument("--steps", type=int, default=steps_default, help="inner TTO steps")
        p.add_argument("--pcg-tol", type=float, default=1e-8)
        p.add_argument("--lambda-global", type=float, default=1.0)
        p.add_argument("--exposure", type=float, default=0.15,
                       help="exposure offset on one context view (0 disables)")
        p.add_argument("--image-size", type=_image_size, default=(32, 32))
        p.add_argument("--gaussians", type=int, default=8)
        p.add_argument("--task-dir", default=None, help="load task_*.json files instead of generating")

    p = sub.add_parser("gen", help="write task files")
    common(p)
    p.add_argument("--split", choices=("eval", "train"), default="eval")
    p.add_argument("--embed", action="store_true", help="embed images as base64 instead of sidecar PPMs")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("gradcheck", help="analytic gradients against the oracles")
    common(p)
    p.add_argument("--quadratic-only", action="store_true")
    p.add_argument("--break-stationarity", action="store_true", help="cut TTO to 2 steps")
    p.add_argument("--full", action="store_true", help="use the acceptance-test sample counts")
    p.set_defaults(fn=cmd_gradcheck)

    for name, fn, help_text in (("tto", cmd_tto, "run TTO and write traces and images"),
                                ("eval", cmd_eval, "PSNR before/after TTO for a checkpoint")):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--lam", choices=("learned", "constant", "min"), default=None,
                       help="default: learned with a checkpoint, min without")
        p.add_argument("--lam-value", type=float, default=None, help="constant Λ overriding --lam")
        p.set_defaults(fn=fn)

    p = sub.add_parser("meta-train", help="two-stage meta-training")
    common(p, tasks_default=64)
    p.add_argument("--stage1-steps", type=int, default=60)
    p.add_argument("--stage2-steps", type=int, default=40)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--outer-lr", type=float, default=1.0)
    p.add_argument("--lam-lr", type=float, default=3000.0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_meta_train)

    p = sub.add_parser("report", help="four-configuration comparison table")
    common(p)
    p.add_argument("--checkpoints", default="out", help="directory holding zero_shot.json and meta.json")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
