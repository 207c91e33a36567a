import csv
import json

import pytest

from iftsplat.cli import EXIT_BAD_TASK, EXIT_NO_CHECKPOINT, main

TINY = ["--image-size", "8", "--gaussians", "2", "--tasks", "2", "--steps", "5"]


def _run(out, *args):
    return main([*args, "--out", str(out), *TINY])


def _csv_files(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    assert main(["meta-train", "--out", str(out), "--image-size", "8", "--gaussians", "2", "--tasks", "4",
                 "--steps", "5", "--stage1-steps", "2", "--stage2-steps", "2", "--batch", "2"]) == 0
    return out


def test_gen_writes_tasks(tmp_path):
    assert _run(tmp_path, "gen") == 0
    rows = list(csv.DictReader(open(tmp_path / "tasks.csv")))
    assert [r["task_id"] for r in rows] == ["0", "1"]
    assert all(float(r["gt_psnr"]) > 40 for r in rows)  # 8-bit files are not involved here
    assert (tmp_path / "task_00000.json").is_file()
    assert (tmp_path / "task_00000_context0.ppm").is_file()


def test_gen_embed_has_no_sidecars(tmp_path):
    assert _run(tmp_path, "gen", "--embed") == 0
    assert not list(tmp_path.glob("*.ppm"))
    doc = json.loads((tmp_path / "task_00001.json").read_text())
    assert "image_ppm_base64" in doc["context"][0]


def test_tto_zero_steps_leaves_images_unchanged(tmp_path):
    assert main(["tto", "--out", str(tmp_path), "--image-size", "8", "--gaussians", "2", "--tasks", "1",
                 "--steps", "0"]) == 0
    for before in tmp_path.glob("*_before.ppm"):
        after = before.with_name(before.name.replace("_before", "_after"))
        assert before.read_bytes() == after.read_bytes()
    row = next(csv.DictReader(open(tmp_path / "tto_summary.csv")))
    assert row["psnr_before"] == row["psnr_after"]


def test_tto_from_task_files(tmp_path):
    _run(tmp_path / "tasks", "gen")
    assert _run(tmp_path / "out", "tto", "--task-dir", str(tmp_path / "tasks")) == 0
    assert (tmp_path / "out" / "task_00001_tto.csv").is_file()


def test_missing_checkpoint_exit_code(tmp_path):
    assert _run(tmp_path, "eval", "--checkpoint", str(tmp_path / "nope.json")) == EXIT_NO_CHECKPOINT
    assert _run(tmp_path, "report", "--checkpoints", str(tmp_path)) == EXIT_NO_CHECKPOINT


def test_malformed_task_exit_code(tmp_path):
    (tmp_path / "task_00000.json").write_text("{not json")
    assert _run(tmp_path, "tto", "--task-dir", str(tmp_path)) == EXIT_BAD_TASK
    (tmp_path / "task_00000.json").write_text(json.dumps({"spec": {}}))
    assert _run(tmp_path, "tto", "--task-dir", str(tmp_path)) == EXIT_BAD_TASK


def test_unreadable_checkpoint_exit_code(tmp_path):
    (tmp_path / "ckpt.json").write_text(json.dumps({"lam_raw": []}))
    assert _run(tmp_path, "eval", "--checkpoint", str(tmp_path / "ckpt.json")) == EXIT_NO_CHECKPOINT


def test_empty_task_dir_exit_code(tmp_path):
    assert _run(tmp_path, "tto", "--task-dir", str(tmp_path)) == EXIT_BAD_TASK


def test_gradcheck_quadratic_only(tmp_path):
    assert main(["gradcheck", "--quadratic-only", "--out", str(tmp_path)]) == 0
    names = [r["check"] for r in csv.DictReader(open(tmp_path / "gradcheck.csv"))]
    assert names and all("splat" not in n and "renderer" not in n for n in names)


@pytest.fixture(scope="module")
def default_gradcheck(tmp_path_factory):
    out = tmp_path_factory.mktemp("gradcheck")
    code = main(["gradcheck", "--out", str(out)])
    return code, {r["check"]: r for r in csv.DictReader(open(out / "gradcheck.csv"))}, out


GN_GAP = "Gauss-Newton drops residual curvature: 8.4% magnitude gap on seed 0, 0.2% with the exact Hessian"


@pytest.mark.xfail(strict=True, reason=GN_GAP)
def test_gradcheck_default_exits_zero(default_gradcheck):
    assert default_gradcheck[0] == 0


def test_gradcheck_default_only_gauss_newton_gap_fails(default_gradcheck):
    code, rows, out = default_gradcheck
    failed = {name for name, r in rows.items() if r["passed"] != "1"}
    assert failed <= {"splat_implicit_unrolled_magnitude"}
    assert rows["splat_exact_hessian_unrolled_magnitude"]["passed"] == "1"
    assert code == (1 if failed else 0)
    assert (out / "comparison.csv").stat().st_size > 0


def test_gradcheck_break_stationarity_reports_untrusted(tmp_path):
    code = main(["gradcheck", "--break-stationarity", "--out", str(tmp_path)])
    rows = {r["check"]: r for r in csv.DictReader(open(tmp_path / "gradcheck.csv"))}
    assert float(rows["untrusted_rate_when_broken"]["value"]) > 0
    assert code in (0, 1)


def test_eval_and_report(tmp_path, trained):
    assert _run(tmp_path, "eval", "--checkpoint", str(trained / "meta.json")) == 0
    assert len(list(csv.DictReader(open(tmp_path / "eval.csv")))) == 2
    assert _run(tmp_path, "report", "--checkpoints", str(trained)) == 0
    summary = [r["config"] for r in csv.DictReader(open(tmp_path / "report_summary.csv"))]
    assert summary == ["zero_shot", "meta", "meta_learned_lam", "meta_lam_min"]
    assert (tmp_path / "report.md").read_text().startswith("# ")


def test_meta_train_outputs(trained):
    for name in ("zero_shot.json", "meta.json", "history.csv", "config.json"):
        assert (trained / name).is_file()
    assert len(list(csv.DictReader(open(trained / "history.csv")))) == 4


@pytest.mark.parametrize("command", [
    ["gen"],
    ["tto"],
    ["gradcheck", "--quadratic-only"],
    ["meta-train", "--stage1-steps", "1", "--stage2-steps", "1", "--batch", "2"],
])
def test_commands_are_deterministic(tmp_path, command):
    assert _run(tmp_path / "a", *command) == 0
    assert _run(tmp_path / "b", *command) == 0
    a, b = _csv_files(tmp_path / "a"), _csv_files(tmp_path / "b")
    assert a and a == b


def test_eval_is_deterministic(tmp_path, trained):
    for d in ("a", "b"):
        assert _run(tmp_path / d, "eval", "--checkpoint", str(trained / "meta.json")) == 0
    assert (tmp_path / "a" / "eval.csv").read_bytes() == (tmp_path / "b" / "eval.csv").read_bytes()
