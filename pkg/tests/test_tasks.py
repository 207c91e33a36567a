import json
from dataclasses import replace

import numpy as np
import pytest

from iftsplat.meta import image_psnr
from iftsplat.renderer import render
from iftsplat.tasks import TaskSpec, gen_task, load_task, save_task, task_family

SMALL = TaskSpec(num_gaussians=3, image_size=(12, 10), seed=4)


def _views_equal(a, b):
    return all(ca == cb and np.array_equal(ia, ib) for (ca, ia), (cb, ib) in zip(a.views, b.views))


def test_same_seed_is_bitwise_identical():
    a, b = gen_task(SMALL), gen_task(SMALL)
    assert a.gt_params == b.gt_params
    assert _views_equal(a.context, b.context) and _views_equal(a.novel, b.novel)


def test_seeds_differ():
    a, b = task_family(SMALL, [0, 1])
    assert a.gt_params != b.gt_params


def test_view_counts_and_sizes():
    t = gen_task(replace(SMALL, num_context=3, num_novel=2))
    assert len(t.context.views) == 3 and len(t.novel.views) == 2
    assert all(img.shape == (10, 12, 3) for _, img in t.context.views + t.novel.views)


def test_exposure_corruption_rule():
    spec = replace(SMALL, exposure_corruption=0.15)
    t = gen_task(spec)
    gt = np.asarray(t.gt_params)
    k = t.corrupted_view
    assert k is not None
    for i, (cam, img) in enumerate(t.context.views):
        clean = render(gt, cam)
        expected = np.clip(clean + 0.15, 0.0, 1.0) if i == k else clean
        np.testing.assert_array_equal(img, expected)


def test_novel_views_never_corrupted():
    for s in range(5):
        t = gen_task(replace(SMALL, exposure_corruption=0.15, seed=s))
        gt = np.asarray(t.gt_params)
        for cam, img in t.novel.views:
            np.testing.assert_array_equal(img, render(gt, cam))


def test_corruption_only_changes_context():
    clean = gen_task(SMALL)
    dirty = gen_task(replace(SMALL, exposure_corruption=0.15))
    assert clean.gt_params == dirty.gt_params
    assert clean.corrupted_view is None
    assert _views_equal(clean.novel, dirty.novel)


def test_ground_truth_psnr_capped():
    t = gen_task(SMALL)
    assert image_psnr(np.asarray(t.gt_params), t.novel) == 99.0
    assert image_psnr(np.asarray(t.gt_params), t.context) == 99.0


@pytest.mark.parametrize("embed", [False, True])
def test_save_load_roundtrip(tmp_path, embed):
    t = gen_task(replace(SMALL, exposure_corruption=0.15))
    save_task(t, tmp_path / "task_00004.json", embed=embed)
    sidecars = sorted(p.name for p in tmp_path.glob("*.ppm"))
    assert (sidecars == []) == embed
    back = load_task(tmp_path / "task_00004.json")
    assert back.gt_params == t.gt_params
    assert back.spec == t.spec
    assert back.corrupted_view == t.corrupted_view
    for a, b in ((t.context, back.context), (t.novel, back.novel)):
        for (ca, ia), (cb, ib) in zip(a.views, b.views):
            assert ca == cb
            np.testing.assert_allclose(ib, ia, atol=0.5 / 255 + 1e-12)  # 8-bit quantization


def test_sidecar_and_embed_load_identically(tmp_path):
    t = gen_task(SMALL)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    save_task(t, tmp_path / "a" / "t.json")
    save_task(t, tmp_path / "b" / "t.json", embed=True)
    a, b = load_task(tmp_path / "a" / "t.json"), load_task(tmp_path / "b" / "t.json")
    assert _views_equal(a.context, b.context) and _views_equal(a.novel, b.novel)


def test_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(num_gaussians=0)
    with pytest.raises(ValueError):
        TaskSpec(image_size=(3, 8))
    with pytest.raises(ValueError):
        TaskSpec(num_novel=0)


def test_spec_json_roundtrip():
    spec = replace(SMALL, exposure_corruption=0.15)
    assert TaskSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec
