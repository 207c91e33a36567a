import csv

import numpy as np
import pytest

from iftsplat.errors import NonFiniteEval, SingularSystem, TooLarge
from iftsplat.inner_opt import InnerConfig
from iftsplat.oracles import (
    QuadraticTask, comparison_rows, dense_jacobian, exact_hessian_implicit, fd_grad, quadratic_closed_form,
    quadratic_implicit_oracle, unrolled_grad, write_comparison_csv,
)
from iftsplat.meta import outer_loss


def test_fd_grad_examples():
    assert np.allclose(fd_grad(lambda x: 0.5 * x @ x, np.array([1.0, 2.0])), [1, 2], atol=1e-8)
    assert not np.any(fd_grad(lambda x: 3.0, np.ones(3)))
    assert np.allclose(fd_grad(lambda x: x[0] * x[1], np.array([3.0, 4.0])), [4, 3], atol=1e-8)
    with pytest.raises(NonFiniteEval):
        fd_grad(lambda x: np.inf, np.ones(2))
    with pytest.raises(ValueError):
        fd_grad(lambda x: 0.0, np.ones(2), h=0)


@pytest.mark.parametrize("h", [1e-6, 1e-5, 1e-4, 1e-3])
def test_fd_quadratic_exact_for_any_h(rng, h):
    a = rng.normal(size=(5, 5))
    a = a @ a.T
    b = rng.normal(size=5)
    x = rng.normal(size=5)
    g = fd_grad(lambda y: 0.5 * y @ a @ y + b @ y, x, h)
    ref = a @ x + b
    assert np.linalg.norm(g - ref) < 1e-8 * np.linalg.norm(ref)


def test_dense_jacobian_guard_and_adjoint(tiny_task, rng):
    p = np.asarray(tiny_task.gt_params)
    with pytest.raises(TooLarge):
        dense_jacobian(p, tiny_task.context, max_entries=10)
    jd = dense_jacobian(p, tiny_task.context)
    lin = tiny_task.context.linearize(p)
    u, w = rng.normal(size=jd.shape[0]), rng.normal(size=jd.shape[1])
    assert abs(u @ (jd @ w) - (jd.T @ u) @ w) < 1e-4 * np.linalg.norm(u) * np.linalg.norm(jd @ w)
    assert abs(u @ (jd @ w) - lin.vjp(u) @ w) < 1e-4 * np.linalg.norm(u) * np.linalg.norm(jd @ w)


def test_closed_form_examples(rng):
    p = rng.normal(size=4)
    task = QuadraticTask(np.eye(4), np.zeros(4))
    assert np.allclose(quadratic_closed_form(task, p, np.ones(4)), p / 2)
    task = QuadraticTask.random(rng, 6, 4)
    assert np.allclose(quadratic_closed_form(task, p, np.full(4, 1e12)), p, atol=1e-9)
    zero = QuadraticTask(np.zeros((3, 4)), rng.normal(size=3))
    assert np.allclose(quadratic_closed_form(zero, p, np.ones(4)), p)
    with pytest.raises(SingularSystem):
        quadratic_closed_form(zero, p, np.zeros(4))


def test_closed_form_stationarity(rng):
    for _ in range(10):
        task = QuadraticTask.random(rng, 9, 6)
        p0, lam = rng.normal(size=6), rng.uniform(0.01, 3, 6)
        ps = quadratic_closed_form(task, p0, lam)
        assert np.max(np.abs(task.A.T @ (task.A @ ps - task.b) + lam * (ps - p0))) < 1e-10


def _outer(rng, n):
    c = rng.normal(size=(n, n))

    def outer(p):
        r = c @ p - 1.0
        return 0.5 * r @ r, c.T @ r
    return outer


def test_unrolled_zero_steps_is_direct_gradient(rng):
    task = QuadraticTask.random(rng, 8, 5)
    p0 = rng.normal(size=5)
    outer = _outer(rng, 5)
    cfg = InnerConfig(steps=0, learning_rate=0.1)
    for method in ("fd", "forward"):
        g = unrolled_grad(p0, np.ones(5), task, cfg, outer, method=method)
        assert np.allclose(g, outer(p0)[1], rtol=1e-8)


def test_unrolled_converges_to_implicit(rng):
    task = QuadraticTask.random(rng, 12, 6)
    p0 = rng.normal(size=6)
    lam = rng.uniform(0.2, 1.0, 6)
    outer = _outer(rng, 6)
    cfg = InnerConfig(steps=500, learning_rate=0.3)
    g = unrolled_grad(p0, lam, task, cfg, outer, method="forward")
    _, ref, _ = quadratic_implicit_oracle(task, p0, lam, lambda p: outer(p)[1])
    assert np.linalg.norm(g - ref) < 1e-2 * np.linalg.norm(ref)


@pytest.mark.parametrize("update", ["proximal", "gradient"])
def test_unrolled_methods_agree(rng, update):
    task = QuadraticTask.random(rng, 10, 5)
    p0 = rng.normal(size=5)
    lam = rng.uniform(0.2, 1.0, 5)
    outer = _outer(rng, 5)
    cfg = InnerConfig(steps=30, learning_rate=0.2, update=update)
    a = unrolled_grad(p0, lam, task, cfg, outer, method="fd")
    b = unrolled_grad(p0, lam, task, cfg, outer, method="forward")
    assert np.linalg.norm(a - b) < 1e-3 * np.linalg.norm(b)


def test_unrolled_reverse_matches_forward(rng):
    task = QuadraticTask.random(rng, 10, 5)
    p0, lam = rng.normal(size=5), rng.uniform(0.2, 1.0, 5)
    outer = _outer(rng, 5)
    cfg = InnerConfig(steps=40, learning_rate=0.3)
    a = unrolled_grad(p0, lam, task, cfg, outer, method="reverse", h=1e-6)
    b = unrolled_grad(p0, lam, task, cfg, outer, method="forward")
    assert np.linalg.norm(a - b) < 1e-8 * np.linalg.norm(b)


def test_unrolled_reverse_matches_fd_on_splats(small_task):
    p0 = np.asarray(small_task.gt_params) + 0.05
    lam = np.full(p0.size, 0.5)
    cfg = InnerConfig(steps=8)
    outer = lambda p: outer_loss(p, small_task.novel)  # noqa: E731
    a = unrolled_grad(p0, lam, small_task.context, cfg, outer, method="reverse")
    b = unrolled_grad(p0, lam, small_task.context, cfg, outer, method="fd")
    assert np.linalg.norm(a - b) < 1e-4 * np.linalg.norm(b)


def test_exact_hessian_equals_gauss_newton_for_linear_residuals(rng):
    task = QuadraticTask.random(rng, 9, 4)
    p0, lam = rng.normal(size=4), rng.uniform(0.1, 2.0, 4)
    c = rng.normal(size=4)
    p_star, ref, _ = quadratic_implicit_oracle(task, p0, lam, lambda p: c)
    got = exact_hessian_implicit(p_star, p0, lam, task, c)
    np.testing.assert_allclose(got, ref, rtol=1e-7)


def test_unrolled_guards(small_task, rng):
    task = QuadraticTask.random(rng, 4, 3)
    with pytest.raises(TooLarge):
        unrolled_grad(np.zeros(3), np.ones(3), task, InnerConfig(learning_rate=0.1), _outer(rng, 3), max_params=2)
    with pytest.raises(TypeError):
        p = np.asarray(small_task.gt_params)
        unrolled_grad(p, np.ones(p.size), small_task.context, InnerConfig(steps=1), _outer(rng, p.size),
                      method="forward")
    with pytest.raises(ValueError):
        unrolled_grad(np.zeros(3), np.ones(3), task, InnerConfig(learning_rate=0.1), _outer(rng, 3), method="x")
    with pytest.raises(ValueError):
        unrolled_grad(np.zeros(3), np.ones(3), task, InnerConfig(learning_rate=0.1, update="gradient"),
                      _outer(rng, 3), method="reverse")


def test_comparison_csv(tmp_path):
    rows = comparison_rows("g", [1.0, 2.0], [1.0, 2.5])
    write_comparison_csv(tmp_path / "c.csv", rows)
    lines = list(csv.reader(open(tmp_path / "c.csv")))
    assert lines[0] == ["name", "analytic", "oracle", "abs_err", "rel_err"]
    assert lines[2][0] == "g[1]" and float(lines[2][3]) == 0.5 and float(lines[2][4]) == 0.2
