import numpy as np
import pytest

from iftsplat.gs_core import STRIDE
from iftsplat.harness import small_splat_task
from iftsplat.renderer import Camera, ContextSet


def axis_camera(w=8, h=8, f=10.0):
    """Camera at the origin looking down +z."""
    return Camera(f, f, (w - 1) / 2, (h - 1) / 2, np.hstack([np.eye(3), np.zeros((3, 1))]), w, h)


def gaussian_block(mean=(0, 0, 3), log_scale=(-1.5, -1.5, -1.5), rot=(1, 0, 0, 0), opa=0.0, color=(0, 0, 0)):
    b = np.zeros(STRIDE)
    b[0:3], b[3:6], b[6:10], b[10], b[11:14] = mean, log_scale, rot, opa, color
    return b


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_task():
    """2 Gaussians, two 4x4 context views."""
    return small_splat_task(7)


@pytest.fixture(scope="session")
def small_task():
    """2 Gaussians, two 8x8 context views."""
    return small_splat_task(11, size=(8, 8))


@pytest.fixture
def empty_ctx():
    cam = axis_camera(4, 4)
    return ContextSet(((cam, np.zeros((4, 4, 3))),))
