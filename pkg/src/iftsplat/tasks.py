"""Synthetic task families: a base scene, per-task jitter, ring cameras.

A task's images are rendered from its own ground-truth parameters by this
package's renderer, so a perfect fit is exactly representable. Exposure
corruption, when requested, brightens one context view only.
"""
from __future__ import annotations

import base64
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .gs_core import COLOR, LOG_SCALE, MEAN, OPACITY, ROT, STRIDE, ParamVector
from .renderer import Camera, ContextSet, read_ppm, render, write_ppm

DEFAULT_JITTER = {"mean": 0.06, "log_scale": 0.15, "rot": 0.1, "opacity": 0.6, "color": 0.5}


@dataclass(frozen=True)
class TaskSpec:
    num_gaussians: int = 8
    image_size: tuple = (32, 32)  # (width, height)
    num_context: int = 2
    num_novel: int = 3
    ring_radius: float = 3.0
    ring_arc: float = 0.9          # radians spanned by all views
    camera_jitter: float = 0.03    # radians of azimuth/elevation noise
    focal_scale: float = 1.8       # focal length in units of image width
    exposure_corruption: float | None = None
    attribute_jitter: dict = field(default_factory=lambda: dict(DEFAULT_JITTER))
    family_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        w, h = self.image_size
        if min(self.num_gaussians, self.num_context, self.num_novel) < 1:
            raise ValueError("counts must be >= 1")
        if w < 4 or h < 4:
            raise ValueError("images must be at least 4x4")
        object.__setattr__(self, "image_size", (int(w), int(h)))

    def to_json(self):
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        doc["image_size"] = tuple(doc["image_size"])
        return cls(**doc)


@dataclass(frozen=True)
class TaskInstance:
    gt_params: ParamVector
    context: ContextSet
    novel: ContextSet
    spec: TaskSpec
    corrupted_view: int | None = None

    @property
    def supervision(self) -> ContextSet:
        """Context and novel views together (targets for the proxy loss)."""
        return ContextSet(self.context.views + self.novel.views)


def base_scene(num_gaussians: int, family_seed: int) -> np.ndarray:
    """Shared scene of a task family: Gaussians inside the unit box."""
    rng = np.random.default_rng([family_seed, 7919])
    b = np.zeros((num_gaussians, STRIDE))
    b[:, MEAN] = rng.uniform(-0.5, 0.5, (num_gaussians, 3))
    b[:, LOG_SCALE] = np.log(rng.uniform(0.08, 0.2, (num_gaussians, 3)))
    q = rng.normal(size=(num_gaussians, 4))
    b[:, ROT] = q / np.linalg.norm(q, axis=1, keepdims=True)
    b[:, OPACITY] = rng.uniform(0.5, 2.5, (num_gaussians, 1))
    b[:, COLOR] = rng.normal(0.0, 1.2, (num_gaussians, 3))
    return b.reshape(-1)


def jitter_scene(base: np.ndarray, jitter: dict, rng) -> np.ndarray:
    b = base.reshape(-1, STRIDE).copy()
    n = b.shape[0]
    b[:, MEAN] += rng.normal(0.0, jitter["mean"], (n, 3))
    b[:, LOG_SCALE] += rng.normal(0.0, jitter["log_scale"], (n, 3))
    b[:, ROT] += rng.normal(0.0, jitter["rot"], (n, 4))
    b[:, OPACITY] += rng.normal(0.0, jitter["opacity"], (n, 1))
    b[:, COLOR] += rng.normal(0.0, jitter["color"], (n, 3))
    return b.reshape(-1)


def ring_cameras(spec: TaskSpec, rng):
    """Context and novel cameras on a ring around the origin, interleaved.

    Returns (context_cams, novel_cams). Views are evenly spread over
    ``ring_arc``; novel and context roles alternate starting with novel,
    and any leftover views of one kind go at the end of the arc.
    """
    total = spec.num_context + spec.num_novel
    angles = np.linspace(-spec.ring_arc / 2, spec.ring_arc / 2, total)
    roles = []
    nc, nn = spec.num_context, spec.num_novel
    while nc or nn:
        if nn:
            roles.append("novel")
            nn -= 1
        if nc:
            roles.append("context")
            nc -= 1
    w, h = spec.image_size
    ctx, nov = [], []
    for ang, role in zip(angles, roles):
        az = ang + rng.normal(0.0, spec.camera_jitter)
        el = 0.25 + rng.normal(0.0, spec.camera_jitter)
        eye = spec.ring_radius * np.array([np.sin(az) * np.cos(el), -np.sin(el), -np.cos(az) * np.cos(el)])
        cam = Camera.look_at(eye, np.zeros(3), spec.focal_scale * w, w, h)
        (ctx if role == "context" else nov).append(cam)
    return ctx, nov


def gen_task(spec: TaskSpec) -> TaskInstance:
    rng = np.random.default_rng([spec.family_seed, spec.seed])
    gt = jitter_scene(base_scene(spec.num_gaussians, spec.family_seed), spec.attribute_jitter, rng)
    ctx_cams, nov_cams = ring_cameras(spec, rng)
    ctx_imgs = [render(gt, c) for c in ctx_cams]
    corrupted = None
    if spec.exposure_corruption:
        corrupted = int(rng.integers(len(ctx_cams)))
        ctx_imgs[corrupted] = np.clip(ctx_imgs[corrupted] + spec.exposure_corruption, 0.0, 1.0)
    nov_imgs = [render(gt, c) for c in nov_cams]
    return TaskInstance(
        ParamVector(gt),
        ContextSet(tuple(zip(ctx_cams, ctx_imgs))),
        ContextSet(tuple(zip(nov_cams, nov_imgs))),
        spec,
        corrupted,
    )


def task_family(spec: TaskSpec, seeds) -> list[TaskInstance]:
    return [gen_task(replace(spec, seed=int(s))) for s in seeds]


# -- task files -----------------------------------------------------------------

def _ppm_bytes(img) -> bytes:
    buf = io.BytesIO()
    write_ppm(buf, img)
    return buf.getvalue()


def save_task(task: TaskInstance, path, embed=False):
    """Write a task as JSON; images go to sidecar PPM files unless ``embed``."""
    path = Path(path)
    doc = {
        "spec": task.spec.to_json(),
        "gt_params": task.gt_params.to_json(),
        "corrupted_view": task.corrupted_view,
    }
    for role, cs in (("context", task.context), ("novel", task.novel)):
        views = []
        for i, (cam, img) in enumerate(cs.views):
            entry = {"camera": cam.to_json()}
            if embed:
                entry["image_ppm_base64"] = base64.b64encode(_ppm_bytes(img)).decode("ascii")
            else:
                name = f"{path.stem}_{role}{i}.ppm"
                write_ppm(path.parent / name, img)
                entry["image"] = name
            views.append(entry)
        doc[role] = views
    path.write_text(json.dumps(doc, indent=1))


def load_task(path) -> TaskInstance:
    """Inverse of :func:`save_task`. Images come back quantized to 8 bits."""
    path = Path(path)
    doc = json.loads(path.read_text())

    def views(entries):
        out = []
        for e in entries:
            cam = Camera.from_json(e["camera"])
            if "image_ppm_base64" in e:
                img = read_ppm(io.BytesIO(base64.b64decode(e["image_ppm_base64"])))
            else:
                img = read_ppm(path.parent / e["image"])
            out.append((cam, img))
        return ContextSet(tuple(out))

    return TaskInstance(
        ParamVector.from_json(doc["gt_params"]),
        views(doc["context"]),
        views(doc["novel"]),
        TaskSpec.from_json(doc["spec"]),
        doc.get("corrupted_view"),
    )
