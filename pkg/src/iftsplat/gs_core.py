"""Gaussian parameter layout, activations and (de)serialization.

Every Gaussian occupies ``STRIDE = 14`` consecutive reals of a flat vector::

    [mean(3), log_scale(3), rot(4, wxyz), opacity_logit(1), color(3)]

All optimization happens in this unconstrained space; :func:`activate` maps
it to renderable attributes (positive scales, unit quaternions, opacity and
color in (0, 1)).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateRotation, EmptyScene, LayoutError, ShapeError

STRIDE = 14
LAYOUT_VERSION = 1
LAMBDA_MIN = 1e-4

# slices into one Gaussian's block of STRIDE entries
MEAN = slice(0, 3)
LOG_SCALE = slice(3, 6)
ROT = slice(6, 10)
OPACITY = slice(10, 11)
COLOR = slice(11, 14)

GROUPS = {
    "mean": MEAN,
    "log_scale": LOG_SCALE,
    "rot": ROT,
    "opacity": OPACITY,
    "color": COLOR,
}


def _vec(x, n, name):
    a = np.array(x, dtype=np.float64).reshape(-1)
    if a.shape != (n,):
        raise ShapeError(f"{name} must have {n} entries, got {a.size}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianAttrib:
    """One Gaussian in unconstrained optimization space."""

    mean: np.ndarray
    log_scale: np.ndarray
    rot: np.ndarray
    opacity_logit: float
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _vec(self.mean, 3, "mean"))
        object.__setattr__(self, "log_scale", _vec(self.log_scale, 3, "log_scale"))
        object.__setattr__(self, "rot", _vec(self.rot, 4, "rot"))
        object.__setattr__(self, "color", _vec(self.color, 3, "color"))
        object.__setattr__(self, "opacity_logit", float(self.opacity_logit))
        fields_ = (self.mean, self.log_scale, self.rot, self.color, [self.opacity_logit])
        if not all(np.all(np.isfinite(f)) for f in fields_):
            raise ValueError("GaussianAttrib entries must be finite")
        if not np.any(self.rot != 0.0):
            raise DegenerateRotation("zero quaternion")


@dataclass(frozen=True)
class RenderableGaussian:
    mean: np.ndarray
    scale: np.ndarray
    rot: np.ndarray
    opacity: float
    color: np.ndarray


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat, read-only parameter vector for ``num_gaussians`` Gaussians.

    Numpy functions accept it directly (``np.asarray(p)`` yields ``data``).
    """

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64).reshape(-1)
        if a.size == 0 or a.size % STRIDE:
            raise ShapeError(f"parameter length {a.size} is not a positive multiple of {STRIDE}")
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __len__(self):
        return self.data.size

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash(self.data.tobytes())

    @property
    def num_gaussians(self) -> int:
        return self.data.size // STRIDE

    def blocks(self) -> np.ndarray:
        """(N, 14) view of the data."""
        return self.data.reshape(-1, STRIDE)

    def to_json(self) -> dict:
        return {
            "num_gaussians": self.num_gaussians,
            "layout_version": LAYOUT_VERSION,
            "data": self.data.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ParamVector":
        if doc.get("layout_version") != LAYOUT_VERSION:
            raise LayoutError(f"unsupported layout_version {doc.get('layout_version')!r}")
        p = cls(np.asarray(doc["data"], dtype=np.float64))
        if p.num_gaussians != int(doc["num_gaussians"]):
            raise LayoutError("num_gaussians does not match data length")
        return p

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "ParamVector":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RegWeights:
    """Per-parameter proximal weights (the uncertainty vector), floored at LAMBDA_MIN."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise ValueError("RegWeights must be finite")
        a = np.maximum(a, LAMBDA_MIN)
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __len__(self):
        return self.data.size

    @classmethod
    def constant(cls, value: float, n: int) -> "RegWeights":
        return cls(np.full(n, float(value)))


def pack(gaussians) -> ParamVector:
    gaussians = list(gaussians)
    if not gaussians:
        raise EmptyScene("cannot pack an empty list of Gaussians")
    out = np.empty((len(gaussians), STRIDE))
    for row, g in zip(out, gaussians):
        row[MEAN] = g.mean
        row[LOG_SCALE] = g.log_scale
        row[ROT] = g.rot
        row[OPACITY] = g.opacity_logit
        row[COLOR] = g.color
    return ParamVector(out.reshape(-1))


def unpack(p) -> list[GaussianAttrib]:
    blocks = np.asarray(p, dtype=np.float64).reshape(-1, STRIDE)
    return [
        GaussianAttrib(b[MEAN], b[LOG_SCALE], b[ROT], b[OPACITY][0], b[COLOR])
        for b in blocks
    ]


def group_mask(n_params: int, group: str) -> np.ndarray:
    """Boolean mask selecting one attribute group across all Gaussians."""
    mask = np.zeros((n_params // STRIDE, STRIDE), dtype=bool)
    mask[:, GROUPS[group]] = True
    return mask.reshape(-1)


def group_vector(n_params: int, values: dict) -> np.ndarray:
    """Broadcast a {group: value} map onto the flat layout."""
    out = np.empty((n_params // STRIDE, STRIDE))
    for name, sl in GROUPS.items():
        out[:, sl] = values[name]
    return out.reshape(-1)


def sigmoid(x):
    # split on sign so large |x| never overflows exp
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _blocks(p):
    b = np.asarray(p, dtype=np.float64)
    if b.size % STRIDE:
        raise ShapeError(f"parameter length {b.size} is not a multiple of {STRIDE}")
    return b.reshape(-1, STRIDE)


def activate_arrays(p):
    """Vectorized activation: returns (means, scales, quats, opacity, colors).

    Shapes are (N,3), (N,3), (N,4), (N,), (N,3).
    """
    b = _blocks(p)
    q = b[:, ROT]
    qn = np.linalg.norm(q, axis=1)
    if np.any(qn == 0.0):
        raise DegenerateRotation("zero quaternion in parameter vector")
    return (
        b[:, MEAN].copy(),
        np.exp(b[:, LOG_SCALE]),
        q / qn[:, None],
        sigmoid(b[:, OPACITY][:, 0]),
        sigmoid(b[:, COLOR]),
    )


def activate_jvp(p, w):
    """Tangents of :func:`activate_arrays` along direction ``w``.

    ``w`` may be (n,) or (n, k); trailing tangent axis is preserved.
    """
    b = _blocks(p)
    w = np.asarray(w, dtype=np.float64)
    squeeze = w.ndim == 1
    wb = w.reshape(b.shape[0], STRIDE, -1)
    means, scales, quats, opa, cols = activate_arrays(p)
    qn = np.linalg.norm(b[:, ROT], axis=1)
    dq = wb[:, ROT]
    # d(q/|q|) = (dq - qhat (qhat . dq)) / |q|
    proj = np.einsum("nc,nck->nk", quats, dq)
    dquat = (dq - quats[:, :, None] * proj[:, None, :]) / qn[:, None, None]
    out = (
        wb[:, MEAN],
        scales[:, :, None] * wb[:, LOG_SCALE],
        dquat,
        (opa * (1 - opa))[:, None] * wb[:, OPACITY][:, 0],
        (cols * (1 - cols))[:, :, None] * wb[:, COLOR],
    )
    if squeeze:
        out = tuple(o[..., 0] for o in out)
    return out


def activate(p) -> list[RenderableGaussian]:
    means, scales, quats, opa, cols = activate_arrays(p)
    return [
        RenderableGaussian(means[i], scales[i], quats[i], float(opa[i]), cols[i])
        for i in range(means.shape[0])
    ]


def quat_to_rotmat(q):
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4) in wxyz order."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def quat_to_rotmat_jvp(q, dq):
    """Differential of :func:`quat_to_rotmat` at unit ``q`` (N,4) along ``dq`` (N,4,k).

    Returns (N,3,3,k). Uses the polarized quadratic form of the rotation.
    """
    w, x, y, z = (q[:, i, None] for i in range(4))
    dw, dx, dy, dz = (dq[:, i] for i in range(4))
    # d(ab) = a db + b da for every product in the matrix entries
    r00 = -4 * (y * dy + z * dz)
    r01 = 2 * (x * dy + y * dx - w * dz - z * dw)
    r02 = 2 * (x * dz + z * dx + w * dy + y * dw)
    r10 = 2 * (x * dy + y * dx + w * dz + z * dw)
    r11 = -4 * (x * dx + z * dz)
    r12 = 2 * (y * dz + z * dy - w * dx - x * dw)
    r20 = 2 * (x * dz + z * dx - w * dy - y * dw)
    r21 = 2 * (y * dz + z * dy + w * dx + x * dw)
    r22 = -4 * (x * dx + y * dy)
    return np.stack(
        [np.stack([r00, r01, r02], 1), np.stack([r10, r11, r12], 1), np.stack([r20, r21, r22], 1)],
        1,
    )
