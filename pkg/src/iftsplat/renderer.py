"""Differentiable pinhole splatting renderer with matrix-free JVP/VJP.

Conventions
-----------
* Cameras look down +z in camera space, x right, y down.
* Pixel (row i, column j) has its center at image coordinates (x=j, y=i).
* Images are float arrays of shape (H, W, 3), row-major; flattened residuals
  follow the same order.
* Pixel-level sums (VJP reductions) run over pixels in row-major order via
  fixed-shape ``einsum`` calls, so results are deterministic.

Derivatives are hand-derived: the chain activation -> projection -> blending
is split into a small per-Gaussian local Jacobian (14 params to 2D mean,
2D covariance, opacity and color) and per-pixel blending coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CulledBehindCamera, ShapeError
from .gs_core import STRIDE, RenderableGaussian, activate_arrays, activate_jvp, quat_to_rotmat, quat_to_rotmat_jvp

BLUR = 0.3
Z_NEAR = 0.01
ALPHA_MIN = 1.0 / 255.0
FOOTPRINT_SIGMA = 3.0

RENDER_CONFIG = {
    "blur": BLUR,
    "z_near": Z_NEAR,
    "alpha_min": ALPHA_MIN,
    "footprint_sigma": FOOTPRINT_SIGMA,
    "background": [0.0, 0.0, 0.0],
}


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_cam: np.ndarray = field(repr=False)
    width: int
    height: int

    def __post_init__(self):
        m = np.array(self.world_to_cam, dtype=np.float64)
        if m.shape != (3, 4):
            raise ShapeError("world_to_cam must be 3x4")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        r = m[:, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-9 or np.linalg.det(r) < 0:
            raise ValueError("world_to_cam rotation block is not a proper rotation")
        m.setflags(write=False)
        object.__setattr__(self, "world_to_cam", m)

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __hash__(self):
        return hash((self.fx, self.fy, self.cx, self.cy, self.width, self.height, self.world_to_cam.tobytes()))

    @property
    def rotation(self):
        return self.world_to_cam[:, :3]

    @property
    def translation(self):
        return self.world_to_cam[:, 3]

    @classmethod
    def look_at(cls, eye, target, focal, width, height, up=(0.0, 1.0, 0.0)):
        """Camera at ``eye`` looking at ``target``; world ``up`` maps to image up."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        r = np.stack([right, down, fwd])
        m = np.concatenate([r, (-r @ eye)[:, None]], axis=1)
        return cls(focal, focal, (width - 1) / 2, (height - 1) / 2, m, width, height)

    def to_json(self) -> dict:
        return {
            "intrinsics": [self.fx, self.fy, self.cx, self.cy],
            "world_to_cam": self.world_to_cam.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, doc) -> "Camera":
        fx, fy, cx, cy = doc["intrinsics"]
        return cls(fx, fy, cx, cy, np.asarray(doc["world_to_cam"]), int(doc["width"]), int(doc["height"]))


@dataclass(frozen=True)
class ContextSet:
    """A list of (camera, target image) pairs that defines a residual map.

    ``residual``/``linearize`` make a ContextSet usable wherever a residual
    model is expected (the inner optimizer, normal operator, oracles).
    """

    views: tuple

    def __post_init__(self):
        views = []
        for cam, img in self.views:
            img = np.array(img, dtype=np.float64)
            if img.shape != (cam.height, cam.width, 3):
                raise ShapeError(f"image shape {img.shape} does not match camera {cam.height}x{cam.width}")
            if not np.all(np.isfinite(img)):
                raise ValueError("image contains non-finite values")
            img.setflags(write=False)
            views.append((cam, img))
        if not views:
            raise ValueError("ContextSet needs at least one view")
        object.__setattr__(self, "views", tuple(views))

    def __len__(self):
        return len(self.views)

    @property
    def cameras(self):
        return [c for c, _ in self.views]

    @property
    def images(self):
        return [i for _, i in self.views]

    @property
    def n_residuals(self) -> int:
        return sum(c.width * c.height * 3 for c, _ in self.views)

    def residual(self, p) -> np.ndarray:
        return residual(p, self)

    def linearize(self, p) -> "Linearization":
        return Linearization(p, self)


# -- projection -------------------------------------------------------------

def project(g: RenderableGaussian, cam: Camera):
    """Project one Gaussian: returns (mean2d, cov2d, depth)."""
    pc = cam.rotation @ np.asarray(g.mean) + cam.translation
    x, y, z = pc
    if z <= Z_NEAR:
        raise CulledBehindCamera(f"depth {z:.4g} <= z_near {Z_NEAR}")
    mean2d = np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
    a = np.array([[cam.fx / z, 0.0, -cam.fx * x / z**2], [0.0, cam.fy / z, -cam.fy * y / z**2]])
    rq = quat_to_rotmat(g.rot)
    sigma = rq @ np.diag(np.asarray(g.scale) ** 2) @ rq.T
    t = a @ cam.rotation
    cov2d = t @ sigma @ t.T + BLUR * np.eye(2)
    return mean2d, 0.5 * (cov2d + cov2d.T), float(z)


def _project_all(p, cam: Camera, with_jac: bool):
    """Vectorized projection of all Gaussians.

    Returns depth (N,), visible mask (N,), mean2d (N,2), cov (N,3) as
    (a, b, c) = (S00, S01, S11), opacity (N,), colors (N,3) and, if
    requested, the local Jacobian (N, 9, 14) of
    [m0, m1, a, b, c, opacity, col0, col1, col2] w.r.t. the 14 raw params.
    """
    means, scales, quats, opa, cols = activate_arrays(p)
    n = means.shape[0]
    rc, tc = cam.rotation, cam.translation
    pc = means @ rc.T + tc
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    vis = z > Z_NEAR
    zs = np.where(vis, z, 1.0)  # avoid division warnings for culled Gaussians
    fx, fy = cam.fx, cam.fy
    mean2d = np.stack([fx * x / zs + cam.cx, fy * y / zs + cam.cy], axis=1)

    a = np.zeros((n, 2, 3))
    a[:, 0, 0] = fx / zs
    a[:, 0, 2] = -fx * x / zs**2
    a[:, 1, 1] = fy / zs
    a[:, 1, 2] = -fy * y / zs**2
    t = a @ rc
    rq = quat_to_rotmat(quats)
    tr = t @ rq
    m = tr * scales[:, None, :]
    cov = m @ np.swapaxes(m, 1, 2) + BLUR * np.eye(2)
    cov3 = np.stack([cov[:, 0, 0], 0.5 * (cov[:, 0, 1] + cov[:, 1, 0]), cov[:, 1, 1]], axis=1)
    if not with_jac:
        return z, vis, mean2d, cov3, opa, cols, None

    eye = np.tile(np.eye(STRIDE), (n, 1))
    d_mean, d_scale, d_quat, d_opa, d_col = activate_jvp(p, eye)
    dpc = np.einsum("ij,njk->nik", rc, d_mean)
    dx, dy, dz = dpc[:, 0], dpc[:, 1], dpc[:, 2]
    zc, xc, yc = zs[:, None], x[:, None], y[:, None]
    dm0 = fx * (dx / zc - xc * dz / zc**2)
    dm1 = fy * (dy / zc - yc * dz / zc**2)

    da = np.zeros((n, 2, 3, STRIDE))
    da[:, 0, 0] = -fx * dz / zc**2
    da[:, 0, 2] = -fx * (dx / zc**2 - 2 * xc * dz / zc**3)
    da[:, 1, 1] = -fy * dz / zc**2
    da[:, 1, 2] = -fy * (dy / zc**2 - 2 * yc * dz / zc**3)
    dt = np.einsum("nijk,jl->nilk", da, rc)
    drq = quat_to_rotmat_jvp(quats, d_quat)
    dtr = np.einsum("nijk,njl->nilk", dt, rq) + np.einsum("nij,njlk->nilk", t, drq)
    dm = dtr * scales[:, None, :, None] + tr[..., None] * d_scale[:, None, :, :]
    dcov = np.einsum("nijk,nlj->nilk", dm, m)
    dcov = dcov + np.swapaxes(dcov, 1, 2)

    jac = np.empty((n, 9, STRIDE))
    jac[:, 0] = dm0
    jac[:, 1] = dm1
    jac[:, 2] = dcov[:, 0, 0]
    jac[:, 3] = dcov[:, 0, 1]
    jac[:, 4] = dcov[:, 1, 1]
    jac[:, 5] = d_opa
    jac[:, 6:9] = d_col
    return z, vis, mean2d, cov3, opa, cols, jac


def _pixel_grid(cam: Camera):
    ys, xs = np.mgrid[0 : cam.height, 0 : cam.width]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


@dataclass
class _ViewState:
    order: np.ndarray      # visible Gaussian indices, front to back
    image: np.ndarray      # (P, 3)
    alpha: np.ndarray      # (P, Nv)
    trans: np.ndarray      # (P, Nv) transmittance before each Gaussian
    final_trans: np.ndarray  # (P,)
    coef: np.ndarray | None = None   # (P, Nv, 6) d alpha / d [m0, m1, a, b, c, opa]
    weight: np.ndarray | None = None  # (P, Nv, 3) d color / d alpha
    jac: np.ndarray | None = None     # (Nv, 9, 14)


def _render_view(p, cam: Camera, with_grad: bool) -> _ViewState:
    z, vis, mean2d, cov3, opa, cols, jac = _project_all(p, cam, with_grad)
    idx = np.flatnonzero(vis)
    order = idx[np.argsort(z[idx], kind="stable")]
    pix = _pixel_grid(cam)
    npix = pix.shape[0]
    if order.size == 0:
        return _ViewState(order, np.zeros((npix, 3)), np.zeros((npix, 0)), np.zeros((npix, 0)),
                          np.ones(npix), np.zeros((npix, 0, 6)), np.zeros((npix, 0, 3)),
                          np.zeros((0, 9, STRIDE)))

    a, b, c = cov3[order].T
    det = a * c - b * b
    qa, qb, qc = c / det, -b / det, a / det  # inverse covariance
    d = pix[:, None, :] - mean2d[order][None]
    d0, d1 = d[..., 0], d[..., 1]
    e0 = qa * d0 + qb * d1
    e1 = qb * d0 + qc * d1
    power = d0 * e0 + d1 * e1
    g = np.exp(-0.5 * power)
    alpha = opa[order] * g
    keep = (power <= FOOTPRINT_SIGMA**2) & (alpha >= ALPHA_MIN)
    g = np.where(keep, g, 0.0)
    alpha = np.where(keep, alpha, 0.0)

    nv = order.size
    trans = np.empty((npix, nv))
    t = np.ones(npix)
    col = cols[order]
    image = np.zeros((npix, 3))
    for k in range(nv):
        trans[:, k] = t
        image += (alpha[:, k] * t)[:, None] * col[k]
        t = t * (1.0 - alpha[:, k])
    state = _ViewState(order, image, alpha, trans, t)
    if not with_grad:
        return state

    # color accumulated behind each Gaussian, normalized by its own transmittance
    behind = np.empty((npix, nv, 3))
    acc = np.zeros((npix, 3))
    for k in range(nv - 1, -1, -1):
        behind[:, k] = acc
        acc = col[k] * alpha[:, k, None] + (1.0 - alpha[:, k, None]) * acc
    state.weight = trans[..., None] * (col[None] - behind)
    state.coef = np.stack(
        [alpha * e0, alpha * e1, 0.5 * alpha * e0**2, alpha * e0 * e1, 0.5 * alpha * e1**2, g],
        axis=-1,
    )
    state.jac = jac[order]
    return state


def render(p, cam: Camera) -> np.ndarray:
    """Render parameters ``p`` from ``cam``; returns an (H, W, 3) image."""
    if np.asarray(p).size == 0:
        return np.zeros((cam.height, cam.width, 3))
    st = _render_view(p, cam, with_grad=False)
    return st.image.reshape(cam.height, cam.width, 3)


def render_with_transmittance(p, cam: Camera):
    """Image plus the per-pixel accumulated alpha and final transmittance."""
    st = _render_view(p, cam, with_grad=False)
    accumulated = np.sum(st.alpha * st.trans, axis=1)
    hw = (cam.height, cam.width)
    return st.image.reshape(*hw, 3), accumulated.reshape(hw), st.final_trans.reshape(hw)


def residual(p, ctx: ContextSet) -> np.ndarray:
    """Normalized residual: (render - target) over all views, times 1/sqrt(count)."""
    scale = 1.0 / np.sqrt(ctx.n_residuals)
    parts = [(render(p, cam) - img).ravel() for cam, img in ctx.views]
    return np.concatenate(parts) * scale


class Linearization:
    """Residual map of a ContextSet linearized at ``p``.

    Holds the forward intermediates once so repeated ``jvp``/``vjp`` calls
    (e.g. inside PCG) cost one pass over pixels each.
    """

    def __init__(self, p, ctx: ContextSet):
        self.p = np.array(p, dtype=np.float64)
        self.ctx = ctx
        self.n_params = self.p.size
        self.n_residuals = ctx.n_residuals
        self.scale = 1.0 / np.sqrt(self.n_residuals)
        self._views = [_render_view(self.p, cam, with_grad=True) for cam in ctx.cameras]
        self.residual = np.concatenate(
            [(st.image - img.reshape(-1, 3)).ravel() for st, img in zip(self._views, ctx.images)]
        ) * self.scale

    def jvp(self, w) -> np.ndarray:
        """J @ w for w of shape (n,) or (n, k)."""
        w = np.asarray(w, dtype=np.float64)
        if w.shape[0] != self.n_params:
            raise ShapeError(f"tangent has {w.shape[0]} rows, expected {self.n_params}")
        squeeze = w.ndim == 1
        wb = w.reshape(self.n_params // STRIDE, STRIDE, -1)
        k = wb.shape[2]
        out = []
        for st in self._views:
            npix = st.image.shape[0]
            if st.order.size == 0:
                out.append(np.zeros((npix * 3, k)))
                continue
            t = np.einsum("noj,njk->nok", st.jac, wb[st.order])
            dalpha = np.einsum("pnj,njk->pnk", st.coef, t[:, :6])
            dc = np.einsum("pnc,pnk->pck", st.weight, dalpha)
            dc += np.einsum("pn,nck->pck", st.alpha * st.trans, t[:, 6:9])
            out.append(dc.reshape(npix * 3, k))
        r = np.concatenate(out, axis=0) * self.scale
        return r[:, 0] if squeeze else r

    def vjp(self, u) -> np.ndarray:
        """J^T @ u for u of shape (m,) or (m, k)."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape[0] != self.n_residuals:
            raise ShapeError(f"cotangent has {u.shape[0]} rows, expected {self.n_residuals}")
        squeeze = u.ndim == 1
        u2 = u.reshape(self.n_residuals, -1) * self.scale
        k = u2.shape[1]
        grad = np.zeros((self.n_params // STRIDE, STRIDE, k))
        start = 0
        for st in self._views:
            npix = st.image.shape[0]
            ub = u2[start : start + npix * 3].reshape(npix, 3, k)
            start += npix * 3
            if st.order.size == 0:
                continue
            abar = np.einsum("pck,pnc->pnk", ub, st.weight)
            tbar = np.empty((st.order.size, 9, k))
            tbar[:, :6] = np.einsum("pnk,pnj->njk", abar, st.coef)
            tbar[:, 6:9] = np.einsum("pck,pn->nck", ub, st.alpha * st.trans)
            grad[st.order] += np.einsum("noj,nok->njk", st.jac, tbar)
        g = grad.reshape(self.n_params, k)
        return g[:, 0] if squeeze else g


def jvp(p, ctx: ContextSet, w) -> np.ndarray:
    return Linearization(p, ctx).jvp(w)


def vjp(p, ctx: ContextSet, u) -> np.ndarray:
    return Linearization(p, ctx).vjp(u)


# -- image I/O ----------------------------------------------------------------

def to_uint8(img) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img):
    """Write an (H, W, 3) image in [0, 1] as binary PPM (P6, maxval 255)."""
    data = to_uint8(img)
    h, w, _ = data.shape
    payload = f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes()
    if hasattr(path, "write"):
        path.write(payload)
        return
    with open(path, "wb") as f:
        f.write(payload)


def read_ppm(path) -> np.ndarray:
    if hasattr(path, "read"):
        raw = path.read()
    else:
        with open(path, "rb") as f:
            raw = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace before the pixel data
    if tokens[0] != b"P6":
        raise ValueError(f"not a binary PPM: magic {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_png(path, img):
    from PIL import Image

    Image.fromarray(to_uint8(img)).save(path)

