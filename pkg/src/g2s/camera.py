"""Pinhole camera, axis-angle SE(3) poses and differentiable inverse warping.

Arrays follow a channels-last layout: images are ``(..., H, W, C)``, depth
maps ``(..., H, W)``. Every function here broadcasts over leading batch axes
so a whole set of warps can be evaluated in one numpy pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import NonPositiveDepth, ShapeMismatch

_SMALL_ANGLE = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 2 or self.height < 2:
            raise ValueError("image must be at least 2x2")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return u, v

    def rays(self) -> np.ndarray:
        """Unit-depth rays ``(H, W, 3)`` for every pixel center."""
        u, v = self.pixel_grid()
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], -1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


# -- SO(3) / SE(3) ------------------------------------------------------------

def hat(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, broadcast over leading axes."""
    w = np.asarray(w, dtype=np.float64)
    theta2 = np.sum(w * w, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = hat(w)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.ndim > 2:
        return np.stack([so3_log(r) for r in R.reshape(-1, 3, 3)]).reshape(R.shape[:-2] + (3,))
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-4:
        # theta/sin(theta) series; vee = 2 sin(theta) * axis
        return 0.5 * (1.0 + theta * theta / 6.0) * vee
    if np.pi - theta < 1e-4:
        # near pi the antisymmetric part vanishes; read the axis off R + I
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(B[k, k])
        if np.dot(axis, vee) < 0:
            axis = -axis
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * np.sin(theta)) * vee


def so3_exp_jacobian(w: np.ndarray) -> np.ndarray:
    """Derivatives ``dR/dw_k`` stacked as ``(..., 3, 3, 3)`` with k first.

    Uses the closed form of Gallego & Yezzi for the exponential map; a
    second-order series takes over for tiny angles.
    """
    w = np.asarray(w, dtype=np.float64)
    R = so3_exp(w)
    theta2 = np.sum(w * w, axis=-1)
    E = hat(np.eye(3))                       # (3, 3, 3): E[k] = [e_k]x
    Wx = hat(w)[..., None, :, :]             # (..., 1, 3, 3)
    out = np.empty(w.shape[:-1] + (3, 3, 3))
    small = np.sqrt(theta2) < _SMALL_ANGLE
    if np.any(~small):
        I_R = np.eye(3) - R                  # (..., 3, 3)
        cols = np.swapaxes(I_R, -1, -2)      # cols[..., k, :] = (I - R) e_k
        cross = np.cross(w[..., None, :], cols)
        num = w[..., :, None, None] * Wx + hat(cross)
        big = (num @ R[..., None, :, :]) / np.where(small, 1.0, theta2)[..., None, None, None]
        out[...] = big
    if np.any(small):
        series = E + 0.5 * (E @ Wx + Wx @ E)
        out[...] = np.where(small[..., None, None, None], series, out)
    return out


def se3_exp(axis_angle, translation) -> np.ndarray:
    """4x4 homogeneous matrix ``[R(axis_angle) t; 0 1]``."""
    axis_angle = np.asarray(axis_angle, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)
    shape = np.broadcast_shapes(axis_angle.shape[:-1], translation.shape[:-1])
    T = np.zeros(shape + (4, 4))
    T[..., :3, :3] = so3_exp(axis_angle)
    T[..., :3, 3] = translation
    T[..., 3, 3] = 1.0
    return T


def se3_log(T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    T = np.asarray(T, dtype=np.float64)
    return so3_log(T[..., :3, :3]), T[..., :3, 3].copy()


@dataclass(frozen=True)
class Se3Pose:
    """Rigid motion ``x -> R(rotation) x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Se3Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Se3Pose":
        w, t = se3_log(T)
        return cls(w, t)

    @property
    def R(self) -> np.ndarray:
        return so3_exp(self.rotation)

    def matrix(self) -> np.ndarray:
        return se3_exp(self.rotation, self.translation)

    def compose(self, other: "Se3Pose") -> "Se3Pose":
        """``self * other``: apply ``other`` first."""
        R = self.R
        return Se3Pose(so3_log(R @ other.R), R @ other.translation + self.translation)

    def inverse(self) -> "Se3Pose":
        return Se3Pose(-self.rotation, -(so3_exp(-self.rotation) @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.R.T + self.translation

    def scaled(self, k: float) -> "Se3Pose":
        return Se3Pose(self.rotation, k * self.translation)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])


def inverse_params(w: np.ndarray, t: np.ndarray):
    """Parameters of the inverse pose plus the Jacobian of that map.

    Returns ``(w_inv, t_inv, dt_inv_dw, dt_inv_dt)``; ``w_inv = -w`` so its
    Jacobian is ``-I`` and is left implicit.
    """
    w = np.asarray(w, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    Rt = so3_exp(-w)
    t_inv = -np.einsum("...ij,...j->...i", Rt, t)
    # d(-R(-w) t)/dw_k = (dR/dw_k)(-w) t
    dR = so3_exp_jacobian(-w)
    dt_dw = np.einsum("...kij,...j->...ik", dR, t)
    return -w, t_inv, dt_dw, -Rt


# -- projection -----------------------------------------------------------------

def backproject(pixel, depth, K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame 3D point(s) for pixel ``(u, v)`` at metric ``depth``."""
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise NonPositiveDepth("depth must be positive", min_depth=float(np.min(depth)))
    u, v = pixel[..., 0], pixel[..., 1]
    return np.stack([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth,
                     np.broadcast_to(depth, np.broadcast_shapes(u.shape, depth.shape))], -1)


def project(points, K: CameraIntrinsics) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    return np.stack([K.fx * points[..., 0] / z + K.cx, K.fy * points[..., 1] / z + K.cy], -1)


# -- sampling -------------------------------------------------------------------

@dataclass
class Sample:
    values: np.ndarray   # (..., C)
    du: np.ndarray       # (..., C)
    dv: np.ndarray       # (..., C)
    valid: np.ndarray    # (...)


def _sample_batched(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> Sample:
    """Bilinear lookup of ``img (B, H, W, C)`` at coordinates ``u, v (B, ...)``."""
    B, H, W, C = img.shape
    ok = np.isfinite(u) & np.isfinite(v)
    valid = ok & (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    uu = np.where(valid, u, 0.0)
    vv = np.where(valid, v, 0.0)
    u0 = np.clip(np.floor(uu), 0, W - 2).astype(np.intp)
    v0 = np.clip(np.floor(vv), 0, H - 2).astype(np.intp)
    fu = (uu - u0)[..., None]
    fv = (vv - v0)[..., None]
    flat = img.reshape(B * H * W, C)
    base = (np.arange(B).reshape((B,) + (1,) * (u.ndim - 1)) * (H * W)) + v0 * W + u0
    i00 = flat[base]
    i01 = flat[base + 1]
    i10 = flat[base + W]
    i11 = flat[base + W + 1]
    top = i00 + fu * (i01 - i00)
    bot = i10 + fu * (i11 - i10)
    values = top + fv * (bot - top)
    du = (1.0 - fv) * (i01 - i00) + fv * (i11 - i10)
    dv = bot - top
    m = valid[..., None]
    return Sample(np.where(m, values, 0.0), np.where(m, du, 0.0), np.where(m, dv, 0.0), valid)


def bilinear_sample(img: np.ndarray, u, v) -> Sample:
    """Sample ``img (H, W, C)`` (or ``(H, W)``) at continuous pixel coordinates.

    Out-of-bounds coordinates yield ``valid=False`` with zero value and zero
    derivatives; ``du``/``dv`` are the exact partials of the interpolant.
    """
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    shape = np.broadcast_shapes(u.shape, v.shape)
    s = _sample_batched(img[None], np.broadcast_to(u, shape)[None], np.broadcast_to(v, shape)[None])
    out = Sample(s.values[0], s.du[0], s.dv[0], s.valid[0])
    if squeeze:
        out = Sample(out.values[..., 0], out.du[..., 0], out.dv[..., 0], out.valid)
    return out


# -- warping --------------------------------------------------------------------

@dataclass
class WarpResult:
    image: np.ndarray    # (..., H, W, C) synthesized target, 0 where invalid
    valid: np.ndarray    # (..., H, W)
    u: np.ndarray        # (..., H, W) sample coordinates in the source
    v: np.ndarray


@dataclass
class _WarpCache:
    result: WarpResult
    batch: tuple
    depth: np.ndarray    # (N, H, W) flattened batch
    R: np.ndarray        # (N, 3, 3)
    dq: np.ndarray       # (N, H, W, C, 3) d(sampled value)/d(source-frame point)
    K: CameraIntrinsics


def _check_shapes(source: np.ndarray, depth: np.ndarray, K: CameraIntrinsics):
    if source.ndim < 3 or source.shape[-3:-1] != K.shape:
        raise ShapeMismatch(f"source shape {source.shape} does not match camera {K.shape}",
                            source=list(source.shape), camera=list(K.shape))
    if depth.shape[-2:] != K.shape:
        raise ShapeMismatch(f"depth shape {depth.shape} does not match camera {K.shape}",
                            depth=list(depth.shape), camera=list(K.shape))


def _flat(a: np.ndarray, batch: tuple, tail: tuple) -> np.ndarray:
    return np.ascontiguousarray(np.broadcast_to(a, batch + tail).reshape((-1,) + tail))


def _warp(source, depth, rotation, translation, K: CameraIntrinsics) -> _WarpCache:
    source = np.asarray(source, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    _check_shapes(source, depth, K)
    rotation = np.asarray(rotation, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)
    batch = np.broadcast_shapes(source.shape[:-3], depth.shape[:-2],
                                rotation.shape[:-1], translation.shape[:-1])
    H, W, C = source.shape[-3:]
    src = _flat(source, batch, (H, W, C))
    d = _flat(depth, batch, (H, W))
    R = _flat(so3_exp(rotation), batch, (3, 3))
    t = _flat(translation, batch, (3,))
    image, valid, u, v, dq = _kernels.warp_forward(src, d, R, t, K.fx, K.fy, K.cx, K.cy)
    result = WarpResult(image.reshape(batch + (H, W, C)), valid.reshape(batch + (H, W)),
                        u.reshape(batch + (H, W)), v.reshape(batch + (H, W)))
    return _WarpCache(result, batch, d, R, dq, K)


def warp(source, depth, pose: Se3Pose | tuple, K: CameraIntrinsics) -> WarpResult:
    """Synthesize the target view by sampling ``source`` through ``pose``.

    ``pose`` maps target-frame points into the source frame. Pixels that
    land outside the source image or behind the camera are invalid.
    """
    w, t = _pose_params(pose)
    return _warp(source, depth, w, t, K).result


def _pose_params(pose):
    if isinstance(pose, Se3Pose):
        return pose.rotation, pose.translation
    w, t = pose
    return np.asarray(w, dtype=np.float64), np.asarray(t, dtype=np.float64)


@dataclass
class WarpJacobians:
    depth: np.ndarray        # (..., H, W, C): d image / d own-pixel depth
    rotation: np.ndarray     # (..., H, W, C, 3)
    translation: np.ndarray  # (..., H, W, C, 3)


def warp_jacobians(source, depth, pose, K: CameraIntrinsics) -> tuple[WarpResult, WarpJacobians]:
    """Per-pixel Jacobians of the synthesized image.

    A synthesized pixel depends only on its own depth, so the depth Jacobian
    is returned as its diagonal. Invalid pixels get all-zero rows.
    """
    w, t = _pose_params(pose)
    c = _warp(source, depth, w, t, K)
    H, W, C = c.result.image.shape[-3:]
    dq = c.dq.reshape(c.batch + (H, W, C, 3))
    R = c.R.reshape(c.batch + (3, 3))
    points = c.depth.reshape(c.batch + (H, W))[..., None] * K.rays()
    dR = np.broadcast_to(so3_exp_jacobian(w), c.batch + (3, 3, 3))
    ray_s = np.einsum("...ij,hwj->...hwi", R, K.rays())
    jd = np.einsum("...hwcj,...hwj->...hwc", dq, ray_s)
    dQ_dw = np.einsum("...kij,...hwj->...hwik", dR, points)
    jw = np.einsum("...hwci,...hwik->...hwck", dq, dQ_dw)
    return c.result, WarpJacobians(jd, jw, dq.copy())


def warp_vjp(cache: _WarpCache, grad_image: np.ndarray):
    """Pull ``dL/d image`` back to ``(dL/d depth, dL/dR, dL/dt)``."""
    K = cache.K
    H, W, C = cache.result.image.shape[-3:]
    g = _flat(grad_image, cache.batch, (H, W, C))
    gd, gR, gt = _kernels.warp_backward(g, cache.dq, cache.depth, cache.R,
                                        K.fx, K.fy, K.cx, K.cy)
    b = cache.batch
    return gd.reshape(b + (H, W)), gR.reshape(b + (3, 3)), gt.reshape(b + (3,))


def rotation_grad(w: np.ndarray, g_R: np.ndarray) -> np.ndarray:
    """Chain ``dL/dR`` to ``dL/dw`` through the exponential map."""
    return np.einsum("...kij,...ij->...k", so3_exp_jacobian(w), g_R)


# -- depth parameterization -----------------------------------------------------

@dataclass(frozen=True)
class DepthRange:
    """Bounded inverse-depth decoding ``d = 1 / (a * sigmoid(x) + b)``."""

    min_depth: float = 0.1
    max_depth: float = 100.0

    @property
    def a(self) -> float:
        return 1.0 / self.min_depth - 1.0 / self.max_depth

    @property
    def b(self) -> float:
        return 1.0 / self.max_depth

    def disparity(self, x):
        return self.a / (1.0 + np.exp(-np.asarray(x))) + self.b

    def depth(self, x):
        return 1.0 / self.disparity(x)

    def encode(self, depth):
        s = (1.0 / np.asarray(depth, dtype=np.float64) - self.b) / self.a
        if np.any((s <= 0) | (s >= 1)):
            raise ValueError(f"depth outside ({self.min_depth}, {self.max_depth})")
        return np.log(s) - np.log1p(-s)

    def disparity_grad(self, x):
        """``d disparity / dx``."""
        sig = 1.0 / (1.0 + np.exp(-np.asarray(x)))
        return self.a * sig * (1.0 - sig)
