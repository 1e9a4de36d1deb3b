"""Self-supervision losses and their analytic gradients.

The appearance term is the usual SSIM/L1 photometric error with per-pixel
minimum reprojection and auto-masking plus an edge-aware smoothness prior.
The GPS term penalizes the squared deviation from one of the ratio between
GPS displacement magnitude and predicted translation magnitude; its weight
follows a per-epoch schedule.

Everything broadcasts over leading batch axes: a batch of ``B`` triplets is
passed as ``(B, H, W, C)`` images, ``(B, H, W)`` depths and ``(B, 2, 3)`` pose
parameters, and the reported loss is the batch mean.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .camera import (
    CameraIntrinsics,
    Se3Pose,
    WarpResult,
    _warp,
    rotation_grad,
    warp_vjp,
)
from .errors import (
    ConfigError,
    DegenerateTranslation,
    EpochOutOfRange,
    ShapeMismatch,
    ZeroMeanDisparity,
)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
MIN_TRANSLATION = 1e-9
# residuals this small are rounding noise; treat |r| as flat there
L1_DEADZONE = 1e-12


@dataclass(frozen=True)
class Weighting:
    mode: str = "exp"          # "exp" | "linear" | "const"
    constant: float = 1.0

    def __post_init__(self):
        if self.mode not in ("exp", "linear", "const"):
            raise ConfigError(f"unknown weighting mode {self.mode!r}", field="weighting")

    @classmethod
    def parse(cls, text: str) -> "Weighting":
        text = text.strip().lower()
        if text in ("exp", "exponential", "ours"):
            return cls("exp")
        if text == "linear":
            return cls("linear")
        m = re.fullmatch(r"(?:const|constant)[:(]\s*([-+0-9.eE]+)\s*\)?", text)
        if m:
            return cls("const", float(m.group(1)))
        raise ConfigError(f"cannot parse weighting {text!r}; use const:<c>, linear or exp",
                          field="weighting")

    def __str__(self) -> str:
        return f"const:{self.constant!r}" if self.mode == "const" else self.mode


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.85
    smoothness_weight: float = 1e-3
    automask_epsilon: float = 1e-5
    epoch_max: int = 20
    weighting: Weighting = field(default_factory=Weighting)
    fractional_epochs: bool = False

    def __post_init__(self):
        if isinstance(self.weighting, str):
            object.__setattr__(self, "weighting", Weighting.parse(self.weighting))
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]", field="loss.alpha")
        if self.smoothness_weight < 0:
            raise ConfigError("smoothness_weight must be >= 0", field="loss.smoothness_weight")
        if self.automask_epsilon < 0:
            raise ConfigError("automask_epsilon must be >= 0", field="loss.automask_epsilon")
        if int(self.epoch_max) != self.epoch_max or self.epoch_max < 1:
            raise ConfigError("epoch_max must be an integer >= 1", field="loss.epoch_max")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weighting"] = str(self.weighting)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown loss fields {sorted(unknown)}",
                              field="loss." + sorted(unknown)[0])
        if "weighting" in d and isinstance(d["weighting"], str):
            d["weighting"] = Weighting.parse(d["weighting"])
        return cls(**d)


# -- SSIM -----------------------------------------------------------------------

def _flat_apply(fn, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    out = fn(np.ascontiguousarray(x.reshape((-1,) + shape[-3:])))
    return out.reshape(shape)


def box3(x: np.ndarray) -> np.ndarray:
    """3x3 mean over the H, W axes of ``(..., H, W, C)`` with reflect padding."""
    return _flat_apply(_kernels.box3, x)


def box3_adjoint(g: np.ndarray) -> np.ndarray:
    """Transpose of :func:`box3`."""
    return _flat_apply(_kernels.box3_adjoint, g)


@dataclass
class _SsimCache:
    x: np.ndarray        # flattened (N, H, W, C)
    y: np.ndarray
    coef: np.ndarray     # partials of S w.r.t. the second image's moments
    S: np.ndarray        # unflattened SSIM map


def _ssim_stats(x: np.ndarray):
    mu = box3(x)
    return mu, box3(x * x) - mu * mu


def _ssim(x, y, x_stats=None) -> _SsimCache:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu_x, var_x = x_stats if x_stats is not None else _ssim_stats(x)
    shape = np.broadcast_shapes(x.shape, y.shape)
    tail = shape[-3:]

    def flat(a):
        return np.ascontiguousarray(np.broadcast_to(a, shape).reshape((-1,) + tail))

    xf, yf = flat(x), flat(y)
    S, coef = _kernels.ssim_forward(xf, yf, flat(mu_x), flat(var_x), SSIM_C1, SSIM_C2)
    return _SsimCache(xf, yf, coef, S.reshape(shape))


def _ssim_backward(c: _SsimCache, g: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the second image ``y`` given ``dL/dS``."""
    shape = c.S.shape
    g = np.ascontiguousarray(np.broadcast_to(g, shape).reshape(c.x.shape))
    return _kernels.ssim_backward(c.x, c.y, g, c.coef).reshape(shape)


def ssim(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel, per-channel SSIM over 3x3 windows."""
    a = _as_image(a)
    b = _as_image(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"ssim inputs differ: {a.shape} vs {b.shape}")
    return _ssim(a, b).S


def _as_image(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


# -- photometric ----------------------------------------------------------------

def loss_support(valid: np.ndarray) -> np.ndarray:
    """Pixels whose whole 3x3 SSIM window is valid."""
    v = np.asarray(valid, dtype=np.float64)[..., None]
    return box3(v)[..., 0] > 1.0 - 1e-9


@dataclass
class _PhotoCache:
    ssim: _SsimCache
    diff: np.ndarray
    support: np.ndarray
    alpha: float


def _photometric(target, synth, valid, alpha, target_stats=None):
    c = _ssim(target, synth, target_stats)
    diff = synth - target
    C = target.shape[-1]
    pe = (alpha * 0.5 * (1.0 - c.S) + (1.0 - alpha) * np.abs(diff)).sum(-1) / C
    support = loss_support(valid) if valid is not None else np.ones(pe.shape, dtype=bool)
    pe = np.where(support, pe, np.inf)
    return pe, _PhotoCache(c, diff, support, alpha)


def _photometric_backward(c: _PhotoCache, g: np.ndarray) -> np.ndarray:
    """``g`` is ``dL/dpe`` (zero where unsupported); returns ``dL/dsynth``."""
    C = c.diff.shape[-1]
    g = np.where(c.support, g, 0.0)[..., None]
    sign = np.where(np.abs(c.diff) > L1_DEADZONE, np.sign(c.diff), 0.0)
    return (_ssim_backward(c.ssim, g * (-0.5 * c.alpha / C))
            + g * ((1.0 - c.alpha) / C) * sign)


def photometric_error(target, synthesized, alpha: float = 0.85) -> np.ndarray:
    """Channel-averaged ``alpha (1 - SSIM)/2 + (1 - alpha) L1`` per pixel.

    Pixels outside the warp's support (any invalid pixel in their 3x3
    window) are excluded and reported as ``+inf``.
    """
    target = _as_image(target)
    if isinstance(synthesized, WarpResult):
        image, valid = synthesized.image, synthesized.valid
    else:
        image, valid = _as_image(synthesized), None
    if image.shape[-3:] != target.shape[-3:]:
        raise ShapeMismatch(f"target {target.shape} vs synthesized {image.shape}")
    return _photometric(target, image, valid, alpha)[0]


def identity_errors(target, sources: Sequence[np.ndarray], alpha: float = 0.85) -> np.ndarray:
    """Photometric error of each unwarped source against the target, stacked."""
    return np.stack([photometric_error(target, s, alpha) for s in sources])


@dataclass
class AutomaskResult:
    loss: float
    per_pixel: np.ndarray   # min reprojection error, 0 where masked out
    mask: np.ndarray        # pixels kept by the auto-mask
    choice: np.ndarray      # index of the winning source per pixel


def _min_reprojection(reproj: np.ndarray, identity: np.ndarray, eps: float):
    """``reproj``/``identity`` are ``(..., S, H, W)``; reduces over S."""
    choice = np.argmin(reproj, axis=-3)
    best = np.take_along_axis(reproj, choice[..., None, :, :], axis=-3)[..., 0, :, :]
    ident = identity.min(axis=-3)
    # stationary pixels: identity error wins ties within eps
    mask = np.isfinite(best) & (best + eps < ident)
    count = mask.sum(axis=(-2, -1))
    per_pixel = np.where(mask, best, 0.0)
    loss = per_pixel.sum(axis=(-2, -1)) / np.maximum(count, 1)
    return loss, per_pixel, mask, choice, count


def min_reprojection_with_automask(target, warped_prev: WarpResult, warped_next: WarpResult,
                                   identity: np.ndarray, alpha: float = 0.85,
                                   epsilon: float = 1e-5) -> AutomaskResult:
    """Per-pixel minimum over both sources, masked against identity errors."""
    target = _as_image(target)
    if warped_prev.image.shape != warped_next.image.shape or \
            warped_prev.image.shape[-3:] != target.shape[-3:]:
        raise ShapeMismatch("warped sources and target differ in shape")
    reproj = np.stack([photometric_error(target, warped_prev, alpha),
                       photometric_error(target, warped_next, alpha)], axis=-3)
    identity = np.asarray(identity, dtype=np.float64)
    if identity.shape[-2:] != target.shape[-3:-1]:
        raise ShapeMismatch("identity errors do not match target shape")
    if identity.ndim == reproj.ndim - 1:
        identity = identity[..., None, :, :]
    loss, per_pixel, mask, choice, _ = _min_reprojection(reproj, identity, epsilon)
    return AutomaskResult(float(np.mean(loss)), per_pixel, mask, choice)


def masked_mean(error: np.ndarray) -> float:
    """Mean of the finite entries of an error map (0 if none)."""
    finite = np.isfinite(error)
    return float(error[finite].mean()) if finite.any() else 0.0


# -- smoothness -----------------------------------------------------------------

def _smoothness(disp: np.ndarray, image: np.ndarray):
    """Returns ``(value (...), grad wrt disp (..., H, W))``."""
    mean = disp.mean(axis=(-2, -1), keepdims=True)
    if np.any(mean < 1e-7):
        raise ZeroMeanDisparity("mean disparity below 1e-7")
    n = disp / mean
    gx = n[..., :, 1:] - n[..., :, :-1]
    gy = n[..., 1:, :] - n[..., :-1, :]
    wx = np.exp(-np.abs(image[..., :, 1:, :] - image[..., :, :-1, :]).mean(-1))
    wy = np.exp(-np.abs(image[..., 1:, :, :] - image[..., :-1, :, :]).mean(-1))
    value = (np.abs(gx) * wx).mean(axis=(-2, -1)) + (np.abs(gy) * wy).mean(axis=(-2, -1))

    cx = np.sign(gx) * wx / (gx.shape[-2] * gx.shape[-1])
    cy = np.sign(gy) * wy / (gy.shape[-2] * gy.shape[-1])
    gn = np.zeros_like(disp)
    gn[..., :, 1:] += cx
    gn[..., :, :-1] -= cx
    gn[..., 1:, :] += cy
    gn[..., :-1, :] -= cy
    N = disp.shape[-1] * disp.shape[-2]
    proj = (gn * n).sum(axis=(-2, -1), keepdims=True) / N
    return value, (gn - proj) / mean


def smoothness(disparity, image) -> float:
    """Edge-aware first-order smoothness of mean-normalized disparity."""
    disparity = np.asarray(disparity, dtype=np.float64)
    image = _as_image(image)
    if disparity.shape != image.shape[:-1]:
        raise ShapeMismatch(f"disparity {disparity.shape} vs image {image.shape}")
    return float(np.mean(_smoothness(disparity, image)[0]))


def smoothness_grad(disparity, image) -> np.ndarray:
    disparity = np.asarray(disparity, dtype=np.float64)
    return _smoothness(disparity, _as_image(image))[1]


# -- GPS-to-scale ---------------------------------------------------------------

def _g2s(gps: np.ndarray, translations: np.ndarray):
    """``gps (..., P)`` with NaN for skipped pairs, ``translations (..., P, 3)``."""
    have = np.isfinite(gps)
    norm = np.sqrt(np.sum(translations * translations, axis=-1))
    if np.any(have & (norm <= MIN_TRANSLATION)):
        raise DegenerateTranslation("predicted translation magnitude <= 1e-9 on a GPS pair",
                                    min_norm=float(norm[have].min()))
    safe = np.where(have, norm, 1.0)
    ratio = np.where(have, gps, 1.0) / safe
    value = np.where(have, (ratio - 1.0) ** 2, 0.0).sum(-1)
    coef = np.where(have, -2.0 * (ratio - 1.0) * ratio / (safe * safe), 0.0)
    grad = coef[..., None] * translations
    return value, grad, np.where(have, ratio, np.nan)


def g2s_loss(gps_magnitudes, predicted_translations):
    """Sum over pairs of ``(|G| / |T| - 1)^2`` and its gradient w.r.t. ``T``.

    ``gps_magnitudes`` entries that are None or NaN skip their pair.
    Returns ``(value, grad, ratios)``.
    """
    gps = np.array([np.nan if g is None else g for g in np.asarray(gps_magnitudes, dtype=object)
                    .reshape(-1)], dtype=np.float64).reshape(np.shape(gps_magnitudes))
    T = np.asarray(predicted_translations, dtype=np.float64)
    if T.shape[:-1] != gps.shape or T.shape[-1] != 3:
        raise ShapeMismatch(f"{gps.shape} magnitudes vs translations {T.shape}")
    value, grad, ratio = _g2s(gps, T)
    return float(np.sum(value)), grad, ratio


def g2s_weight(epoch, config: LossConfig) -> float:
    if not config.fractional_epochs and int(epoch) != epoch:
        raise EpochOutOfRange(f"epoch {epoch} is not an integer", epoch=epoch)
    if not 0 <= epoch <= config.epoch_max:
        raise EpochOutOfRange(f"epoch {epoch} outside [0, {config.epoch_max}]",
                              epoch=epoch, epoch_max=config.epoch_max)
    mode = config.weighting
    if mode.mode == "exp":
        return math.exp(epoch - config.epoch_max)
    if mode.mode == "linear":
        return epoch / config.epoch_max
    return mode.constant


# -- total loss -----------------------------------------------------------------

@dataclass
class ImageTriplet:
    """Target frame with its two neighbours.

    Arrays may carry leading batch axes. ``gps`` holds the GPS displacement
    magnitude of the (prev->target, next->target) pairs, NaN where absent.
    """

    prev: np.ndarray
    target: np.ndarray
    next: np.ndarray
    K: CameraIntrinsics
    gps: np.ndarray | None = None

    def __post_init__(self):
        self.prev = _as_image(self.prev)
        self.target = _as_image(self.target)
        self.next = _as_image(self.next)
        if not (self.prev.shape == self.target.shape == self.next.shape):
            raise ShapeMismatch("triplet frames differ in shape")
        if self.target.shape[-3:-1] != self.K.shape:
            raise ShapeMismatch(f"frames {self.target.shape} do not match camera {self.K.shape}")
        batch = self.target.shape[:-3]
        if self.gps is None:
            self.gps = np.full(batch + (2,), np.nan)
        else:
            self.gps = np.array([np.nan if g is None else g for g in
                                 np.asarray(self.gps, dtype=object).reshape(-1)],
                                dtype=np.float64).reshape(batch + (2,))
        self._cache: dict = {}

    @property
    def batch_shape(self) -> tuple:
        return self.target.shape[:-3]

    def sources(self) -> np.ndarray:
        """``(..., 2, H, W, C)`` stack of (prev, next)."""
        return np.stack([self.prev, self.next], axis=-4)

    def cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]


@dataclass
class LossReport:
    photometric: float
    smoothness: float
    g2s: float
    w: float
    total: float
    mask_frac: float
    ratios: np.ndarray

    def row(self) -> dict:
        return {"w": self.w, "photo": self.photometric, "smooth": self.smoothness,
                "g2s": self.g2s, "total": self.total, "mask_frac": self.mask_frac}


@dataclass
class LossGrad:
    depth: np.ndarray          # (..., H, W)
    rotation: np.ndarray       # (..., 2, 3)
    translation: np.ndarray    # (..., 2, 3)


def _pose_arrays(poses):
    if isinstance(poses, (list, tuple)) and len(poses) == 2 and all(
            isinstance(p, Se3Pose) for p in poses):
        return (np.stack([p.rotation for p in poses]), np.stack([p.translation for p in poses]))
    w, t = poses
    return np.asarray(w, dtype=np.float64), np.asarray(t, dtype=np.float64)


def total_loss(triplet: ImageTriplet, depth, poses, epoch, config: LossConfig,
               use_g2s: bool = True, weight: float | None = None):
    """Appearance loss plus weighted GPS-to-scale loss, with full gradient.

    ``poses`` is either ``(pose_prev, pose_next)`` as :class:`Se3Pose` or a pair
    of arrays ``(rotation (..., 2, 3), translation (..., 2, 3))``; each maps
    target-frame points into the corresponding source frame. ``weight``
    overrides the scheduled g2s weight. Batched inputs are averaged.
    """
    depth = np.asarray(depth, dtype=np.float64)
    rot, trans = _pose_arrays(poses)
    K = triplet.K
    batch = triplet.batch_shape
    if depth.shape != batch + K.shape:
        raise ShapeMismatch(f"depth {depth.shape} does not match triplet {batch + K.shape}")
    if rot.shape != batch + (2, 3) or trans.shape != batch + (2, 3):
        raise ShapeMismatch(f"poses must be {batch + (2, 3)}")
    alpha = config.alpha
    target = triplet.target
    sources = triplet.sources()
    tstats = triplet.cached("tstats", lambda: tuple(
        s[..., None, :, :, :] for s in _ssim_stats(target)))
    ident = triplet.cached(("identity", alpha), lambda: _photometric(
        target[..., None, :, :, :], sources, None, alpha, tstats)[0])

    cache = _warp(sources, depth[..., None, :, :], rot, trans, K)
    pe, pcache = _photometric(target[..., None, :, :, :], cache.result.image,
                              cache.result.valid, alpha, tstats)
    photo, _, mask, choice, count = _min_reprojection(pe, ident, config.automask_epsilon)

    disp = 1.0 / depth
    smooth, g_disp = _smoothness(disp, target)

    w = 0.0
    g2s_val = np.zeros(batch)
    g_trans_g2s = np.zeros_like(trans)
    ratios = np.full(batch + (2,), np.nan)
    if use_g2s:
        w = g2s_weight(epoch, config) if weight is None else float(weight)
        g2s_val, g_trans_g2s, ratios = _g2s(triplet.gps, trans)

    n = float(np.prod(batch)) if batch else 1.0
    # d photo / d pe: 1/count on kept pixels of the winning source
    onehot = (np.arange(2).reshape(2, 1, 1) == choice[..., None, :, :])
    g_pe = np.where(onehot & mask[..., None, :, :],
                    (1.0 / (n * np.maximum(count, 1)))[..., None, None, None], 0.0)
    g_img = _photometric_backward(pcache, g_pe)
    g_depth_pair, g_R, g_t = warp_vjp(cache, g_img)
    g_depth = g_depth_pair.sum(axis=-3)
    g_depth += config.smoothness_weight / n * g_disp * (-disp * disp)
    g_rot = rotation_grad(rot, g_R)
    g_trans = g_t + (w / n) * g_trans_g2s

    photo_m = float(np.mean(photo))
    smooth_m = float(np.mean(smooth))
    g2s_m = float(np.mean(g2s_val))
    total = photo_m + config.smoothness_weight * smooth_m + w * g2s_m
    report = LossReport(photo_m, smooth_m, g2s_m, w, total,
                        float(np.mean(mask.mean(axis=(-2, -1)))), ratios)
    return report, LossGrad(g_depth, g_rot, g_trans)


def appearance_loss(triplet: ImageTriplet, depth, poses, config: LossConfig) -> float:
    report, _ = total_loss(triplet, depth, poses, config.epoch_max, config, use_g2s=False)
    return report.photometric + config.smoothness_weight * report.smoothness
