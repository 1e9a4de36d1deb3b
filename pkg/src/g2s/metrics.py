"""Depth evaluation: Eigen and KITTI-benchmark errors, median scaling and
scale-factor statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import (ConfigError, EmptyInput, NonPositiveFactor, NoValidPixels,
                     ShapeMismatch)

DEFAULT_CAP = 80.0
OOD_CAP = 70.0
DEFAULT_MIN = 1e-3
# Garg crop as fractions of (height, width): rows 40.8%-99.2%, cols 3.6%-96.4%
GARG_CROP = (0.40810811, 0.99189189, 0.03594771, 0.96405229)


@dataclass(frozen=True)
class EvalOptions:
    cap: float = DEFAULT_CAP
    min_depth: float = DEFAULT_MIN
    crop_2to1: bool = False
    garg_crop: bool = False
    median_scaling: bool = False

    def __post_init__(self):
        if not (0 < self.min_depth < self.cap):
            raise ConfigError(f"need 0 < min_depth < cap, got {self.min_depth}, {self.cap}",
                              field="eval.min_depth")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalOptions":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown eval fields {sorted(unknown)}",
                              field="eval." + sorted(unknown)[0])
        return cls(**d)


@dataclass(frozen=True)
class EigenMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float


@dataclass(frozen=True)
class BenchmarkMetrics:
    silog: float
    sq_err_rel: float
    abs_err_rel: float
    irmse: float


@dataclass(frozen=True)
class ScaleStats:
    factors: tuple
    mu: float
    sigma: float


def center_crop_2to1(shape: tuple) -> tuple[slice, slice]:
    """Largest centred window whose width is twice its height."""
    h, w = shape
    ch, cw = (h, 2 * h) if 2 * h <= w else (w // 2, 2 * (w // 2))
    top = (h - ch) // 2
    left = (w - cw) // 2
    return slice(top, top + ch), slice(left, left + cw)


def apply_eval_options(pred, gt, options: EvalOptions = EvalOptions()):
    """Flattened ``(pred, gt)`` over jointly valid pixels.

    Crops first (2:1 centre window, then the optional Garg fractions), keeps
    pixels with ``min < gt < cap`` and clamps predictions to ``[min, cap]``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if options.crop_2to1:
        rows, cols = center_crop_2to1(gt.shape[-2:])
        pred, gt = pred[..., rows, cols], gt[..., rows, cols]
    if options.garg_crop:
        h, w = gt.shape[-2:]
        r0, r1, c0, c1 = GARG_CROP
        rows = slice(int(r0 * h), int(r1 * h))
        cols = slice(int(c0 * w), int(c1 * w))
        pred, gt = pred[..., rows, cols], gt[..., rows, cols]
    valid = np.isfinite(gt) & (gt > options.min_depth) & (gt < options.cap)
    valid &= np.isfinite(pred)
    p = np.clip(pred[valid], options.min_depth, options.cap)
    return p, gt[valid]


def lower_median(x: np.ndarray) -> float:
    """Median taking the lower-middle element of even-length samples."""
    x = np.asarray(x).reshape(-1)
    if x.size == 0:
        raise NoValidPixels("median of an empty sample")
    k = (x.size - 1) // 2
    return float(np.partition(x, k)[k])


def median_scale_factor(pred, gt, options: EvalOptions = EvalOptions()) -> float:
    p, g = apply_eval_options(pred, gt, options)
    if p.size == 0:
        raise NoValidPixels("no jointly valid pixels for median scaling")
    return lower_median(g) / lower_median(p)


def _prepared(pred, gt, options):
    p, g = apply_eval_options(pred, gt, options)
    if p.size == 0:
        raise NoValidPixels("no valid pixels to evaluate")
    if options.median_scaling:
        p = np.clip(p * (lower_median(g) / lower_median(p)), options.min_depth, options.cap)
    return p, g


def _eigen(p: np.ndarray, g: np.ndarray) -> EigenMetrics:
    thresh = np.maximum(p / g, g / p)
    diff = p - g
    return EigenMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff * diff / g)),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        a1=float(np.mean(thresh < 1.25)),
        a2=float(np.mean(thresh < 1.25 ** 2)),
        a3=float(np.mean(thresh < 1.25 ** 3)),
    )


def _benchmark(p: np.ndarray, g: np.ndarray) -> BenchmarkMetrics:
    d = np.log(p) - np.log(g)
    diff = p - g
    inv = 1.0 / p - 1.0 / g
    return BenchmarkMetrics(
        silog=100.0 * math.sqrt(max(float(np.mean(d * d) - np.mean(d) ** 2), 0.0)),
        sq_err_rel=100.0 * float(np.mean(diff * diff / g)),
        abs_err_rel=100.0 * float(np.mean(np.abs(diff) / g)),
        irmse=1000.0 * float(np.sqrt(np.mean(inv * inv))),
    )


def eigen_metrics(pred, gt, options: EvalOptions = EvalOptions()) -> EigenMetrics:
    return _eigen(*_prepared(pred, gt, options))


def benchmark_metrics(pred, gt, options: EvalOptions = EvalOptions()) -> BenchmarkMetrics:
    """KITTI depth-benchmark errors; depths in metres, iRMSE in 1/km."""
    return _benchmark(*_prepared(pred, gt, options))


def scale_stats(factors) -> ScaleStats:
    """Mean and population standard deviation of raw scale factors."""
    f = np.asarray(list(factors), dtype=np.float64).reshape(-1)
    if f.size == 0:
        raise EmptyInput("no scale factors")
    if np.any(~np.isfinite(f)) or np.any(f <= 0):
        raise NonPositiveFactor("scale factors must be positive and finite",
                                bad=[float(x) for x in f[~(np.isfinite(f) & (f > 0))]])
    mu = float(np.mean(f))
    sigma = float(np.sqrt(np.mean((f - mu) ** 2)))
    return ScaleStats(tuple(float(x) for x in f), mu, sigma)


@dataclass(frozen=True)
class ImageEval:
    scale: float
    eigen: EigenMetrics
    benchmark: BenchmarkMetrics

    def row(self) -> dict:
        out = {"scale": self.scale}
        out.update(asdict(self.eigen))
        out.update(asdict(self.benchmark))
        return out


def evaluate_image(pred, gt, options: EvalOptions = EvalOptions()) -> ImageEval:
    """Scale factor plus both metric families for one image."""
    p, g = apply_eval_options(pred, gt, options)
    if p.size == 0:
        raise NoValidPixels("no valid pixels to evaluate")
    scale = lower_median(g) / lower_median(p)
    if options.median_scaling:
        p = np.clip(p * scale, options.min_depth, options.cap)
    return ImageEval(scale, _eigen(p, g), _benchmark(p, g))


METRIC_FIELDS = ["scale"] + [f.name for f in fields(EigenMetrics)] + \
    [f.name for f in fields(BenchmarkMetrics)]
