"""Direct optimisation of per-frame depth and inter-frame poses.

Stands in for the depth and ego-motion networks: every target frame owns an
inverse-depth logit grid and every adjacent frame pair ``j -> j+1`` owns one
SE(3) edge ``E_j`` mapping frame ``j+1`` points into frame ``j``.  Triplet
``t`` warps its previous frame with ``E_{t-1}`` and its next frame with
``E_t^-1``, so neighbouring triplets share edges and scale propagates
through the chain.  An optional shared log-scale multiplies all depths and
translations at once.

Update rule (fixed, bias-corrected adaptive moments)::

    m <- b1 m + (1 - b1) g
    v <- b2 v + (1 - b2) g^2
    p <- p - lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)

GPS pairs: an adjacent pair enters the triplet g2s term when both of its
frames have a fix.  When fixes are sparser (rate simulation), consecutive
available fixes ``a < b`` that are not adjacent constrain the composed pose
``E_a ... E_{b-1}`` instead, so no unavailable fix is ever read.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .camera import (CameraIntrinsics, DepthRange, Se3Pose, inverse_params, so3_exp,
                     so3_exp_jacobian)
from .errors import ConfigError, DivergenceDetected, NoValidTriplets
from .geo import GpsTrack
from .losses import (ImageTriplet, LossConfig, LossReport, _g2s,
                     g2s_weight, total_loss)
from .metrics import EvalOptions, median_scale_factor, scale_stats
from .raster import write_f32r

DEFAULT_STATIC_THRESHOLD = 0.1
# losses below this never count as divergence, so a start at the optimum
# (initial loss ~0) does not trip the guard on step noise
DIVERGENCE_FLOOR = 1e-3
LOSS_HEADER = ["iter", "epoch", "w", "photo", "smooth", "g2s", "total", "mask_frac"]
PAIR_HEADER = ["pair", "rx", "ry", "rz", "tx", "ty", "tz"]


@dataclass(frozen=True)
class OptimConfig:
    """Optimiser settings.

    ``init_scale`` multiplies ground-truth depth and translation at start;
    ``init_jitter`` adds a smooth relative depth perturbation and matching
    pose noise so the run does not start on an exact optimum.
    ``shared_scale`` also optimises one log-scale for the whole sequence
    (see ``Params``), playing the part of the weights a depth network shares
    across frames.
    """

    epochs: int = 20
    iterations: int = 200
    lr_depth: float = 1e-3
    lr_pose: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tolerance: float = 1e-7
    divergence_factor: float = 10.0
    divergence_patience: int = 2
    static_threshold: float = DEFAULT_STATIC_THRESHOLD
    init_scale: float = 1.0
    init_jitter: float = 0.0
    shared_scale: bool = False
    lr_scale: float = 1e-2

    def __post_init__(self):
        checks = {
            "epochs": self.epochs >= 1,
            "iterations": self.iterations >= 1,
            "lr_depth": self.lr_depth > 0,
            "lr_pose": self.lr_pose > 0,
            "beta1": 0 <= self.beta1 < 1,
            "beta2": 0 <= self.beta2 < 1,
            "eps": self.eps > 0,
            "tolerance": self.tolerance >= 0,
            "divergence_factor": self.divergence_factor > 1,
            "divergence_patience": self.divergence_patience >= 1,
            "static_threshold": self.static_threshold >= 0,
            "init_scale": self.init_scale > 0,
            "init_jitter": self.init_jitter >= 0,
            "lr_scale": self.lr_scale > 0,
        }
        for name, ok in checks.items():
            if not ok:
                raise ConfigError(f"invalid optimiser setting {name}={getattr(self, name)!r}",
                                  field=f"optim.{name}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown optimiser fields {sorted(unknown)}",
                              field="optim." + sorted(unknown)[0])
        return cls(**d)


# Settings of the scale-recovery experiments: start at 0.3x the metric gauge
# with a perturbation, let depth move faster than the default, and share one
# sequence scale so sparse GPS pairs inform every frame.
RECOVERY = OptimConfig(lr_depth=3e-3, init_scale=0.3, init_jitter=0.05, shared_scale=True)


# -- static frames and GPS pairs --------------------------------------------------

def _fix_distance(track: GpsTrack, i: int, j: int) -> float:
    d = track.xyz[j] - track.xyz[i]
    if track.planar:
        d = d[[0, 2]]
    return float(np.sqrt(np.sum(d * d)))


def filter_static_frames(n_frames: int, track: GpsTrack | None,
                         threshold: float = DEFAULT_STATIC_THRESHOLD) -> list[int]:
    """Target indices of triplets whose adjacent GPS displacements all reach
    ``threshold``.

    A displacement that cannot be measured (missing fix) does not remove the
    triplet; without a track every triplet is kept.
    """
    targets = list(range(1, n_frames - 1))
    if track is None:
        return targets
    if len(track) != n_frames:
        raise ConfigError(f"track has {len(track)} fixes for {n_frames} frames",
                          field="gps")
    ok = track.available
    keep = []
    for t in targets:
        static = False
        for a, b in ((t - 1, t), (t, t + 1)):
            if ok[a] and ok[b] and _fix_distance(track, a, b) < threshold:
                static = True
        if not static:
            keep.append(t)
    return keep


def _pair_magnitudes(track: GpsTrack | None, targets: list[int]) -> np.ndarray:
    """``(B, 2)`` GPS magnitudes of (prev, target) and (target, next)."""
    out = np.full((len(targets), 2), np.nan)
    if track is None:
        return out
    ok = track.available
    for b, t in enumerate(targets):
        if ok[t - 1] and ok[t]:
            out[b, 0] = _fix_distance(track, t - 1, t)
        if ok[t] and ok[t + 1]:
            out[b, 1] = _fix_distance(track, t, t + 1)
    return out


def _chains(track: GpsTrack | None, active_edges: set) -> list[tuple[int, int, float]]:
    """Non-adjacent consecutive fixes ``(a, b, |G_b - G_a|)`` whose edges are all
    optimised."""
    if track is None:
        return []
    idx = np.flatnonzero(track.available)
    out = []
    for a, b in zip(idx[:-1], idx[1:]):
        a, b = int(a), int(b)
        if b - a >= 2 and all(j in active_edges for j in range(a, b)):
            out.append((a, b, _fix_distance(track, a, b)))
    return out


def _chain_translation(W: np.ndarray, T: np.ndarray, a: int, b: int):
    """Translation of ``E_a E_{a+1} ... E_{b-1}`` and its Jacobians.

    Returns ``(t, dt/dw (k, 3, 3), dt/dt (k, 3, 3))`` for edges ``a..b-1``.
    """
    k = b - a
    Rs = so3_exp(W[a:b])
    prefix = [np.eye(3)]
    for R in Rs[:-1]:
        prefix.append(prefix[-1] @ R)
    suffix = [np.zeros(3)] * (k + 1)
    for i in range(k - 1, -1, -1):
        suffix[i] = Rs[i] @ suffix[i + 1] + T[a + i]
    dR = so3_exp_jacobian(W[a:b])                  # (k, 3(m), 3, 3)
    dw = np.empty((k, 3, 3))
    dt = np.empty((k, 3, 3))
    for i in range(k):
        dt[i] = prefix[i]
        dw[i] = prefix[i] @ np.einsum("mij,j->im", dR[i], suffix[i + 1])
    return suffix[0], dw, dt


# -- objective ---------------------------------------------------------------------

@dataclass
class Params:
    """Optimised variables.

    ``log_scale`` multiplies every depth and every edge translation by
    ``exp(log_scale)``.  It spans exactly the gauge direction, so appearance
    terms never move it; only g2s does.
    """

    logits: np.ndarray        # (B, H, W) inverse-depth logits of the target frames
    rotation: np.ndarray      # (E, 3) edge axis-angles
    translation: np.ndarray   # (E, 3) edge translations
    log_scale: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def copy(self) -> "Params":
        return Params(self.logits.copy(), self.rotation.copy(), self.translation.copy(),
                      self.log_scale.copy())

    def arrays(self) -> list[np.ndarray]:
        return [self.logits, self.rotation, self.translation, self.log_scale]

    def depths(self, depth_range: DepthRange) -> np.ndarray:
        return math.exp(self.log_scale[0]) * depth_range.depth(self.logits)

    def translations(self) -> np.ndarray:
        return math.exp(self.log_scale[0]) * self.translation


@dataclass
class Evaluation:
    report: LossReport
    grad: Params


class Problem:
    """Loss over all kept triplets of one sequence as a function of ``Params``."""

    def __init__(self, images: np.ndarray, K: CameraIntrinsics, targets: list[int],
                 track: GpsTrack | None = None, loss_config: LossConfig = LossConfig(),
                 use_g2s: bool = True, depth_range: DepthRange = DepthRange(),
                 appearance: bool = True):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[..., None]
        if not targets:
            raise NoValidTriplets("no triplets left after static-frame removal")
        self.images = images
        self.K = K
        self.targets = list(targets)
        self.track = track
        self.config = loss_config
        self.use_g2s = use_g2s
        self.range = depth_range
        self.appearance = appearance
        self.n_edges = len(images) - 1
        t = np.asarray(self.targets)
        self.triplet = ImageTriplet(images[t - 1], images[t], images[t + 1], K,
                                    gps=_pair_magnitudes(track, self.targets))
        active = {int(j) for j in np.concatenate([t - 1, t])}
        self.active_edges = sorted(active)
        self.chains = _chains(track, active)

    @classmethod
    def from_scene(cls, scene, loss_config: LossConfig = LossConfig(), use_g2s: bool = True,
                   static_threshold: float = DEFAULT_STATIC_THRESHOLD, **kw) -> "Problem":
        targets = filter_static_frames(len(scene), scene.gps, static_threshold)
        return cls(scene.images, scene.K, targets, scene.gps, loss_config, use_g2s, **kw)

    def pair_poses(self, p: Params):
        t = np.asarray(self.targets)
        T = p.translations()
        w_inv, t_inv, dt_dw, dt_dt = inverse_params(p.rotation[t], T[t])
        rot = np.stack([p.rotation[t - 1], w_inv], axis=1)
        trans = np.stack([T[t - 1], t_inv], axis=1)
        return rot, trans, (dt_dw, dt_dt)

    def evaluate(self, p: Params, epoch, weight: float | None = None) -> Evaluation:
        cfg = self.config
        s = math.exp(p.log_scale[0])
        depth0 = self.range.depth(p.logits)
        depth = s * depth0
        T = s * p.translation
        rot, trans, (dt_dw, dt_dt) = self.pair_poses(p)
        if self.appearance:
            rep, g = total_loss(self.triplet, depth, (rot, trans), epoch, cfg,
                                use_g2s=self.use_g2s, weight=weight)
        else:
            rep, g = self._g2s_only(rot, trans, epoch, weight)
        n = float(len(self.targets))
        t = np.asarray(self.targets)

        gW = np.zeros_like(p.rotation)
        gT = np.zeros_like(p.translation)
        np.add.at(gW, t - 1, g.rotation[:, 0])
        np.add.at(gT, t - 1, g.translation[:, 0])
        gW_next = -g.rotation[:, 1] + np.einsum("bi,bik->bk", g.translation[:, 1], dt_dw)
        gT_next = np.einsum("bi,bik->bk", g.translation[:, 1], dt_dt)
        np.add.at(gW, t, gW_next)
        np.add.at(gT, t, gT_next)

        g2s_extra = 0.0
        if self.use_g2s and self.chains:
            w = rep.w
            for a, b, mag in self.chains:
                tc, dw, dt = _chain_translation(p.rotation, T, a, b)
                val, gt_c, _ = _g2s(np.array([mag]), tc[None])
                g2s_extra += float(val) / n
                gc = (w / n) * gt_c[0]
                gW[a:b] += np.einsum("i,kim->km", gc, dw)
                gT[a:b] += np.einsum("i,kij->kj", gc, dt)
            rep = LossReport(rep.photometric, rep.smoothness, rep.g2s + g2s_extra, rep.w,
                             rep.total + rep.w * g2s_extra, rep.mask_frac, rep.ratios)

        # gT is still with respect to the scaled translations here
        g_scale = np.array([float(np.sum(g.depth * depth)) + float(np.sum(gT * T))])
        # d depth / d logit = -s * depth0^2 * d disparity / d logit
        g_logits = g.depth * (-s * depth0 * depth0) * self.range.disparity_grad(p.logits)
        return Evaluation(rep, Params(g_logits, gW, s * gT, g_scale))

    def _g2s_only(self, rot, trans, epoch, weight):
        from .losses import LossGrad
        w = g2s_weight(epoch, self.config) if weight is None else float(weight)
        val, g_t, ratios = _g2s(self.triplet.gps, trans)
        n = float(len(self.targets))
        g2s_m = float(np.mean(val))
        rep = LossReport(0.0, 0.0, g2s_m, w, w * g2s_m, 0.0, ratios)
        return rep, LossGrad(np.zeros((len(self.targets),) + self.K.shape),
                             np.zeros_like(rot), (w / n) * g_t)

    def loss(self, p: Params, epoch, weight: float | None = None) -> float:
        return self.evaluate(p, epoch, weight).report.total


def params_from_truth(scene, targets: list[int], scale: float = 1.0, jitter: float = 0.0,
                      seed: int = 0, depth_range: DepthRange = DepthRange()) -> Params:
    """Ground truth scaled by ``scale`` with optional seeded perturbation.

    The depth perturbation is a smooth field: a random low-order polynomial in
    normalised image coordinates with amplitude ``jitter`` in log-depth.
    """
    rng = np.random.default_rng(seed)
    t = np.asarray(targets)
    depth = scale * scene.depths[t]
    if jitter > 0:
        h, w = depth.shape[-2:]
        yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
        basis = np.stack([np.ones_like(xx), xx, yy, xx * yy, xx * xx, yy * yy])
        coef = rng.uniform(-1.0, 1.0, size=(len(t), len(basis)))
        field_ = np.einsum("bk,khw->bhw", coef, basis) / len(basis)
        depth = depth * np.exp(jitter * field_)
    depth = np.clip(depth, 1.001 * depth_range.min_depth, 0.999 * depth_range.max_depth)
    rot, trans = [], []
    for j in range(len(scene) - 1):
        e = scene.relative_pose(j + 1, j)
        rot.append(e.rotation)
        trans.append(scale * e.translation)
    rot, trans = np.array(rot), np.array(trans)
    if jitter > 0:
        rot = rot + rng.normal(scale=0.02 * jitter, size=rot.shape)
        trans = trans * (1.0 + rng.normal(scale=jitter, size=trans.shape))
    return Params(depth_range.encode(depth), rot, trans)


# -- optimiser ---------------------------------------------------------------------

class Adam:
    def __init__(self, lrs, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = list(lrs)
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = None
        self.v = None
        self.k = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.k += 1
        c1 = 1.0 - self.b1 ** self.k
        c2 = 1.0 - self.b2 ** self.k
        for p, g, m, v, lr in zip(params, grads, self.m, self.v, self.lrs):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class OptimState:
    params: Params
    epoch: int = 0
    iteration: int = 0
    seed: int = 0


@dataclass
class RunReport:
    trajectory: list                 # per-iteration loss rows
    targets: list
    depths: np.ndarray               # (B, H, W) final decoded depth
    edges: list                      # final Se3Pose per adjacent pair
    scale_factors: list
    mu_scale: float
    sigma_scale: float
    translation_errors: list         # |t_pred| / |t_true| - 1 per active edge
    seed: int
    use_g2s: bool
    epochs_run: int
    stopped: str
    epoch_losses: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.trajectory)

    def appearance(self, smoothness_weight: float) -> float:
        last = self.trajectory[-1]
        return last["photo"] + smoothness_weight * last["smooth"]

    def summary(self) -> dict:
        """Everything except the per-iteration trajectory and the wall time."""
        last = self.trajectory[-1] if self.trajectory else {}
        return {
            "seed": self.seed,
            "use_g2s": self.use_g2s,
            "iterations": self.iterations,
            "epochs_run": self.epochs_run,
            "stopped": self.stopped,
            "epoch_losses": list(self.epoch_losses),
            "targets": list(self.targets),
            "scale_factors": list(self.scale_factors),
            "mu_scale": self.mu_scale,
            "sigma_scale": self.sigma_scale,
            "translation_errors": list(self.translation_errors),
            "final_loss": {k: last.get(k) for k in LOSS_HEADER[2:]},
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOSS_HEADER)
        for row in self.trajectory:
            w.writerow([row["iter"], row["epoch"]] + [repr(float(row[k])) for k in LOSS_HEADER[2:]])
        return buf.getvalue()

    def pose_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PAIR_HEADER)
        for j, e in enumerate(self.edges):
            w.writerow([j] + [repr(float(v)) for v in e.as_vector()])
        return buf.getvalue()

    def save(self, directory) -> Path:
        """Write report.json, loss.csv, poses.csv, depth rasters and timing.json."""
        root = Path(directory)
        (root / "depth").mkdir(parents=True, exist_ok=True)
        (root / "report.json").write_text(self.to_json())
        (root / "loss.csv").write_text(self.loss_csv())
        (root / "poses.csv").write_text(self.pose_csv())
        for t, d in zip(self.targets, self.depths):
            write_f32r(root / "depth" / f"{t:03d}.f32r", d)
        (root / "timing.json").write_text(json.dumps({"wall_time": self.wall_time}) + "\n")
        return root


def _scale_report(scene, targets, depths, edges, options: EvalOptions):
    factors = [median_scale_factor(d, scene.depths[t], options)
               for t, d in zip(targets, depths)]
    stats = scale_stats(factors)
    errs = []
    for j, e in enumerate(edges):
        true = np.linalg.norm(scene.relative_pose(j + 1, j).translation)
        errs.append(float(np.linalg.norm(e.translation) / true - 1.0) if true > 0 else 0.0)
    return factors, stats, errs


def run_optimization(scene, loss_config: LossConfig = LossConfig(),
                     optim_config: OptimConfig = OptimConfig(), use_g2s: bool = True,
                     seed: int = 0, init: Params | None = None,
                     eval_options: EvalOptions = EvalOptions()) -> RunReport:
    """Optimise depth and poses of ``scene`` and score the result against truth.

    Epochs run from 1 to ``epoch_max`` so the final epoch has the full g2s
    weight.  Inside an epoch, iterations stop early once the relative loss
    change drops below ``tolerance``.
    """
    if optim_config.epochs != loss_config.epoch_max:
        raise ConfigError(f"optim.epochs ({optim_config.epochs}) must equal "
                          f"loss.epoch_max ({loss_config.epoch_max})", field="optim.epochs")
    start = time.perf_counter()
    problem = Problem.from_scene(scene, loss_config, use_g2s,
                                 static_threshold=optim_config.static_threshold)
    if init is None:
        init = params_from_truth(scene, problem.targets, optim_config.init_scale,
                                 optim_config.init_jitter, seed)
    state = OptimState(init.copy(), 0, 0, seed)
    oc = optim_config
    adam = Adam([oc.lr_depth, oc.lr_pose, oc.lr_pose, oc.lr_scale], oc.beta1, oc.beta2, oc.eps)
    active = np.zeros(problem.n_edges, dtype=bool)
    active[problem.active_edges] = True

    first = problem.evaluate(state.params, 1).report
    base = (first.photometric + loss_config.smoothness_weight * first.smoothness, first.g2s)
    trajectory = []
    over = 0
    stopped = "completed"
    epoch_means = []
    for epoch in range(1, oc.epochs + 1):
        state.epoch = epoch
        prev = None
        totals = []
        for _ in range(oc.iterations):
            ev = problem.evaluate(state.params, epoch)
            rep = ev.report
            if not math.isfinite(rep.total):
                raise DivergenceDetected("loss became non-finite", epoch=epoch,
                                         iteration=state.iteration)
            row = {"iter": state.iteration, "epoch": epoch}
            row.update(rep.row())
            trajectory.append(row)
            totals.append(rep.total)
            if prev is not None and abs(rep.total - prev) <= oc.tolerance * max(abs(prev), 1e-300):
                break
            prev = rep.total
            ev.grad.rotation[~active] = 0.0
            ev.grad.translation[~active] = 0.0
            if not oc.shared_scale:
                ev.grad.log_scale[:] = 0.0
            adam.step(state.params.arrays(), ev.grad.arrays())
            state.iteration += 1
            if not all(np.all(np.isfinite(a)) for a in state.params.arrays()):
                raise DivergenceDetected("parameters became non-finite", epoch=epoch,
                                         iteration=state.iteration)
        mean = float(np.mean(totals))
        epoch_means.append(mean)
        # compare with the initial loss re-weighted by this epoch's w
        reference = base[0] + rep.w * base[1]
        over = over + 1 if mean > oc.divergence_factor * max(reference, DIVERGENCE_FLOOR) else 0
        if over >= oc.divergence_patience:
            raise DivergenceDetected(
                f"loss {mean:.4g} above {oc.divergence_factor}x initial for "
                f"{over} consecutive epochs", epoch=epoch, reference=reference)

    p = state.params
    depths = p.depths(problem.range)
    T = p.translations()
    edges = [Se3Pose(p.rotation[j], T[j]) for j in range(problem.n_edges)]
    factors, stats, errs = _scale_report(scene, problem.targets, depths, edges, eval_options)
    report = RunReport(
        trajectory=trajectory, targets=problem.targets, depths=depths, edges=edges,
        scale_factors=factors, mu_scale=stats.mu, sigma_scale=stats.sigma,
        translation_errors=[errs[j] for j in problem.active_edges], seed=seed,
        use_g2s=use_g2s, epochs_run=len(epoch_means), stopped=stopped,
        epoch_losses=epoch_means, config={"loss": loss_config.to_dict(), "optim": optim_config.to_dict()},
    )
    report.wall_time = time.perf_counter() - start
    return report


# -- gradient check ----------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel: float
    max_abs: float
    blocks: dict
    checked: int
    kinks: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _rel(a, n, floor):
    diff = abs(a - n)
    if diff <= floor:
        return 0.0
    return diff / max(abs(a), abs(n))


def gradient_check(problem: Problem, params: Params, epoch: int = 1, h: float = 1e-6,
                   floor: float = 1e-8, weight: float | None = None,
                   max_per_block: int | None = None, seed: int = 0,
                   kink_tol: float = 1e-4) -> GradCheckReport:
    """Analytic gradient against central differences over every parameter.

    The loss is piecewise smooth (per-pixel minima, masks, bilinear cells).
    An entry whose forward and backward differences disagree by more than
    ``kink_tol`` while the analytic value matches one of them, or the
    central difference at ``h / 10``, sits on a kink within ``h``; it is
    counted in ``kinks`` and left out of the error maxima.  ``max_per_block`` subsamples entries (seeded).
    """
    analytic = problem.evaluate(params, epoch, weight).grad
    f0 = problem.loss(params, epoch, weight)
    rng = np.random.default_rng(seed)
    blocks = {}
    worst_rel = worst_abs = 0.0
    checked = kinks = 0
    for name in ("logits", "rotation", "translation", "log_scale"):
        arr = getattr(params, name)
        ga = getattr(analytic, name)
        idx = list(np.ndindex(arr.shape))
        if max_per_block is not None and len(idx) > max_per_block:
            pick = rng.choice(len(idx), size=max_per_block, replace=False)
            idx = [idx[i] for i in sorted(pick)]
        b_rel = b_abs = 0.0
        b_kinks = 0
        for i in idx:
            plus = params.copy()
            minus = params.copy()
            getattr(plus, name)[i] += h
            getattr(minus, name)[i] -= h
            fp = problem.loss(plus, epoch, weight)
            fm = problem.loss(minus, epoch, weight)
            num = (fp - fm) / (2 * h)
            rel = _rel(ga[i], num, floor)
            if rel >= kink_tol:
                fwd, bwd = (fp - f0) / h, (f0 - fm) / h
                if _rel(fwd, bwd, floor) >= kink_tol:
                    plus = params.copy()
                    minus = params.copy()
                    getattr(plus, name)[i] += h / 10
                    getattr(minus, name)[i] -= h / 10
                    fine = (problem.loss(plus, epoch, weight)
                            - problem.loss(minus, epoch, weight)) / (2 * h / 10)
                    near = min(_rel(ga[i], v, floor) for v in (fwd, bwd, fine))
                    if near < kink_tol:
                        b_kinks += 1
                        continue
            b_abs = max(b_abs, abs(ga[i] - num))
            b_rel = max(b_rel, rel)
        checked += len(idx)
        kinks += b_kinks
        blocks[name] = {"max_rel": b_rel, "max_abs": b_abs, "n": len(idx), "kinks": b_kinks}
        worst_rel = max(worst_rel, b_rel)
        worst_abs = max(worst_abs, b_abs)
    return GradCheckReport(worst_rel, worst_abs, blocks, checked, kinks)
