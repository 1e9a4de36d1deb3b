"""Command-line entry point: ``g2s <command> [options]``.

Human-readable progress goes to stdout.  Failures print one JSON object
``{"code", "message", "context"}`` to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import geo, metrics, optimize, synth
from .errors import ConfigError, G2SError, NoValidPixels
from .losses import LossConfig, Weighting
from .metrics import EvalOptions
from .optimize import OptimConfig
from .raster import read_depth
from .synth import GpsNoiseModel, SceneConfig

PRESETS = ("drive", "lateral")

RECOVERY_OPTIM = optimize.RECOVERY


@dataclass
class RunConfig:
    """Everything one optimisation run depends on.

    The scene comes from ``scene_dir`` if set, else from ``scene`` if set,
    else from ``preset`` seeded with ``seed``.
    """

    preset: str = "drive"
    scene: SceneConfig | None = None
    scene_dir: str | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = RECOVERY_OPTIM
    eval: EvalOptions = field(default_factory=EvalOptions)
    noise: GpsNoiseModel = field(default_factory=GpsNoiseModel)
    planar: bool = False
    use_g2s: bool = True
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}", field="preset",
                              allowed=list(PRESETS))
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer", field="seed")
        if self.optim.epochs != self.loss.epoch_max:
            raise ConfigError(f"optim.epochs ({self.optim.epochs}) must equal "
                              f"loss.epoch_max ({self.loss.epoch_max})", field="optim.epochs")
        if self.scene_dir is not None and not Path(self.scene_dir).is_dir():
            raise ConfigError(f"scene directory {self.scene_dir} does not exist",
                              field="scene_dir")

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "scene": None if self.scene is None else self.scene.to_dict(),
            "scene_dir": self.scene_dir,
            "loss": self.loss.to_dict(),
            "optim": self.optim.to_dict(),
            "eval": self.eval.to_dict(),
            "noise": self.noise.to_dict(),
            "planar": self.planar,
            "use_g2s": self.use_g2s,
            "seed": self.seed,
            "out": self.out,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}",
                              field=sorted(unknown)[0])
        d = dict(d)
        parsers = {"scene": SceneConfig.from_dict, "loss": LossConfig.from_dict,
                   "eval": EvalOptions.from_dict, "noise": GpsNoiseModel.from_dict}
        for key, parse in parsers.items():
            if d.get(key) is not None:
                d[key] = parse(d[key])
        if d.get("optim") is not None:
            base = RECOVERY_OPTIM.to_dict()
            base.update(d["optim"])
            d["optim"] = OptimConfig.from_dict(base)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}", line=exc.lineno) from None

    def scene_config(self) -> SceneConfig:
        if self.scene is not None:
            return self.scene
        if self.preset == "lateral":
            return SceneConfig.random_plane(self.seed)
        return SceneConfig.random_drive(self.seed)

    def build_scene(self) -> synth.Scene:
        if self.scene_dir is not None:
            scene = synth.load_scene(self.scene_dir)
            if scene.gps is not None and (self.planar or self.noise.rate_hz is not None):
                gps = scene.gps
                available = gps.available
                if self.noise.rate_hz is not None:
                    available = geo.simulate_gps_rate(len(gps), self.noise.rate_hz,
                                                      scene.config.fps, seed=self.seed)
                scene.gps = geo.GpsTrack(gps.reference_lat, gps.xyz, gps.t,
                                         planar=self.planar or gps.planar, available=available)
            return scene
        return synth.build_scene(self.scene_config(), self.noise, self.planar, self.seed)


@dataclass(frozen=True)
class AblationGrid:
    weightings: tuple = ("exp",)
    rates: tuple = (None,)
    planar: tuple = (False,)
    seeds: tuple = (0,)

    def __post_init__(self):
        for name in ("weightings", "rates", "planar", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"ablation axis {name} is empty", field=f"grid.{name}")
        for w in self.weightings:
            Weighting.parse(w)

    def points(self) -> list[dict]:
        return [{"weighting": w, "gps_hz": r, "planar": p, "seed": s}
                for w in self.weightings for r in self.rates
                for p in self.planar for s in self.seeds]


# -- shared run logic ---------------------------------------------------------------

EVAL_HEADER = ["image"] + metrics.METRIC_FIELDS + ["mu_scale", "sigma_scale"]


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def evaluation_csv(names, preds, gts, options: EvalOptions):
    """Per-image rows plus a ``mean`` summary row; returns ``(text, rows)``."""
    rows = []
    for name, p, g in zip(names, preds, gts):
        ev = metrics.evaluate_image(p, g, options)
        rows.append((name, ev.row()))
    if not rows:
        raise NoValidPixels("nothing to evaluate")
    stats = metrics.scale_stats([r["scale"] for _, r in rows])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_HEADER)
    for name, r in rows:
        w.writerow([name] + [_fmt(r[k]) for k in metrics.METRIC_FIELDS] + ["", ""])
    means = {k: float(np.mean([r[k] for _, r in rows])) for k in metrics.METRIC_FIELDS}
    w.writerow(["mean"] + [_fmt(means[k]) for k in metrics.METRIC_FIELDS]
               + [_fmt(stats.mu), _fmt(stats.sigma)])
    return buf.getvalue(), means, stats


def run_point(cfg: RunConfig, out: Path | None) -> dict:
    """One optimisation plus evaluation against the scene's ground truth."""
    scene = cfg.build_scene()
    report = optimize.run_optimization(scene, cfg.loss, cfg.optim, cfg.use_g2s, cfg.seed,
                                       eval_options=cfg.eval)
    names = [f"{t:03d}" for t in report.targets]
    text, means, stats = evaluation_csv(names, report.depths, scene.depths[report.targets],
                                        cfg.eval)
    if out is not None:
        report.save(out)
        (out / "eval.csv").write_text(text)
        # the output path is not part of the run, so reruns elsewhere match
        (out / "config.json").write_text(replace(cfg, out=None).to_json())
    return {"mu_scale": report.mu_scale, "sigma_scale": report.sigma_scale,
            "abs_rel": means["abs_rel"], "iterations": report.iterations,
            "report": report}


def _threads() -> int:
    env = os.environ.get("G2S_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"G2S_THREADS={env!r} is not an integer",
                              field="G2S_THREADS") from None
        if n < 1:
            raise ConfigError("G2S_THREADS must be >= 1", field="G2S_THREADS")
        return n
    return os.cpu_count() or 1


def _point_config(base: RunConfig, point: dict) -> RunConfig:
    loss = replace(base.loss, weighting=Weighting.parse(point["weighting"]))
    noise = replace(base.noise, rate_hz=point["gps_hz"])
    return replace(base, loss=loss, noise=noise, planar=bool(point["planar"]),
                   seed=int(point["seed"]))


def _ablation_worker(args):
    cfg_json, point, out = args
    cfg = _point_config(RunConfig.from_json(cfg_json), point)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = run_point(cfg, out)
        res.pop("report")
        return {"status": "ok", "error": "", **res}
    except G2SError as exc:
        return {"status": "failed", "error": json.dumps(exc.to_dict(), sort_keys=True)}
    except Exception as exc:  # keep the grid going
        return {"status": "failed",
                "error": json.dumps({"code": "internal", "message": repr(exc), "context": {}})}


SUMMARY_HEADER = ["point", "weighting", "gps_hz", "planar", "seed", "status", "mu_scale",
                  "sigma_scale", "abs_rel", "iterations", "error"]


def point_name(i: int, p: dict) -> str:
    hz = "full" if p["gps_hz"] is None else f"{p['gps_hz']:g}hz"
    w = p["weighting"].replace(":", "")
    return f"{i:03d}_{w}_{hz}_{'2d' if p['planar'] else '3d'}_s{p['seed']}"


def run_ablation(base: RunConfig, grid: AblationGrid, out: Path, workers: int = 1):
    points = grid.points()
    jobs = [(base.to_json(), p, str(out / point_name(i, p))) for i, p in enumerate(points)]
    workers = max(1, min(workers, len(jobs)))
    if workers == 1:
        results = [_ablation_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ablation_worker, jobs))
    rows = []
    for i, (p, r) in enumerate(zip(points, results)):
        rows.append({"point": point_name(i, p), "weighting": p["weighting"],
                     "gps_hz": "" if p["gps_hz"] is None else repr(float(p["gps_hz"])),
                     "planar": int(bool(p["planar"])), "seed": p["seed"],
                     "status": r["status"],
                     "mu_scale": _fmt(r.get("mu_scale")),
                     "sigma_scale": _fmt(r.get("sigma_scale")),
                     "abs_rel": _fmt(r.get("abs_rel")),
                     "iterations": r.get("iterations", ""), "error": r["error"]})
    buf = io.StringIO()
    w = csv.DictWriter(buf, SUMMARY_HEADER, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    (out / "summary.csv").write_text(buf.getvalue())
    write_plots(rows, out)
    return rows


def write_plots(rows: list[dict], out: Path) -> list[Path]:
    """SVG line plots of abs_rel and mean scale against GPS rate.

    One line per (weighting, dimensionality); seeds are averaged.  Full-rate
    points are drawn at the video frame rate.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "g2s"
    series: dict = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        hz = float(r["gps_hz"]) if r["gps_hz"] != "" else 10.0
        key = (r["weighting"], "2-D" if r["planar"] else "3-D")
        series.setdefault(key, {}).setdefault(hz, []).append(
            (float(r["abs_rel"]), float(r["mu_scale"])))
    paths = []
    for idx, (metric, label) in enumerate((("abs_rel", "Abs Rel"), ("mu_scale", "mean scale"))):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for (wname, dim), pts in sorted(series.items()):
            xs = sorted(pts)
            ys = [float(np.mean([v[idx] for v in pts[x]])) for x in xs]
            ax.plot(xs, ys, marker="o", label=f"{wname} {dim}")
        ax.set_xlabel("GPS frequency (Hz)")
        ax.set_ylabel(label)
        if metric == "mu_scale":
            ax.axhline(1.0, color="grey", lw=0.8, ls="--")
        if series:
            ax.legend(fontsize=8)
        fig.tight_layout()
        path = out / f"{metric}_vs_rate.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


# -- commands ---------------------------------------------------------------------

def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found", field="config")
        cfg = RunConfig.from_json(path.read_text())
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "planar", False):
        updates["planar"] = True
    if getattr(args, "use_g2s", None) is not None:
        updates["use_g2s"] = args.use_g2s
    if getattr(args, "weighting", None):
        updates["loss"] = replace(cfg.loss, weighting=Weighting.parse(args.weighting))
    if getattr(args, "gps_hz", None) is not None:
        updates["noise"] = replace(cfg.noise, rate_hz=args.gps_hz)
    if getattr(args, "preset", None):
        updates["preset"] = args.preset
    if getattr(args, "scene_dir", None):
        updates["scene_dir"] = args.scene_dir
    ev = {}
    if getattr(args, "cap", None) is not None:
        ev["cap"] = args.cap
    if getattr(args, "crop_2to1", False):
        ev["crop_2to1"] = True
    if ev:
        updates["eval"] = replace(cfg.eval, **ev)
    if getattr(args, "out", None):
        updates["out"] = args.out
    return replace(cfg, **updates) if updates else cfg


def _out_dir(cfg: RunConfig, default: str | None = None) -> Path:
    out = cfg.out or default
    if out is None:
        raise ConfigError("an output directory is required (--out)", field="out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_convert_oxts(args) -> int:
    fixes = geo.read_oxts_dir(args.input)
    track = geo.project_track(fixes, planar=args.planar)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    geo.write_track_csv(track, out)
    stamps = geo.parse_timestamps(Path(args.input) / "timestamps.txt", relative=False)
    sidecar = {"reference_lat": track.reference_lat, "planar": track.planar,
               "fixes": len(track), "t0": float(stamps[0])}
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(track)} fixes to {out} (lat0 = {track.reference_lat:.8f})")
    return 0


def cmd_sync(args) -> int:
    track_path = Path(args.track)
    meta_path = track_path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    track = geo.read_track_csv(track_path, meta.get("reference_lat", 0.0),
                               planar=bool(meta.get("planar", False)))
    if "t0" in meta:
        stamps = geo.parse_timestamps(args.timestamps, relative=False) - meta["t0"]
    else:
        stamps = geo.parse_timestamps(args.timestamps)
    result = geo.sync_to_images(track, stamps, args.tolerance)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image", "t", "gps_index", "dt"])
    for k, (t, j) in enumerate(zip(stamps, result.indices)):
        w.writerow([k, repr(float(t)), "" if j is None else j,
                    "" if j is None else repr(float(track.t[j] - t))])
    Path(args.out).write_text(buf.getvalue())
    print(f"matched {result.matched}/{len(stamps)} images (tolerance {result.tolerance:.6g} s)")
    return 0


def cmd_simulate_rate(args) -> int:
    mask = geo.simulate_gps_rate(args.frames, args.gps_hz, args.fps, seed=args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "available"])
    for i, a in enumerate(mask):
        w.writerow([i, int(a)])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
        print(f"{int(mask.sum())}/{len(mask)} frames keep GPS (seed {args.seed})")
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    scene = synth.build_scene(cfg.scene_config(), cfg.noise, cfg.planar, cfg.seed)
    synth.save_scene(scene, out, cfg.noise, cfg.planar, cfg.seed)
    print(f"rendered {len(scene)} frames of {scene.config.width}x{scene.config.height} to {out}")
    return 0


def cmd_optimize(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    res = run_point(cfg, out)
    print(f"mu_scale={res['mu_scale']:.4f} sigma_scale={res['sigma_scale']:.4f} "
          f"abs_rel={res['abs_rel']:.4f} after {res['iterations']} iterations -> {out}")
    return 0


def _depth_files(path: Path) -> dict:
    if path.is_file():
        return {path.stem: path}
    if not path.is_dir():
        raise ConfigError(f"{path} does not exist", field="path")
    return {p.stem: p for p in sorted(path.iterdir()) if p.suffix.lower() in (".f32r", ".png")}


def cmd_eval(args) -> int:
    options = EvalOptions(cap=args.cap if args.cap is not None else metrics.DEFAULT_CAP,
                          min_depth=args.min_depth, crop_2to1=args.crop_2to1,
                          garg_crop=args.garg_crop, median_scaling=args.median_scaling)
    preds = _depth_files(Path(args.pred))
    gts = _depth_files(Path(args.gt))
    names = sorted(set(preds) & set(gts))
    if not names:
        raise NoValidPixels("no prediction/ground-truth file pairs share a name",
                            pred=str(args.pred), gt=str(args.gt))
    text, means, stats = evaluation_csv(
        names, [read_depth(preds[n]) for n in names], [read_depth(gts[n]) for n in names],
        options)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"evaluated {len(names)} images: abs_rel={means['abs_rel']:.4f} "
              f"mu_scale={stats.mu:.4f} sigma_scale={stats.sigma:.4f} -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _csv_list(text: str, conv):
    return tuple(conv(v) for v in text.split(",") if v.strip())


def _seed_list(text: str) -> tuple:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            out.append(int(part))
    return tuple(out)


def _rate(text: str):
    return None if text.strip().lower() in ("full", "none") else float(text)


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    seeds = _seed_list(args.seeds) if args.seeds else (cfg.seed,)
    grid = AblationGrid(
        weightings=_csv_list(args.weightings, str) if args.weightings else (str(cfg.loss.weighting),),
        rates=_csv_list(args.rates, _rate) if args.rates else (cfg.noise.rate_hz,),
        planar=_csv_list(args.planar_modes, lambda s: s.strip() in ("1", "true", "2d"))
        if args.planar_modes else (cfg.planar,),
        seeds=seeds)
    rows = run_ablation(cfg, grid, out, _threads())
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} grid points, {failed} failed -> {out / 'summary.csv'}")
    return 0 if failed == 0 else 1


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args)
    scene_cfg = cfg.scene or SceneConfig.random_drive(
        cfg.seed, width=16, height=12, fx=12.0, fy=12.0, frames=4)
    scene = synth.build_scene(scene_cfg, cfg.noise, cfg.planar, cfg.seed)
    problem = optimize.Problem.from_scene(scene, cfg.loss, cfg.use_g2s)
    params = optimize.params_from_truth(scene, problem.targets, cfg.optim.init_scale,
                                        max(cfg.optim.init_jitter, 0.05), cfg.seed)
    epoch = cfg.loss.epoch_max - 1
    rep = optimize.gradient_check(problem, params, epoch=epoch, max_per_block=args.max_entries,
                                  seed=cfg.seed)
    text = json.dumps({"epoch": epoch, **rep.to_dict()}, indent=2, sort_keys=True,
                      default=float) + "\n"
    if cfg.out:
        _out_dir(cfg)
        (Path(cfg.out) / "gradcheck.json").write_text(text)
    sys.stdout.write(text)
    return 0 if rep.max_rel < args.threshold else 1


# -- parser -----------------------------------------------------------------------

def _add_common(p, out_required=False):
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--seed", type=int, help="scene, noise and init seed")
    p.add_argument("--planar", action="store_true", help="drop GPS altitude")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--use-g2s", dest="use_g2s", action="store_const", const=True, default=None)
    g.add_argument("--no-g2s", dest="use_g2s", action="store_const", const=False)
    p.add_argument("--weighting", help="g2s weight schedule: const:<c>, linear or exp")
    p.add_argument("--gps-hz", type=float, help="simulated GPS rate")
    p.add_argument("--cap", type=float, help="evaluation depth cap in metres")
    p.add_argument("--crop-2to1", action="store_true", help="evaluate on a 2:1 centre crop")
    p.add_argument("--out", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="g2s", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert-oxts", help="KITTI OXTS directory -> local track CSV")
    p.add_argument("input", help="oxts directory (data/ + timestamps.txt)")
    p.add_argument("--out", required=True, help="track CSV to write")
    p.add_argument("--planar", action="store_true")
    p.set_defaults(func=cmd_convert_oxts)

    p = sub.add_parser("sync", help="match image timestamps to GPS fixes")
    p.add_argument("--track", required=True, help="track CSV from convert-oxts")
    p.add_argument("--timestamps", required=True, help="image timestamps.txt")
    p.add_argument("--tolerance", type=float, help="seconds; default half the median GPS gap")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("simulate-rate", help="low-rate GPS availability mask")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--gps-hz", type=float, required=True)
    p.add_argument("--fps", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate_rate)

    p = sub.add_parser("synth", help="render a synthetic scene directory")
    _add_common(p, out_required=False)
    p.add_argument("--preset", choices=PRESETS)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("optimize", help="optimise depth and poses on a scene")
    _add_common(p)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--scene-dir", help="scene written by `g2s synth`")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="depth metrics for prediction/ground-truth rasters")
    p.add_argument("--pred", required=True, help="prediction file or directory")
    p.add_argument("--gt", required=True, help="ground-truth file or directory")
    p.add_argument("--cap", type=float)
    p.add_argument("--min-depth", type=float, default=metrics.DEFAULT_MIN)
    p.add_argument("--crop-2to1", action="store_true")
    p.add_argument("--garg-crop", action="store_true")
    p.add_argument("--median-scaling", action="store_true")
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a weighting / GPS-rate / planarity grid")
    _add_common(p)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--scene-dir")
    p.add_argument("--weightings", help="comma list, e.g. exp,const:1,linear")
    p.add_argument("--rates", help="comma list of Hz, `full` for every frame")
    p.add_argument("--planar-modes", help="comma list of 0/1")
    p.add_argument("--seeds", help="comma list or ranges, e.g. 0-9")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    _add_common(p)
    p.add_argument("--max-entries", type=int, default=None,
                   help="check at most this many entries per parameter block")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except G2SError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True, default=str) + "\n")
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        err = {"code": "io_error", "message": str(exc),
               "context": {"type": type(exc).__name__}}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 2
    except Exception as exc:
        err = {"code": "internal", "message": repr(exc),
               "context": {"traceback": traceback.format_exc(limit=5)}}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
