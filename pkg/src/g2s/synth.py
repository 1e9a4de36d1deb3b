"""Synthetic textured scenes with exact ground truth.

Frames are rendered by back-projecting every pixel through the camera
model, intersecting the ray with the scene geometry and evaluating a
band-limited texture at the world point.  The texture lives on the surface,
so a pixel's value is exactly the value any other frame sees at the same
world point; with integer pixel motion the bilinear warp reproduces frames
to rounding error.

World frame = camera frame of frame 0 (x right, y down, z forward).  The
local GPS frame is (x_g north = z, y_g up = -y, z_g east = x).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, DepthRange, Se3Pose, so3_exp
from .errors import ConfigError, InvalidGeometry, ParseError
from .geo import GpsTrack, read_track_csv, simulate_gps_rate, write_track_csv
from .raster import read_f32r, write_f32r

GEOMETRIES = ("plane", "slanted", "room")

# camera (x, y, z) -> local (x_g, y_g, z_g)
CAMERA_TO_LOCAL = np.array([[0.0, 0.0, 1.0],
                            [0.0, -1.0, 0.0],
                            [1.0, 0.0, 0.0]])


@dataclass
class SceneConfig:
    """Geometry, texture, trajectory and camera of one synthetic sequence.

    ``motion`` lists the camera displacement between consecutive frames as
    ``(rx, ry, rz, tx, ty, tz)`` in the previous camera's frame; when empty
    the camera slides sideways by ``shift_px`` pixels per frame at the plane
    distance, which keeps the fronto-parallel scene exactly warp-consistent.
    """

    geometry: str = "plane"
    depth: float = 4.0
    normal: tuple = (0.0, 0.0, 1.0)
    room: tuple = (8.0, 4.0, 12.0)
    box: tuple = (-1.0, -0.5, 5.0, 1.0, 1.5, 7.0)
    width: int = 64
    height: int = 48
    fx: float = 48.0
    fy: float = 48.0
    frames: int = 5
    fps: float = 10.0
    channels: int = 1
    texture_seed: int = 0
    texture_waves: int = 24
    wavelength_px: tuple = (6.0, 24.0)
    shift_px: tuple = (3, 0)
    motion: list = field(default_factory=list)

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise InvalidGeometry(f"unknown geometry {self.geometry!r}",
                                  field="geometry", allowed=list(GEOMETRIES))
        if self.frames < 3:
            raise ConfigError("a scene needs at least 3 frames", field="frames")
        if self.channels < 1:
            raise ConfigError("channels must be positive", field="channels")
        if not self.depth > 0:
            raise InvalidGeometry("plane distance must be positive", field="depth")
        lo, hi = self.wavelength_px
        if not 2.0 <= lo <= hi:
            # below two pixels the texture aliases
            raise ConfigError("wavelength_px must satisfy 2 <= lo <= hi",
                              field="wavelength_px")
        if self.motion and len(self.motion) != self.frames - 1:
            raise ConfigError(f"motion needs {self.frames - 1} steps, got {len(self.motion)}",
                              field="motion")
        self.normal = tuple(float(v) for v in self.normal)
        self.room = tuple(float(v) for v in self.room)
        self.box = tuple(float(v) for v in self.box)
        self.wavelength_px = tuple(float(v) for v in self.wavelength_px)
        self.shift_px = tuple(int(v) for v in self.shift_px)
        self.motion = [tuple(float(v) for v in m) for m in self.motion]

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, (self.width - 1) / 2.0,
                                (self.height - 1) / 2.0, self.width, self.height)

    def steps(self) -> list[Se3Pose]:
        """Per-step camera motion (frame j+1 expressed in frame j)."""
        if self.motion:
            return [Se3Pose(m[:3], m[3:]) for m in self.motion]
        sx, sy = self.shift_px
        t = np.array([sx * self.depth / self.fx, sy * self.depth / self.fy, 0.0])
        return [Se3Pose(np.zeros(3), t) for _ in range(self.frames - 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["motion"] = [list(m) for m in self.motion]
        for k in ("normal", "room", "box", "wavelength_px", "shift_px"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scene fields {sorted(unknown)}",
                              field="scene." + sorted(unknown)[0])
        return cls(**d)

    @classmethod
    def random_plane(cls, seed: int, **overrides) -> "SceneConfig":
        """Seeded fronto-parallel scene: distance in [3, 6] m, 2-4 px steps."""
        rng = np.random.default_rng(seed)
        depth = float(rng.uniform(3.0, 6.0))
        frames = int(overrides.get("frames", cls.frames))
        fx = float(overrides.get("fx", cls.fx))
        shifts = rng.integers(2, 5, size=frames - 1)
        motion = [(0.0, 0.0, 0.0, float(s) * depth / fx, 0.0, 0.0) for s in shifts]
        params = dict(depth=depth, texture_seed=int(rng.integers(2**31)), motion=motion)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def random_drive(cls, seed: int, **overrides) -> "SceneConfig":
        """Seeded textured wall approached by a car-like camera.

        Each step moves 0.15-0.3 m forward with up to 0.1 m of sideways drift
        and a small yaw, so the trajectory stays level.  Forward motion makes
        flow depend on depth everywhere; a purely sideways camera lets a pan
        mimic a depth offset.
        """
        rng = np.random.default_rng(seed)
        depth = float(rng.uniform(4.5, 7.0))
        frames = int(overrides.get("frames", cls.frames))
        motion = []
        for _ in range(frames - 1):
            yaw = float(rng.normal(0.0, 0.005))
            tx = float(rng.uniform(-0.1, 0.1))
            tz = float(rng.uniform(0.15, 0.3))
            motion.append((0.0, yaw, 0.0, tx, 0.0, tz))
        params = dict(depth=depth, texture_seed=int(rng.integers(2**31)), motion=motion)
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class GpsNoiseModel:
    """Corruptions applied to ground-truth positions before they become GPS.

    ``misalignment`` is an axis-angle rotation of the whole local frame and
    ``offset`` a constant translation; both leave displacement magnitudes
    unchanged.  ``sigma`` is per-axis white noise.  ``rate_hz`` (None = every
    frame) drives :func:`geo.simulate_gps_rate`.
    """

    sigma: tuple = (0.0, 0.0, 0.0)
    offset: tuple = (0.0, 0.0, 0.0)
    misalignment: tuple = (0.0, 0.0, 0.0)
    rate_hz: float | None = None

    def __post_init__(self):
        for name in ("sigma", "offset", "misalignment"):
            v = getattr(self, name)
            if np.isscalar(v):
                v = (v, v, v)
            v = tuple(float(x) for x in v)
            if len(v) != 3 or not all(math.isfinite(x) for x in v):
                raise ConfigError(f"{name} must be 3 finite numbers", field=f"noise.{name}")
            object.__setattr__(self, name, v)
        if min(self.sigma) < 0:
            raise ConfigError("sigma must be non-negative", field="noise.sigma")
        if self.rate_hz is not None:
            object.__setattr__(self, "rate_hz", float(self.rate_hz))

    def to_dict(self) -> dict:
        return {"sigma": list(self.sigma), "offset": list(self.offset),
                "misalignment": list(self.misalignment), "rate_hz": self.rate_hz}

    @classmethod
    def from_dict(cls, d: dict) -> "GpsNoiseModel":
        unknown = set(d) - {"sigma", "offset", "misalignment", "rate_hz"}
        if unknown:
            raise ConfigError(f"unknown noise fields {sorted(unknown)}",
                              field="noise." + sorted(unknown)[0])
        return cls(**d)


@dataclass
class Scene:
    """Rendered frames plus ground truth.

    ``poses[j]`` maps camera-``j`` coordinates to world coordinates.
    """

    config: SceneConfig
    images: np.ndarray          # (n, H, W, C)
    depths: np.ndarray          # (n, H, W)
    poses: list
    gps: GpsTrack | None = None

    @property
    def K(self) -> CameraIntrinsics:
        return self.config.intrinsics

    def __len__(self) -> int:
        return len(self.images)

    def relative_pose(self, target: int, source: int) -> Se3Pose:
        """Pose taking target-camera points into the source camera."""
        return self.poses[source].inverse().compose(self.poses[target])

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])


# -- texture and geometry ------------------------------------------------------

class Texture:
    """Sum of random plane waves in 3-D, squashed into (0, 1).

    Wave numbers are drawn so that at the reference distance the on-image
    wavelength lies in ``wavelength_px``; the field is smooth by construction.
    """

    def __init__(self, seed: int, waves: int, wavelength_m: tuple, channels: int):
        rng = np.random.default_rng(seed)
        lo, hi = wavelength_m
        self.k = []
        self.phase = []
        self.amp = []
        for _ in range(channels):
            direction = rng.normal(size=(waves, 3))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            lam = np.exp(rng.uniform(np.log(lo), np.log(hi), size=waves))
            self.k.append(direction * (2.0 * np.pi / lam)[:, None])
            self.phase.append(rng.uniform(0.0, 2.0 * np.pi, size=waves))
            a = rng.uniform(0.5, 1.0, size=waves)
            self.amp.append(a / np.sqrt(np.sum(a * a)))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        out = []
        for k, ph, a in zip(self.k, self.phase, self.amp):
            s = np.sin(X @ k.T + ph) @ a
            out.append(0.5 + 0.5 * np.tanh(s))
        return np.stack(out, axis=-1)


def _ray_plane(origin, dirs, normal, offset):
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = (offset - origin @ normal) / denom
    return np.where(np.abs(denom) > 1e-12, lam, np.inf)


def _ray_box(origin, dirs, lo, hi):
    """Entry and exit ray parameters for an axis-aligned box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origin) * inv
        t1 = (hi - origin) * inv
    near = np.nanmax(np.minimum(t0, t1), axis=-1)
    far = np.nanmin(np.maximum(t0, t1), axis=-1)
    return near, far


def _intersect(cfg: SceneConfig, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter of the first visible surface (world frame)."""
    if cfg.geometry in ("plane", "slanted"):
        n = np.asarray(cfg.normal if cfg.geometry == "slanted" else (0.0, 0.0, 1.0))
        norm = np.linalg.norm(n)
        if norm == 0:
            raise InvalidGeometry("plane normal must be non-zero", field="normal")
        return _ray_plane(origin, dirs, n / norm, cfg.depth)
    w, h, d = cfg.room
    room_lo = np.array([-w / 2, -h / 2, -1.0])
    room_hi = np.array([w / 2, h / 2, d])
    if np.any(origin <= room_lo) or np.any(origin >= room_hi):
        raise InvalidGeometry("camera left the room", field="room")
    _, lam = _ray_box(origin, dirs, room_lo, room_hi)
    b = np.asarray(cfg.box)
    near, far = _ray_box(origin, dirs, b[:3], b[3:])
    hit = (near <= far) & (near > 0)
    return np.where(hit, np.minimum(near, lam), lam)


def trajectory(cfg: SceneConfig) -> list[Se3Pose]:
    poses = [Se3Pose.identity()]
    for step in cfg.steps():
        poses.append(poses[-1].compose(step))
    return poses


def render_sequence(cfg: SceneConfig) -> Scene:
    """Render images and ground-truth depth for every frame of ``cfg``."""
    K = cfg.intrinsics
    rays = K.rays()                         # (H, W, 3), z == 1
    lam_px = np.asarray(cfg.wavelength_px) * cfg.depth / cfg.fx
    tex = Texture(cfg.texture_seed, cfg.texture_waves, tuple(lam_px), cfg.channels)
    poses = trajectory(cfg)
    dr = DepthRange()
    images, depths = [], []
    for j, pose in enumerate(poses):
        dirs = rays @ pose.R.T
        lam = _intersect(cfg, pose.translation, dirs)
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise InvalidGeometry(f"frame {j}: some rays miss the scene", frame=j)
        if lam.min() < dr.min_depth or lam.max() > dr.max_depth:
            raise InvalidGeometry(
                f"frame {j}: depth range [{lam.min():.3g}, {lam.max():.3g}] m "
                f"outside [{dr.min_depth}, {dr.max_depth}]", frame=j)
        X = pose.translation + dirs * lam[..., None]
        images.append(tex(X))
        depths.append(lam)                 # rays have unit z, so lam is z-depth
    return Scene(cfg, np.array(images), np.array(depths), poses)


# -- GPS -----------------------------------------------------------------------

def gps_from_trajectory(poses, noise: GpsNoiseModel | None = None, fps: float = 10.0,
                        planar: bool = False, seed: int = 0,
                        reference_lat: float = 0.0) -> GpsTrack:
    """Turn camera positions into a (possibly degraded) local GPS track."""
    noise = noise or GpsNoiseModel()
    centres = np.array([p.translation for p in poses])
    local = centres @ CAMERA_TO_LOCAL.T
    local = local @ so3_exp(np.asarray(noise.misalignment)).T + np.asarray(noise.offset)
    rng = np.random.default_rng(seed)
    sigma = np.asarray(noise.sigma)
    if np.any(sigma > 0):
        local = local + rng.normal(size=local.shape) * sigma
    t = np.arange(len(poses)) / fps
    available = None
    if noise.rate_hz is not None:
        available = simulate_gps_rate(len(poses), noise.rate_hz, fps, seed=seed)
    return GpsTrack(reference_lat, local, t, planar=planar, available=available)


def build_scene(cfg: SceneConfig, noise: GpsNoiseModel | None = None,
                planar: bool = False, seed: int = 0) -> Scene:
    scene = render_sequence(cfg)
    scene.gps = gps_from_trajectory(scene.poses, noise, cfg.fps, planar, seed)
    return scene


# -- on-disk layout --------------------------------------------------------------

POSE_HEADER = ["frame", "rx", "ry", "rz", "tx", "ty", "tz"]


def write_pose_csv(path, poses, label: str = "frame") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([label] + POSE_HEADER[1:])
        for i, p in enumerate(poses):
            w.writerow([i] + [repr(float(v)) for v in p.as_vector()])


def read_pose_csv(path) -> list[Se3Pose]:
    poses = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, 2):
            try:
                v = [float(x) for x in row[1:7]]
            except ValueError:
                v = []
            if len(v) != 6:
                raise ParseError(f"{path}:{lineno}: expected 6 pose values",
                                 file=str(path), line=lineno)
            poses.append(Se3Pose(v[:3], v[3:]))
    return poses


def save_scene(scene: Scene, directory, noise: GpsNoiseModel | None = None,
               planar: bool = False, seed: int = 0) -> Path:
    """Write images, depth, poses, GPS and config under ``directory``."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(exist_ok=True)
    for j, (img, d) in enumerate(zip(scene.images, scene.depths)):
        write_f32r(root / "images" / f"{j:03d}.f32r", img)
        write_f32r(root / "depth" / f"{j:03d}.f32r", d)
    write_pose_csv(root / "poses.csv", scene.poses)
    if scene.gps is not None:
        write_track_csv(scene.gps, root / "gps.csv")
    meta = {"scene": scene.config.to_dict(),
            "noise": (noise or GpsNoiseModel()).to_dict(),
            "planar": bool(planar), "seed": int(seed)}
    (root / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return root


def load_scene(directory) -> Scene:
    root = Path(directory)
    meta_path = root / "scene.json"
    if not meta_path.exists():
        raise ConfigError(f"{meta_path} not found", field="scene_dir", path=str(root))
    meta = json.loads(meta_path.read_text())
    cfg = SceneConfig.from_dict(meta["scene"])
    n = cfg.frames
    images = np.array([read_f32r(root / "images" / f"{j:03d}.f32r", squeeze=False)
                       for j in range(n)])
    depths = np.array([read_f32r(root / "depth" / f"{j:03d}.f32r") for j in range(n)])
    poses = read_pose_csv(root / "poses.csv")
    gps = None
    if (root / "gps.csv").exists():
        gps = read_track_csv(root / "gps.csv", planar=bool(meta.get("planar", False)))
    return Scene(cfg, images, depths, poses, gps)
