"""GPS fixes to local metric coordinates.

Geodetic fixes are mapped with a spherical Mercator projection scaled by the
cosine of a reference latitude, giving ``(x_g, y_g, z_g)`` = (north, up, east)
in meters. Also here: timestamp syncing against image frames, degraded-rate
simulation, and the KITTI OXTS / CSV readers and writers.
"""

from __future__ import annotations

import calendar
import csv
import math
import re
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyTrack,
    IndexOutOfRange,
    InvalidCoordinate,
    InvalidRate,
    MissingTimestamps,
    NonMonotonicTimestamps,
    ParseError,
    PolarReference,
)

EARTH_RADIUS = 6378137.0
MAX_REFERENCE_LAT = 89.9


@dataclass(frozen=True)
class GeodeticCoord:
    lat: float
    lon: float
    alt: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise InvalidCoordinate(f"latitude {self.lat} outside [-90, 90]", lat=self.lat)
        if not (math.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise InvalidCoordinate(f"longitude {self.lon} outside [-180, 180]", lon=self.lon)
        if not math.isfinite(self.alt):
            raise InvalidCoordinate(f"altitude {self.alt} is not finite", alt=self.alt)
        if not (math.isfinite(self.t) and self.t >= 0.0):
            raise InvalidCoordinate(f"timestamp {self.t} must be finite and >= 0", t=self.t)


@dataclass(frozen=True)
class LocalCoord:
    x_g: float
    y_g: float
    z_g: float
    t: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x_g, self.y_g, self.z_g])


@dataclass
class GpsTrack:
    """Local coordinates of one sequence, all relative to ``reference_lat``.

    ``xyz`` is ``(n, 3)`` in (x_g, y_g, z_g) order; ``available`` flags the
    fixes that survive a rate simulation (all True for a real track).
    """

    reference_lat: float
    xyz: np.ndarray
    t: np.ndarray
    planar: bool = False
    available: np.ndarray | None = None

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if len(self.xyz) == 0:
            raise EmptyTrack("track has no coordinates")
        if len(self.t) != len(self.xyz):
            raise ValueError("timestamps and coordinates differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise NonMonotonicTimestamps("track timestamps must be strictly increasing")
        if self.planar:
            self.xyz = self.xyz.copy()
            self.xyz[:, 1] = 0.0
        if self.available is None:
            self.available = np.ones(len(self.xyz), dtype=bool)
        else:
            self.available = np.asarray(self.available, dtype=bool).reshape(-1)
            if len(self.available) != len(self.xyz):
                raise ValueError("availability mask length differs from track length")

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def coords(self) -> list[LocalCoord]:
        return [LocalCoord(*map(float, p), t=float(ti)) for p, ti in zip(self.xyz, self.t)]


@dataclass(frozen=True)
class SyncResult:
    """``indices[k]`` is the matched track index for image ``k``, or None."""

    indices: tuple
    tolerance: float

    @property
    def matched(self) -> int:
        return sum(i is not None for i in self.indices)


def _check_reference(lat0: float) -> float:
    if not math.isfinite(lat0) or abs(lat0) >= MAX_REFERENCE_LAT:
        raise PolarReference(f"reference latitude {lat0} too close to a pole", lat0=lat0)
    return math.cos(math.pi * lat0 / 180.0)


# ln(tan(pi (90 + lat) / 360)) is evaluated as asinh(tan(lat)), the same
# function without the rounding of tan(pi/4) that puts the equator at -7e-10 m.

def mercator_project(g: GeodeticCoord, lat0: float) -> LocalCoord:
    scale = _check_reference(lat0)
    x = scale * EARTH_RADIUS * math.asinh(math.tan(math.radians(g.lat)))
    z = scale * EARTH_RADIUS * math.pi * g.lon / 180.0
    return LocalCoord(x, g.alt, z, g.t)


def mercator_project_array(lat, lon, alt, lat0: float) -> np.ndarray:
    """Vectorized :func:`mercator_project`; returns ``(n, 3)``."""
    scale = _check_reference(lat0)
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    x = scale * EARTH_RADIUS * np.arcsinh(np.tan(np.radians(lat)))
    z = scale * EARTH_RADIUS * np.pi * lon / 180.0
    return np.stack([x, np.asarray(alt, dtype=np.float64) * np.ones_like(x), z], axis=-1)


def project_track(fixes: Sequence[GeodeticCoord], planar: bool = False) -> GpsTrack:
    """Project a sequence of fixes using the first fix's latitude as reference."""
    fixes = list(fixes)
    if not fixes:
        raise EmptyTrack("cannot project an empty sequence of fixes")
    t = np.array([f.t for f in fixes])
    if np.any(np.diff(t) <= 0):
        raise NonMonotonicTimestamps("fix timestamps must be strictly increasing")
    lat0 = fixes[0].lat
    xyz = mercator_project_array([f.lat for f in fixes], [f.lon for f in fixes],
                                 [f.alt for f in fixes], lat0)
    return GpsTrack(reference_lat=lat0, xyz=xyz, t=t, planar=planar)


def default_tolerance(track: GpsTrack) -> float:
    """Half the median inter-fix interval (infinite for single-fix tracks)."""
    if len(track) < 2:
        return math.inf
    return 0.5 * float(np.median(np.diff(track.t)))


def sync_to_images(track: GpsTrack, image_timestamps: Sequence[float],
                   tolerance: float | None = None) -> SyncResult:
    """Match each image to its nearest fix in time.

    Ties go to the earlier fix. When two images claim the same fix, the
    closer image keeps it (the earlier image on an exact tie) and the other
    is left unmatched.
    """
    ts = np.asarray(image_timestamps, dtype=np.float64).reshape(-1)
    if np.any(np.diff(ts) <= 0):
        raise NonMonotonicTimestamps("image timestamps must be strictly increasing")
    if tolerance is None:
        tolerance = default_tolerance(track)
    if len(ts) == 0:
        return SyncResult((), tolerance)

    gt = track.t
    right = np.searchsorted(gt, ts, side="left").clip(0, len(gt) - 1)
    left = (right - 1).clip(0, len(gt) - 1)
    d_left = np.abs(ts - gt[left])
    d_right = np.abs(gt[right] - ts)
    nearest = np.where(d_left <= d_right, left, right)
    gap = np.minimum(d_left, d_right)

    indices: list = [None] * len(ts)
    owner: dict[int, int] = {}
    for k in range(len(ts)):
        if gap[k] > tolerance:
            continue
        j = int(nearest[k])
        prev = owner.get(j)
        if prev is None:
            owner[j] = k
            indices[k] = j
        elif gap[k] < gap[prev]:
            indices[prev] = None
            owner[j] = k
            indices[k] = j
    return SyncResult(tuple(indices), float(tolerance))


def relative_displacement(track: GpsTrack, i: int, j: int) -> float:
    n = len(track)
    for idx in (i, j):
        if not (0 <= idx < n):
            raise IndexOutOfRange(f"index {idx} outside track of length {n}", index=idx)
    d = track.xyz[i] - track.xyz[j]
    if track.planar:
        d = d[[0, 2]]
    return float(np.sqrt(np.sum(d * d)))


def simulate_gps_rate(track_len: int, f: float, fps: float = 10.0,
                      seed: int = 0) -> np.ndarray:
    """Availability mask emulating an ``f`` Hz receiver on ``fps`` video.

    Frames are split into non-overlapping blocks of ``round(fps)``; in each
    block exactly ``min(f, len(block))`` frames are drawn without replacement
    with ``numpy.random.default_rng(seed)`` (PCG64).
    """
    if not (1 <= f <= fps):
        raise InvalidRate(f"rate {f} Hz must lie in [1, {fps}]", f=f, fps=fps)
    if f != int(f):
        raise InvalidRate(f"rate {f} Hz must be a whole number of frames per block", f=f)
    mask = np.zeros(track_len, dtype=bool)
    if f == fps:
        mask[:] = True
        return mask
    block = max(int(round(fps)), 1)
    rng = np.random.default_rng(seed)
    for start in range(0, track_len, block):
        stop = min(start + block, track_len)
        k = min(int(f), stop - start)
        mask[start + rng.choice(stop - start, size=k, replace=False)] = True
    return mask


# -- KITTI OXTS ingestion -----------------------------------------------------

_STAMP = re.compile(r"^(\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2})(?:\.(\d+))?$")


def parse_timestamps(path: str | Path, relative: bool = True) -> np.ndarray:
    """Seconds since the first line of a KITTI timestamps file (ns precision).

    With ``relative=False`` the values are seconds since the Unix epoch,
    which lets two files be put on a common clock.
    """
    path = Path(path)
    if not path.exists():
        raise MissingTimestamps(f"timestamps file not found: {path}", path=str(path))
    whole, frac = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            m = _STAMP.match(line)
            if m is None:
                raise ParseError(f"{path}:{lineno}: malformed timestamp {line!r}",
                                 file=str(path), line=lineno)
            dt = datetime.strptime(m.group(1), "%Y-%m-%d %H:%M:%S")
            whole.append(calendar.timegm(dt.timetuple()))
            digits = m.group(2) or "0"
            frac.append(int(digits) / 10 ** len(digits))
    whole = np.array(whole, dtype=np.float64)
    frac = np.array(frac, dtype=np.float64)
    if len(whole) == 0 or not relative:
        return whole + frac
    return (whole - whole[0]) + (frac - frac[0])


def parse_oxts_record(path: str | Path) -> tuple[float, float, float]:
    path = Path(path)
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines()]
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) < 3:
            raise ParseError(f"{path}:{lineno}: expected >= 3 fields, got {len(fields)}",
                             file=str(path), line=lineno)
        try:
            return float(fields[0]), float(fields[1]), float(fields[2])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric lat/lon/alt",
                             file=str(path), line=lineno) from None
    raise ParseError(f"{path}:1: empty OXTS record", file=str(path), line=1)


def read_oxts_dir(directory: str | Path) -> list[GeodeticCoord]:
    """Read a KITTI raw ``oxts`` directory (``data/*.txt`` + ``timestamps.txt``).

    A flat directory holding the record files next to ``timestamps.txt`` is
    accepted as well.
    """
    directory = Path(directory)
    data_dir = directory / "data" if (directory / "data").is_dir() else directory
    records = sorted(p for p in data_dir.glob("*.txt") if p.name != "timestamps.txt")
    stamps = parse_timestamps(directory / "timestamps.txt")
    if len(stamps) != len(records):
        raise MissingTimestamps(
            f"{len(records)} OXTS records but {len(stamps)} timestamps",
            records=len(records), timestamps=len(stamps))
    fixes = []
    for rec, t in zip(records, stamps):
        lat, lon, alt = parse_oxts_record(rec)
        try:
            fixes.append(GeodeticCoord(lat, lon, alt, float(t)))
        except InvalidCoordinate as exc:
            raise ParseError(f"{rec}:1: {exc.message}", file=str(rec), line=1) from None
    return fixes


# -- CSV ----------------------------------------------------------------------

TRACK_HEADER = ["t", "x_g", "y_g", "z_g", "available"]


def write_track_csv(track: GpsTrack, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACK_HEADER)
        for ti, p, a in zip(track.t, track.xyz, track.available):
            w.writerow([repr(float(ti)), repr(float(p[0])), repr(float(p[1])),
                        repr(float(p[2])), int(bool(a))])


def read_track_csv(path: str | Path, reference_lat: float = 0.0,
                   planar: bool = False) -> GpsTrack:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRACK_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"{path}: missing columns {sorted(missing)}", file=str(path), line=1)
        for lineno, row in enumerate(reader, 2):
            try:
                rows.append([float(row[k]) for k in TRACK_HEADER])
            except (TypeError, ValueError):
                raise ParseError(f"{path}:{lineno}: malformed row", file=str(path),
                                 line=lineno) from None
    if not rows:
        raise EmptyTrack(f"{path}: no rows")
    arr = np.array(rows)
    return GpsTrack(reference_lat, arr[:, 1:4], arr[:, 0], planar=planar,
                    available=arr[:, 4] > 0.5)

