"""Raster files: the ``F32R`` float container and KITTI 16-bit depth PNGs.

F32R layout: the 4 magic bytes ``F32R``, then little-endian u32 width,
height and channels, then ``width*height*channels`` little-endian float32
samples, row-major with channels interleaved.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"F32R"
_HEADER = struct.Struct("<4sIII")
KITTI_DEPTH_SCALE = 256.0


def write_f32r(path: str | Path, array: np.ndarray) -> None:
    """Write an ``(H, W)`` or ``(H, W, C)`` array."""
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ValueError(f"expected a 2-D or 3-D raster, got shape {a.shape}")
    h, w, c = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, w, h, c))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_f32r(path: str | Path, squeeze: bool = True) -> np.ndarray:
    """Read an F32R raster as float64; single-channel rasters come back 2-D."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: truncated header", file=str(path))
    magic, w, h, c = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}", file=str(path))
    n = w * h * c
    body = data[_HEADER.size:]
    if len(body) != 4 * n:
        raise ParseError(f"{path}: expected {n} samples, found {len(body) // 4}",
                         file=str(path))
    a = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(h, w, c)
    return a[..., 0] if squeeze and c == 1 else a


def read_kitti_depth(path: str | Path) -> np.ndarray:
    """Metric depth from a KITTI 16-bit PNG; 0 (invalid) stays 0."""
    from PIL import Image

    with Image.open(path) as im:
        raw = np.array(im, dtype=np.uint16)
    if raw.ndim != 2:
        raise ParseError(f"{path}: expected a single-channel 16-bit image", file=str(path))
    return raw.astype(np.float64) / KITTI_DEPTH_SCALE


def write_kitti_depth(path: str | Path, depth: np.ndarray) -> None:
    from PIL import Image

    d = np.asarray(depth, dtype=np.float64)
    raw = np.where(np.isfinite(d) & (d > 0), np.round(d * KITTI_DEPTH_SCALE), 0)
    Image.fromarray(np.clip(raw, 0, 65535).astype(np.uint16)).save(path)


def read_depth(path: str | Path) -> np.ndarray:
    """Dispatch on extension: ``.png`` is KITTI convention, anything else F32R."""
    if Path(path).suffix.lower() == ".png":
        return read_kitti_depth(path)
    return read_f32r(path)
