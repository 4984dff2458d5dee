"""Receiver levels to fixed-resolution sound maps, and the dB <-> gray encoding."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.interpolate import LinearNDInterpolator
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, ParseError, ValidationError
from .geometry import pixel_centers

DB_MIN = 0.0
DB_MAX = 100.0


def encode_gray(db):
    """0-100 dB to 0-255, clamped, rounding half away from zero."""
    x = np.clip(np.asarray(db, dtype=float), DB_MIN, DB_MAX) * 255.0 / 100.0
    g = np.floor(x + 0.5).astype(np.uint8)
    return int(g) if g.ndim == 0 else g


def decode_gray(g):
    x = np.asarray(g, dtype=float) * 100.0 / 255.0
    return float(x) if x.ndim == 0 else x


@dataclass
class SoundMap:
    db_values: np.ndarray
    building_mask: np.ndarray
    meta: dict = field(default_factory=dict)
    extent: float = 500.0

    def __post_init__(self):
        if self.db_values.shape != self.building_mask.shape or self.db_values.ndim != 2:
            raise ValidationError("db_values and building_mask must be equal 2D shapes")
        self.gray = encode_gray(self.db_values)
        self.gray[self.building_mask] = 0

    @property
    def resolution(self) -> int:
        return self.db_values.shape[0]

    @property
    def pixel_pitch_m(self) -> float:
        return self.extent / self.resolution

    @classmethod
    def from_gray(cls, gray: np.ndarray, building_mask=None, meta=None, extent: float = 500.0):
        gray = np.asarray(gray, dtype=np.uint8)
        if building_mask is None:
            building_mask = np.zeros(gray.shape, dtype=bool)
        sm = cls(decode_gray(gray), np.asarray(building_mask, dtype=bool), dict(meta or {}), extent)
        sm.gray = gray.copy()
        return sm

    def sidecar(self) -> dict:
        return {"resolution": self.resolution, "pixel_pitch_m": self.pixel_pitch_m, **self.meta}


def interpolate(grid, scene, resolution: int, meta=None) -> SoundMap:
    """Linear interpolation of receiver levels at pixel centers.

    Barycentric over a Delaunay triangulation of the receivers; pixels outside
    the receiver hull take the nearest receiver's value; silent receivers
    count as 0 dB and building pixels are set to 0 dB.
    """
    if grid.levels is None:
        raise ValidationError("receiver levels are not set; run simulate first")
    pts = np.asarray(grid.positions, dtype=float)
    vals = np.nan_to_num(np.asarray(grid.levels, dtype=float), nan=0.0)
    if len(pts) < 3:
        raise DegenerateInputError(f"need at least 3 receivers, got {len(pts)}")
    # lexicographic order fixes qhull's tie-breaking on cocircular lattices
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts, vals = pts[order], vals[order]
    centered = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
        raise DegenerateInputError("receivers are collinear")
    centers = pixel_centers(resolution, scene.extent).reshape(-1, 2)
    out = LinearNDInterpolator(pts, vals)(centers)
    missing = np.isnan(out)
    if missing.any():
        _, nearest = cKDTree(pts).query(centers[missing])
        out[missing] = vals[nearest]
    building = scene.index.inside(centers) if scene.buildings else np.zeros(len(centers), bool)
    out[building] = 0.0
    db = np.clip(out, DB_MIN, DB_MAX).reshape(resolution, resolution)
    return SoundMap(db, building.reshape(resolution, resolution), dict(meta or {}), scene.extent)


# --- image IO ---------------------------------------------------------------

def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def png_bytes(gray: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(np.asarray(gray, dtype=np.uint8), mode="L").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def pgm_bytes(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes()


def write_gray(path, gray: np.ndarray):
    """8-bit grayscale PNG, or binary PGM for a ``.pgm`` suffix."""
    data = pgm_bytes(gray) if str(path).lower().endswith(".pgm") else png_bytes(gray)
    _atomic_write(path, data)


def read_gray(path) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix.lower() == ".pgm":
            raw = path.read_bytes()
            parts = raw.split(maxsplit=4)
            if parts[0] != b"P5" or int(parts[3]) != 255:
                raise ValueError("not an 8-bit binary PGM")
            w, h = int(parts[1]), int(parts[2])
            return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w).copy()
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ParseError(f"cannot decode image {path}: {exc}") from exc


def write_sound_map(path, sound_map: SoundMap, sidecar: bool = True):
    write_gray(path, sound_map.gray)
    if sidecar:
        meta = json.dumps(sound_map.sidecar(), indent=2, sort_keys=True) + "\n"
        _atomic_write(Path(path).with_suffix(".json"), meta.encode())
