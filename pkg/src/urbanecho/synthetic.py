"""Deterministic synthetic cities for fixtures, tests and benchmarks.

Buildings are rotated rectangles and L-shapes placed by rejection sampling:
no two footprints come closer than ``gap_m`` and none enters the clearance
disc around the source.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from shapely.geometry import Point, Polygon

from .ingest import scene_to_geojson
from .scene import EXTENT_M, GeoLocation, Scene


def _footprint(rng: np.random.Generator, cx: float, cy: float) -> np.ndarray:
    w, h = rng.uniform(12.0, 45.0, size=2)
    if rng.random() < 0.3:
        a, b = rng.uniform(0.35, 0.7, size=2)
        pts = np.array([[0, 0], [w, 0], [w, b * h], [a * w, b * h], [a * w, h], [0, h]], dtype=float)
    else:
        pts = np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=float)
    pts -= pts.mean(axis=0)
    t = rng.uniform(0.0, math.pi / 2)
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    return pts @ rot.T + [cx, cy]


def synthetic_scene(seed: int, n_buildings: int = 40, clearance_m: float = 55.0,
                    gap_m: float = 4.0, extent: float = EXTENT_M,
                    origin: GeoLocation | None = None, max_tries: int = 20000) -> Scene:
    rng = np.random.default_rng(seed)
    half = extent / 2
    placed: list[Polygon] = []
    out = []
    for _ in range(max_tries):
        if len(out) >= n_buildings:
            break
        cx, cy = rng.uniform(-half + 25, half - 25, size=2)
        pts = _footprint(rng, cx, cy)
        if np.abs(pts).max() > half - 1:
            continue
        poly = Polygon(pts)
        if poly.distance(Point(0.0, 0.0)) < clearance_m:
            continue
        if any(poly.distance(p) < gap_m for p in placed):
            continue
        placed.append(poly)
        out.append(tuple(map(tuple, np.round(pts, 3))))
    if origin is None:
        origin = GeoLocation(48.0 + (seed % 1000) * 1e-3, 11.0 + (seed % 997) * 1e-3, f"synthetic-{seed}")
    return Scene(buildings=tuple(out), extent=extent, origin=origin)


def dense_city(seed: int = 7) -> Scene:
    """A crowded district, roughly the wall count of a dense European center."""
    return synthetic_scene(seed, n_buildings=140, clearance_m=52.0, gap_m=3.0)


def write_fixture_dir(path, n: int, seed: int = 0, n_buildings: int = 40) -> list[Path]:
    """``n`` synthetic scenes as GeoJSON files ``scene_<k>.geojson``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for k in range(n):
        scene = synthetic_scene(seed * 100003 + k, n_buildings=n_buildings)
        f = path / f"scene_{k:03d}.geojson"
        f.write_text(json.dumps(scene_to_geojson(scene), indent=1) + "\n")
        files.append(f)
    return files
