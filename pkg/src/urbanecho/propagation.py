"""Sound propagation: path enumeration and per-receiver levels.

Each path contributes ``L = L_W' - A_div - A_atm - A_dif`` where ``L_W'`` is
the source level after the reflection adjustment for the path's order, and
contributions are summed energetically. Ground attenuation is not modelled
and only horizontal (around-the-corner) diffraction exists.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import DomainError, ValidationError
from .geometry import EPS, Point2, line_of_sight, shortest_detour
from .receivers import ReceiverGrid

SPEED_OF_SOUND = 340.0
# attenuation distances are floored here (the receiver at the source)
MIN_DISTANCE_M = 1.0
CHUNK = 1024


class Variant(str, Enum):
    BASELINE = "baseline"
    DIFFRACTION = "diffraction"
    REFLECTION = "reflection"
    COMBINED = "combined"


@dataclass(frozen=True)
class SourceSpec:
    level_db: float = 95.0
    frequency_hz: float = 500.0

    def __post_init__(self):
        if not math.isfinite(self.level_db):
            raise ValidationError(f"source level must be finite, got {self.level_db}")
        if not self.frequency_hz > 0:
            raise ValidationError(f"frequency must be positive, got {self.frequency_hz}")


@dataclass(frozen=True)
class Environment:
    temperature_c: float = 20.0
    humidity_pct: float = 70.0

    def __post_init__(self):
        if not -20.0 <= self.temperature_c <= 40.0:
            raise ValidationError(f"temperature {self.temperature_c} C outside [-20, 40]")
        if not 10.0 <= self.humidity_pct <= 100.0:
            raise ValidationError(f"humidity {self.humidity_pct}% outside [10, 100]")


@dataclass(frozen=True)
class TaskConfig:
    variant: Variant
    source: SourceSpec = field(default_factory=SourceSpec)
    env: Environment = field(default_factory=Environment)
    enable_diffraction: bool = False
    max_reflection_order: int = 0
    alpha_vert: float = 0.1
    enable_atmosphere: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.max_reflection_order < 0:
            raise ValidationError("max_reflection_order must be >= 0")
        if not 0.0 <= self.alpha_vert < 1.0:
            raise DomainError(f"alpha_vert must be in [0, 1), got {self.alpha_vert}")
        v, order, dif = self.variant, self.max_reflection_order, self.enable_diffraction
        if v is Variant.BASELINE and (dif or order):
            raise ValidationError("baseline runs without diffraction and reflections")
        if v is Variant.DIFFRACTION and (not dif or order):
            raise ValidationError("diffraction task needs diffraction on and no reflections")
        if v is Variant.REFLECTION and (dif or order < 1):
            raise ValidationError("reflection task needs reflection order >= 1 and no diffraction")
        if v is Variant.COMBINED and not (dif and order >= 1 and self.enable_atmosphere):
            raise ValidationError("combined task enables diffraction, reflections and atmosphere")

    @property
    def atm_db_per_m(self) -> float:
        if not self.enable_atmosphere:
            return 0.0
        return atmospheric_absorption(self.source.frequency_hz, self.env.temperature_c,
                                      self.env.humidity_pct) / 1000.0


class PathKind(str, Enum):
    DIRECT = "direct"
    DIFFRACTED = "diffracted"
    REFLECTED = "reflected"


@dataclass(frozen=True)
class PropagationPath:
    kind: PathKind
    length_m: float
    vertices: tuple
    reflection_order: int = 0
    detour_delta_m: float = 0.0


@dataclass(frozen=True)
class PathAttenuation:
    a_div_db: float
    a_atm_db: float
    a_dif_db: float
    adjusted_source_db: float

    @property
    def level_db(self) -> float:
        return self.adjusted_source_db - self.a_div_db - self.a_atm_db - self.a_dif_db


def attenuation_div(d: float) -> float:
    """Geometric spreading of a point source, 20 log10(d) + 11 dB."""
    if not d > 0:
        raise DomainError(f"distance must be positive, got {d}")
    return 20.0 * math.log10(d) + 11.0


def atmospheric_absorption(frequency_hz: float, temperature_c: float, humidity_pct: float,
                           pressure_kpa: float = 101.325) -> float:
    """Pure-tone air absorption coefficient in dB/km (ISO 9613-1)."""
    T = temperature_c + 273.15
    T0 = 293.15
    T01 = 273.16
    pa = pressure_kpa / 101.325
    tr = T / T0
    # molar concentration of water vapour, percent
    h = humidity_pct * 10.0 ** (-6.8346 * (T01 / T) ** 1.261 + 4.6151) / pa
    fr_o = pa * (24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h))
    fr_n = pa * tr ** -0.5 * (9.0 + 280.0 * h * math.exp(-4.170 * (tr ** (-1.0 / 3.0) - 1.0)))
    f2 = frequency_hz * frequency_hz
    alpha = 8.686 * f2 * (
        1.84e-11 / pa * tr ** 0.5
        + tr ** -2.5 * (
            0.01275 * math.exp(-2239.1 / T) / (fr_o + f2 / fr_o)
            + 0.1068 * math.exp(-3352.0 / T) / (fr_n + f2 / fr_n)
        )
    )
    return alpha * 1000.0


def attenuation_atm(d: float, frequency_hz: float, env: Environment) -> float:
    if d < 0:
        raise DomainError(f"distance must be non-negative, got {d}")
    return atmospheric_absorption(frequency_hz, env.temperature_c, env.humidity_pct) * d / 1000.0


def attenuation_dif(delta: float, frequency_hz: float) -> float:
    """Horizontal diffraction loss for a detour of ``delta`` meters."""
    if delta < 0:
        raise DomainError(f"path difference must be non-negative, got {delta}")
    wavelength = SPEED_OF_SOUND / frequency_hz
    return max(0.0, 10.0 * math.log10(3.0 + 40.0 / wavelength * delta))


def reflection_adjusted_source(level_db: float, n_ref: int, alpha_vert: float) -> float:
    """Source level for paths with ``n_ref`` reflections.

    Unrolls L(n) = L(n-1) + n * 10 log10(1 - alpha) from L(0) = level_db.
    """
    if not 0.0 <= alpha_vert < 1.0:
        raise DomainError(f"alpha_vert must be in [0, 1), got {alpha_vert}")
    if n_ref < 0:
        raise DomainError(f"reflection order must be >= 0, got {n_ref}")
    step = 10.0 * math.log10(1.0 - alpha_vert)
    level = level_db
    for n in range(1, n_ref + 1):
        level = level + n * step
    return level


def path_attenuation(path: PropagationPath, config: TaskConfig) -> PathAttenuation:
    d = max(path.length_m, MIN_DISTANCE_M)
    a_atm = 0.0
    if config.enable_atmosphere:
        a_atm = attenuation_atm(path.length_m, config.source.frequency_hz, config.env)
    a_dif = 0.0
    if path.kind is PathKind.DIFFRACTED:
        a_dif = attenuation_dif(path.detour_delta_m, config.source.frequency_hz)
    return PathAttenuation(
        a_div_db=attenuation_div(d),
        a_atm_db=a_atm,
        a_dif_db=a_dif,
        adjusted_source_db=reflection_adjusted_source(
            config.source.level_db, path.reflection_order, config.alpha_vert),
    )


def receiver_level(paths, config: TaskConfig) -> Optional[float]:
    """Energetic sum of path levels in dB, or None when no path arrives."""
    if not paths:
        return None
    energies = [10.0 ** (path_attenuation(p, config).level_db / 10.0) for p in paths]
    return 10.0 * math.log10(math.fsum(energies))


# --- path enumeration -------------------------------------------------------

def _walls(scene):
    for poly in scene.buildings:
        yield from poly.edges()


def _exterior_dist(p, a, b) -> float:
    # signed distance, negative on the exterior (right) side of a CCW wall
    ex, ey = b[0] - a[0], b[1] - a[1]
    return (ex * (p[1] - a[1]) - ey * (p[0] - a[0])) / math.hypot(ex, ey)


def _mirror(p, a, b) -> Point2:
    ex, ey = b[0] - a[0], b[1] - a[1]
    t = ((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / (ex * ex + ey * ey)
    fx, fy = a[0] + t * ex, a[1] + t * ey
    return Point2(2 * fx - p[0], 2 * fy - p[1])


def _trace_images(scene, source, receiver, walls):
    """Reflection points for the wall sequence ``walls`` (receiver side first),
    or None when the sequence gives no valid specular path."""
    images = [receiver]
    for a, b in walls:
        if _exterior_dist(images[-1], a, b) >= -EPS:
            return None
        images.append(_mirror(images[-1], a, b))
    hits = []
    start = source
    for (a, b), image in zip(reversed(walls), reversed(images[1:])):
        ds = _exterior_dist(start, a, b)
        di = _exterior_dist(image, a, b)
        if ds >= -EPS or di <= EPS:
            return None
        t = ds / (ds - di)
        h = Point2(start[0] + t * (image[0] - start[0]), start[1] + t * (image[1] - start[1]))
        lw = math.dist(a, b)
        u = ((h[0] - a[0]) * (b[0] - a[0]) + (h[1] - a[1]) * (b[1] - a[1])) / lw
        if u < -EPS or u > lw + EPS:
            return None
        hits.append(h)
        start = h
    chain = [source, *hits, receiver]
    for p, q in zip(chain, chain[1:]):
        if not line_of_sight(scene, p, q):
            return None
    return chain, math.dist(source, images[-1])


def _reflected_paths(scene, source, receiver, max_order):
    walls = list(_walls(scene))
    out = []

    def extend(seq):
        k = len(seq)
        if k:
            traced = _trace_images(scene, source, receiver, [walls[i] for i in seq])
            if traced is not None:
                chain, length = traced
                out.append(PropagationPath(PathKind.REFLECTED, length, tuple(chain), k))
        if k == max_order:
            return
        for i in range(len(walls)):
            if seq and seq[-1] == i:
                continue
            extend(seq + [i])

    extend([])
    return out


def find_paths(scene, source, receiver, config: TaskConfig) -> list[PropagationPath]:
    """Direct, diffracted and reflected paths from ``source`` to ``receiver``.

    Plain-Python enumeration over every wall sequence up to the configured
    order; meant for inspection and cross-checking, :func:`simulate` is the
    bulk path.
    """
    source = Point2(*map(float, source))
    receiver = Point2(*map(float, receiver))
    if scene.buildings and scene.index.inside([receiver], strict=True)[0]:
        raise DomainError(f"receiver {tuple(receiver)} lies inside a building")
    paths = []
    direct = math.dist(source, receiver)
    if line_of_sight(scene, source, receiver):
        paths.append(PropagationPath(PathKind.DIRECT, direct, (source, receiver)))
    elif config.enable_diffraction:
        detour = shortest_detour(scene, source, receiver)
        if detour is not None:
            vertices, length = detour
            paths.append(PropagationPath(PathKind.DIFFRACTED, length, tuple(vertices),
                                         detour_delta_m=max(0.0, length - direct)))
    if config.max_reflection_order:
        paths.extend(_reflected_paths(scene, source, receiver, config.max_reflection_order))
    return paths


# --- bulk simulation --------------------------------------------------------

def reflection_sequences(index, source, max_order: int) -> tuple[np.ndarray, np.ndarray]:
    """Candidate wall sequences up to ``max_order`` (rows receiver-side first).

    The first wall hit from the source must face it, and consecutive walls
    must each have an endpoint on the other's exterior side.
    """
    walls = index.walls
    W = len(walls)
    if max_order < 1 or W == 0:
        return np.zeros((0, max(max_order, 1)), dtype=np.int64), np.zeros(0, dtype=np.int64)
    p, q = walls[:, :2], walls[:, 2:]
    e = q - p
    lw = index.wlen

    def ext(pts):  # (W, n) exterior distances of pts against every wall
        return (e[:, 0, None] * (pts[None, :, 1] - p[:, 1, None])
                - e[:, 1, None] * (pts[None, :, 0] - p[:, 0, None])) / lw[:, None]

    faces_source = ext(np.asarray([source], dtype=float))[:, 0] < -EPS
    rows = [[int(w)] for w in np.flatnonzero(faces_source)]
    seqs = list(rows)
    if max_order > 1:
        a_sees_b = (ext(p) < -EPS) | (ext(q) < -EPS)  # [a, b]: an endpoint of b outside a
        facing = a_sees_b & a_sees_b.T
        np.fill_diagonal(facing, False)
        frontier = rows
        for _ in range(max_order - 1):
            frontier = [r + [int(b)] for r in frontier for b in np.flatnonzero(facing[r[-1]])]
            seqs.extend(frontier)
    K_ = max(len(s) for s in seqs) if seqs else 1
    arr = np.full((len(seqs), K_), -1, dtype=np.int64)
    lens = np.zeros(len(seqs), dtype=np.int64)
    for i, s in enumerate(seqs):
        arr[i, : len(s)] = s[::-1]
        lens[i] = len(s)
    return arr, lens


def _div(d):
    return 20.0 * np.log10(np.maximum(d, MIN_DISTANCE_M)) + 11.0


def _chunked(fn, n: int, workers: int):
    slices = [slice(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]
    if workers <= 1 or len(slices) <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, slices))


def simulate(scene, grid: ReceiverGrid, config: TaskConfig, workers: int = 1) -> ReceiverGrid:
    """Levels for every receiver of ``grid``.

    Receivers are independent and their sums are accumulated in a fixed
    order, so the result does not depend on ``workers``. Levels below 0 dB
    are floored at 0; receivers reached by no path are NaN (silent).
    """
    scene.check_source()
    src = scene.source
    pts = np.ascontiguousarray(grid.positions, dtype=float)
    n = len(pts)
    idx = scene.index
    f = config.source.frequency_hz
    lw = config.source.level_db
    atm = config.atm_db_per_m

    d = np.hypot(pts[:, 0] - src.x, pts[:, 1] - src.y)
    visible = np.concatenate(_chunked(lambda s: idx.visible_from(src, pts[s]), n, workers)) \
        if n else np.zeros(0, dtype=bool)
    energy = np.zeros(n)
    n_paths = visible.astype(np.int64)
    energy[visible] = 10.0 ** ((lw - _div(d[visible]) - atm * d[visible]) / 10.0)

    if config.enable_diffraction and not visible.all():
        blocked = np.flatnonzero(~visible)
        idx.detour_field(src)
        parts = _chunked(lambda s: idx.detour_lengths(src, pts[blocked[s]])[0], len(blocked), workers)
        length = np.concatenate(parts)
        ok = np.isfinite(length)
        rows, length = blocked[ok], length[ok]
        delta = np.maximum(length - d[rows], 0.0)
        a_dif = np.maximum(0.0, 10.0 * np.log10(3.0 + 40.0 * f / SPEED_OF_SOUND * delta))
        energy[rows] += 10.0 ** ((lw - _div(length) - atm * length - a_dif) / 10.0)
        n_paths[rows] += 1

    if config.max_reflection_order >= 1:
        seqs, lens = reflection_sequences(idx, src, config.max_reflection_order)
        adjusted = np.array([reflection_adjusted_source(lw, k, config.alpha_vert)
                             for k in range(config.max_reflection_order + 1)])
        if len(seqs):
            def run(s):
                return K.reflection_energy(src.x, src.y, pts[s], seqs, lens, *idx.args,
                                           adjusted, atm, MIN_DISTANCE_M)
            parts = _chunked(run, n, workers)
            energy += np.concatenate([e for e, _ in parts])
            n_paths += np.concatenate([c for _, c in parts])

    with np.errstate(divide="ignore"):
        levels = np.where(energy > 0, np.maximum(10.0 * np.log10(energy), 0.0), np.nan)
    return grid.with_levels(levels, n_paths)
