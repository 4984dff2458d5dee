"""Receiver set construction: a regular lattice plus facade and corner receivers."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError
from .geometry import Point2, _outward_bisector

OFFSET_M = 0.01
MERGE_RADIUS_M = 0.01


class ReceiverKind(IntEnum):
    # lower value wins when receivers are merged
    CORNER = 0
    EDGE = 1
    LATTICE = 2


@dataclass(frozen=True)
class Receiver:
    position: Point2
    kind: ReceiverKind
    level_db: Optional[float] = None  # None: no path reaches the receiver


@dataclass
class ReceiverGrid:
    """Receivers as parallel arrays; ``levels`` is NaN for silent receivers."""

    positions: np.ndarray
    kinds: np.ndarray
    spacing: float = 5.0
    levels: Optional[np.ndarray] = None
    n_paths: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.positions)

    @property
    def receivers(self) -> list[Receiver]:
        out = []
        for i, (x, y) in enumerate(self.positions):
            level = None
            if self.levels is not None and not math.isnan(self.levels[i]):
                level = float(self.levels[i])
            out.append(Receiver(Point2(float(x), float(y)), ReceiverKind(int(self.kinds[i])), level))
        return out

    def with_levels(self, levels, n_paths=None) -> "ReceiverGrid":
        return replace(self, levels=np.asarray(levels, dtype=float), n_paths=n_paths)

    def to_csv(self, path):
        """Debug dump: ``x,y,kind`` plus ``level_db,n_paths`` once simulated.

        ``path`` may also be an open text file.
        """
        if hasattr(path, "write"):
            self._write_csv(path)
        else:
            with open(path, "w", newline="") as fh:
                self._write_csv(fh)

    def _write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        simulated = self.levels is not None
        w.writerow(["x", "y", "kind", "level_db", "n_paths"] if simulated else ["x", "y", "kind"])
        for i, (x, y) in enumerate(self.positions):
            row = [repr(float(x)), repr(float(y)), ReceiverKind(int(self.kinds[i])).name.lower()]
            if simulated:
                lv = self.levels[i]
                row.append("silent" if math.isnan(lv) else repr(float(lv)))
                row.append(int(self.n_paths[i]) if self.n_paths is not None else "")
            w.writerow(row)


def _merge(anchors: np.ndarray, kinds: np.ndarray) -> np.ndarray:
    """Indices kept after greedy merging within MERGE_RADIUS_M.

    Candidates are visited by (kind, y, x) so the result depends neither on
    polygon order nor on vertex start positions.
    """
    order = np.lexsort((anchors[:, 0], anchors[:, 1], kinds))
    pairs = cKDTree(anchors).query_pairs(MERGE_RADIUS_M + 1e-9, output_type="ndarray")
    if len(pairs) == 0:
        return order
    neighbours: dict[int, list[int]] = {}
    for i, j in pairs:
        neighbours.setdefault(int(i), []).append(int(j))
        neighbours.setdefault(int(j), []).append(int(i))
    kept = np.zeros(len(anchors), dtype=bool)
    for i in order:
        if not any(kept[j] for j in neighbours.get(int(i), ())):
            kept[i] = True
    return order[kept[order]]


def build_grid(scene, spacing: float = 5.0) -> ReceiverGrid:
    """Receivers for ``scene``.

    * lattice points every ``spacing`` meters from the south-west extent corner;
    * every polygon corner, moved 1 cm outward along the corner bisector;
    * points every ``spacing`` meters along each wall from its first vertex
      (the last sample sits on the far vertex), moved 1 cm off the wall;
    * points strictly inside a building or outside the extent are dropped and
      points within 1 cm are merged, corner over edge over lattice.

    Output is sorted by (y, x).
    """
    if not spacing > 0:
        raise ValidationError(f"spacing must be positive, got {spacing}")
    half = scene.extent / 2
    n = int(math.floor(scene.extent / spacing + 1e-9)) + 1
    axis = -half + np.arange(n) * spacing
    gx, gy = np.meshgrid(axis, axis)
    anchors = [np.column_stack([gx.ravel(), gy.ravel()])]
    offsets = [np.zeros_like(anchors[0])]
    kinds = [np.full(n * n, ReceiverKind.LATTICE, dtype=np.int8)]

    for poly in scene.buildings:
        v = poly.array
        m = len(v)
        prev, nxt = np.roll(v, 1, axis=0), np.roll(v, -1, axis=0)
        d_in = v - prev
        d_in /= np.hypot(d_in[:, 0], d_in[:, 1])[:, None]
        d_out = nxt - v
        lengths = np.hypot(d_out[:, 0], d_out[:, 1])
        d_out = d_out / lengths[:, None]
        bis = np.array([_outward_bisector(d_in[i], d_out[i]) for i in range(m)])
        anchors.append(v.copy())
        offsets.append(OFFSET_M * bis)
        kinds.append(np.full(m, ReceiverKind.CORNER, dtype=np.int8))
        for i in range(m):
            steps = np.minimum(np.arange(math.ceil(lengths[i] / spacing) + 1) * spacing, lengths[i])
            pts = v[i] + steps[:, None] * d_out[i]
            normal = np.array([d_out[i, 1], -d_out[i, 0]])
            anchors.append(pts)
            offsets.append(np.tile(OFFSET_M * normal, (len(pts), 1)))
            kinds.append(np.full(len(pts), ReceiverKind.EDGE, dtype=np.int8))

    anchors = np.vstack(anchors)
    offsets = np.vstack(offsets)
    kinds = np.concatenate(kinds)

    keep = _merge(anchors, kinds)
    pos, kinds = anchors[keep] + offsets[keep], kinds[keep]
    in_extent = np.all(np.abs(pos) <= half + 1e-9, axis=1)
    pos, kinds = pos[in_extent], kinds[in_extent]
    if scene.buildings:
        outside = ~scene.index.inside(pos, strict=True)
        pos, kinds = pos[outside], kinds[outside]
    keep = _merge(pos, kinds)
    pos, kinds = pos[keep], kinds[keep]
    order = np.lexsort((kinds, pos[:, 0], pos[:, 1]))
    return ReceiverGrid(np.ascontiguousarray(pos[order]), kinds[order], float(spacing))
