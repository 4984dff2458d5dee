"""2D geometry kernel: polygons, intersection and containment predicates,
line of sight, visibility-graph detours and LoS/NLoS pixel masks.

Conventions used throughout the package:

* points on a polygon boundary count as inside;
* a sight line that touches a building anywhere between its endpoints,
  including grazing a vertex or running along a wall, is blocked;
* orientation tests use a tolerance of 1e-9 m on signed distances.

The scalar predicates here (``point_in_polygon``, ``segments_intersect``,
``line_of_sight``) are plain Python and serve as the reference semantics.
Bulk queries go through :class:`SceneIndex`, which wraps the compiled kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from . import _kernels as K
from .errors import ValidationError

EPS = 1e-9
CORNER_OFFSET_M = 0.01
GRID_CELL_M = 8.0

NLOS = 0
LOS = 1
BUILDING = 2


class Point2(NamedTuple):
    x: float
    y: float


class Segment2(NamedTuple):
    a: Point2
    b: Point2


def _as_point(p) -> Point2:
    return p if isinstance(p, Point2) else Point2(float(p[0]), float(p[1]))


def orient(a, b, c) -> float:
    """Twice the signed area of triangle abc (> 0 for a left turn)."""
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def signed_area(vertices: Sequence) -> float:
    n = len(vertices)
    s = 0.0
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


@dataclass(frozen=True)
class Polygon2:
    """Simple polygon (exterior ring only), stored counter-clockwise.

    A repeated closing vertex and consecutive duplicates are dropped on
    construction.
    """

    vertices: tuple

    def __post_init__(self):
        pts = [_as_point(v) for v in self.vertices]
        if len(pts) > 1 and pts[0] == pts[-1]:
            pts.pop()
        dedup = []
        for p in pts:
            if not dedup or p != dedup[-1]:
                dedup.append(p)
        if len(dedup) > 1 and dedup[0] == dedup[-1]:
            dedup.pop()
        if len(dedup) < 3:
            raise ValidationError(f"polygon needs at least 3 distinct vertices, got {len(dedup)}")
        area = signed_area(dedup)
        if abs(area) <= EPS:
            raise ValidationError("polygon has zero area")
        if area < 0:
            dedup.reverse()
        object.__setattr__(self, "vertices", tuple(dedup))

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    def edges(self) -> Iterable[Segment2]:
        vs = self.vertices
        for i in range(len(vs)):
            yield Segment2(vs[i], vs[(i + 1) % len(vs)])

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def is_simple(self) -> bool:
        """No two non-adjacent edges touch."""
        edges = list(self.edges())
        n = len(edges)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if segments_intersect(edges[i], edges[j]):
                    return False
        return True


def point_segment_distance(p, a, b) -> float:
    ax, ay = a
    ex, ey = b[0] - ax, b[1] - ay
    ll = ex * ex + ey * ey
    t = 0.0 if ll == 0 else max(0.0, min(1.0, ((p[0] - ax) * ex + (p[1] - ay) * ey) / ll))
    return math.hypot(ax + t * ex - p[0], ay + t * ey - p[1])


def point_in_polygon(p, poly: Polygon2) -> bool:
    """True if ``p`` is inside ``poly`` or on its boundary."""
    if not isinstance(poly, Polygon2):
        poly = Polygon2(tuple(poly))
    x, y = p
    inside = False
    for a, b in poly.edges():
        if point_segment_distance(p, a, b) <= EPS:
            return True
        if (a.y > y) != (b.y > y):
            xint = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y)
            if x < xint:
                inside = not inside
    return inside


def point_strictly_in_polygon(p, poly: Polygon2) -> bool:
    if any(point_segment_distance(p, a, b) <= EPS for a, b in poly.edges()):
        return False
    return point_in_polygon(p, poly)


def _side(d: float) -> int:
    return 0 if abs(d) <= EPS else (1 if d > 0 else -1)


def segments_intersect(s1, s2) -> bool:
    """True if closed segments share at least one point.

    Collinear overlap and endpoint contact count as intersecting.
    """
    (a, b), (c, d) = s1, s2
    l1 = math.dist(a, b) or 1.0
    l2 = math.dist(c, d) or 1.0
    o1 = _side(orient(a, b, c) / l1)
    o2 = _side(orient(a, b, d) / l1)
    o3 = _side(orient(c, d, a) / l2)
    o4 = _side(orient(c, d, b) / l2)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True
    if o1 == 0 and point_segment_distance(c, a, b) <= EPS:
        return True
    if o2 == 0 and point_segment_distance(d, a, b) <= EPS:
        return True
    if o3 == 0 and point_segment_distance(a, c, d) <= EPS:
        return True
    if o4 == 0 and point_segment_distance(b, c, d) <= EPS:
        return True
    return False


def _touches_open_segment(a, b, length, p, q) -> bool:
    # does closed edge pq meet the open segment (a, b) away from its endpoints?
    if not segments_intersect((a, b), (p, q)):
        return False
    ux, uy = (b[0] - a[0]) / length, (b[1] - a[1]) / length
    dp = orient(a, b, p) / length
    dq = orient(a, b, q) / length
    if abs(dp) <= EPS and abs(dq) <= EPS:
        # collinear: overlap interval along ab
        tp = (p[0] - a[0]) * ux + (p[1] - a[1]) * uy
        tq = (q[0] - a[0]) * ux + (q[1] - a[1]) * uy
        lo, hi = max(min(tp, tq), 0.0), min(max(tp, tq), length)
        if hi - lo > EPS:
            return True
        return EPS < lo < length - EPS
    if abs(dp) <= EPS or abs(dq) <= EPS:
        v = p if abs(dp) <= EPS else q
        t = (v[0] - a[0]) * ux + (v[1] - a[1]) * uy
        if EPS < t < length - EPS:
            return True
    # single crossing point of the two carrier lines
    ex, ey = q[0] - p[0], q[1] - p[1]
    denom = (b[0] - a[0]) * ey - (b[1] - a[1]) * ex
    if abs(denom) <= EPS * EPS:
        return False
    s = ((p[0] - a[0]) * ey - (p[1] - a[1]) * ex) / denom
    return EPS < s * length < length - EPS


def line_of_sight(scene, a, b) -> bool:
    """True if the open segment (a, b) meets no building interior or boundary."""
    a, b = _as_point(a), _as_point(b)
    length = math.dist(a, b)
    if length <= EPS:
        return True
    mid = Point2(0.5 * (a.x + b.x), 0.5 * (a.y + b.y))
    for poly in scene.buildings:
        for p, q in poly.edges():
            if _touches_open_segment(a, b, length, p, q):
                return False
        if point_in_polygon(mid, poly):
            return False
    return True


def pixel_centers(resolution: int, extent: float = 500.0) -> np.ndarray:
    """(res, res, 2) array of pixel-center coordinates; row 0 is the north edge."""
    pitch = extent / resolution
    c = -extent / 2 + (np.arange(resolution) + 0.5) * pitch
    xs, ys = np.meshgrid(c, c[::-1])
    return np.stack([xs, ys], axis=-1)


@dataclass
class DetourField:
    """Shortest distances from a fixed origin to every diffraction corner."""

    origin: Point2
    dist: np.ndarray
    pred: np.ndarray


@dataclass(eq=False)
class SceneIndex:
    """Flattened wall arrays, a uniform wall grid and the diffraction corners
    of a set of buildings, ready for the compiled kernels."""

    buildings: Sequence[Polygon2]
    cell_size: float = GRID_CELL_M
    _fields: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        rows, pstart, pend, boxes = [], [], [], []
        for poly in self.buildings:
            v = poly.array
            pstart.append(len(rows))
            nxt = np.roll(v, -1, axis=0)
            rows.extend(np.hstack([v, nxt]).tolist())
            pend.append(len(rows))
            boxes.append([v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()])
        self.walls = np.asarray(rows, dtype=float).reshape(-1, 4)
        self.wlen = np.hypot(self.walls[:, 2] - self.walls[:, 0], self.walls[:, 3] - self.walls[:, 1])
        self.pstart = np.asarray(pstart, dtype=np.int64)
        self.pend = np.asarray(pend, dtype=np.int64)
        self.wall_poly = np.repeat(np.arange(len(pstart), dtype=np.int64), self.pend - self.pstart)
        self.pbox = np.asarray(boxes, dtype=float).reshape(-1, 4)
        self._build_grid()
        self._build_corners()

    def _build_grid(self):
        cs = float(self.cell_size)
        if len(self.walls):
            lo = np.floor(np.minimum(self.walls[:, [0, 1]], self.walls[:, [2, 3]]).min(axis=0)) - 1.0
            hi = np.ceil(np.maximum(self.walls[:, [0, 1]], self.walls[:, [2, 3]]).max(axis=0)) + 1.0
        else:
            lo, hi = np.zeros(2), np.full(2, cs)
        nx, ny = (np.maximum(1, np.ceil((hi - lo) / cs))).astype(np.int64)
        buckets = [[] for _ in range(nx * ny)]
        margin = 1e-3
        for w, (x0, y0, x1, y1) in enumerate(self.walls):
            ix0 = int(np.clip((min(x0, x1) - margin - lo[0]) // cs, 0, nx - 1))
            ix1 = int(np.clip((max(x0, x1) + margin - lo[0]) // cs, 0, nx - 1))
            iy0 = int(np.clip((min(y0, y1) - margin - lo[1]) // cs, 0, ny - 1))
            iy1 = int(np.clip((max(y0, y1) + margin - lo[1]) // cs, 0, ny - 1))
            for iy in range(iy0, iy1 + 1):
                for ix in range(ix0, ix1 + 1):
                    buckets[iy * nx + ix].append(w)
        counts = np.fromiter((len(b) for b in buckets), dtype=np.int64, count=len(buckets))
        self.cstart = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.citems = np.asarray([w for b in buckets for w in b], dtype=np.int64)
        self.gmeta = np.array([lo[0], lo[1], cs])
        self.gdims = np.array([nx, ny], dtype=np.int64)

    def _build_corners(self):
        cxy, cv, cnb = [], [], []
        for poly in self.buildings:
            v = poly.array
            n = len(v)
            for i in range(n):
                u, p, w = v[i - 1], v[i], v[(i + 1) % n]
                e1, e2 = p - u, w - p
                l1, l2 = np.hypot(*e1), np.hypot(*e2)
                turn = (e1[0] * e2[1] - e1[1] * e2[0]) / (l1 * l2)
                if turn <= 1e-9:
                    continue  # reflex or flat vertex: never on a shortest path
                off = _outward_bisector(e1 / l1, e2 / l2)
                cxy.append(p + CORNER_OFFSET_M * off)
                cv.append(p)
                cnb.append([u[0], u[1], w[0], w[1]])
        self.corner_xy = np.asarray(cxy, dtype=float).reshape(-1, 2)
        self.corner_vertex = np.asarray(cv, dtype=float).reshape(-1, 2)
        self.corner_nb = np.asarray(cnb, dtype=float).reshape(-1, 4)
        if len(self.corner_xy):
            keep = ~self.inside(self.corner_xy)
            self.corner_xy = np.ascontiguousarray(self.corner_xy[keep])
            self.corner_vertex = np.ascontiguousarray(self.corner_vertex[keep])
            self.corner_nb = np.ascontiguousarray(self.corner_nb[keep])

    @property
    def args(self) -> tuple:
        return (self.walls, self.wlen, self.pstart, self.pend, self.pbox,
                self.gmeta, self.gdims, self.cstart, self.citems)

    def blocked(self, a, b) -> bool:
        stamp = np.full(len(self.walls), -1, dtype=np.int64)
        return bool(K.segment_blocked(float(a[0]), float(a[1]), float(b[0]), float(b[1]),
                                      *self.args, stamp, 0))

    def visible_from(self, origin, pts) -> np.ndarray:
        pts = np.ascontiguousarray(pts, dtype=float).reshape(-1, 2)
        return K.visible_from(float(origin[0]), float(origin[1]), pts, *self.args)

    def pairs_visible(self, a, b) -> np.ndarray:
        a = np.ascontiguousarray(a, dtype=float).reshape(-1, 2)
        b = np.ascontiguousarray(b, dtype=float).reshape(-1, 2)
        return K.pairs_visible(a, b, *self.args)

    def inside(self, pts, strict: bool = False) -> np.ndarray:
        pts = np.ascontiguousarray(pts, dtype=float).reshape(-1, 2)
        return K.points_inside(pts, self.walls, self.wlen, self.pstart, self.pend,
                               self.pbox, strict)

    def detour_field(self, origin) -> DetourField:
        """Dijkstra over the reduced visibility graph of corners, from ``origin``."""
        key = (float(origin[0]), float(origin[1]))
        if key in self._fields:
            return self._fields[key]
        C = len(self.corner_xy)
        ei, ej, el = K.corner_graph(key[0], key[1], self.corner_xy, self.corner_vertex,
                                    self.corner_nb, *self.args)
        graph = csr_matrix((np.maximum(el, 1e-12), (ei, ej)), shape=(C + 1, C + 1))
        dist, pred = dijkstra(graph, directed=False, indices=0, return_predecessors=True)
        fld = DetourField(Point2(*key), np.ascontiguousarray(dist[1:]), pred)
        self._fields[key] = fld
        return fld

    def detour_lengths(self, origin, pts) -> tuple[np.ndarray, np.ndarray]:
        """Shortest corner-routed length from ``origin`` to each point and the
        index of the last corner used (-1 if unreachable)."""
        fld = self.detour_field(origin)
        pts = np.ascontiguousarray(pts, dtype=float).reshape(-1, 2)
        if len(self.corner_xy) == 0:
            return np.full(len(pts), np.inf), np.full(len(pts), -1, dtype=np.int64)
        return K.detour_search(pts, self.corner_xy, self.corner_vertex, self.corner_nb,
                               fld.dist, *self.args)

    def corner_chain(self, origin, last: int) -> list[Point2]:
        """Corner points from ``origin`` to corner ``last`` (exclusive of origin)."""
        fld = self.detour_field(origin)
        chain = []
        node = last + 1
        while node > 0:
            chain.append(Point2(*map(float, self.corner_xy[node - 1])))
            node = int(fld.pred[node])
        if node != 0:
            raise RuntimeError("broken predecessor chain")
        return chain[::-1]


def _outward_bisector(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    # outward normals of the incoming/outgoing edges of a CCW ring
    n = np.array([d1[1], -d1[0]]) + np.array([d2[1], -d2[0]])
    norm = np.hypot(*n)
    if norm < 1e-6:
        n = d1 - d2
        norm = np.hypot(*n)
    return n / norm


def shortest_detour(scene, a, b):
    """Shortest sight-valid polyline from ``a`` to ``b`` bending at building corners.

    Returns ``(path, length)`` or ``None`` when ``b`` cannot be reached. If
    ``a`` sees ``b`` the direct segment is returned.
    """
    a, b = _as_point(a), _as_point(b)
    idx = scene.index
    if not idx.blocked(a, b):
        return [a, b], math.dist(a, b)
    best, via = idx.detour_lengths(a, np.array([b]))
    if not np.isfinite(best[0]):
        return None
    path = [a, *idx.corner_chain(a, int(via[0])), b]
    return path, float(best[0])


def visibility_mask(scene, source, resolution: int) -> np.ndarray:
    """Per-pixel LOS / NLOS / BUILDING codes for sight lines from ``source``."""
    if resolution < 1:
        raise ValidationError(f"resolution must be positive, got {resolution}")
    source = _as_point(source)
    idx = scene.index
    if idx.inside(np.array([source]))[0]:
        raise ValidationError(f"source {tuple(source)} lies inside a building")
    centers = pixel_centers(resolution, scene.extent).reshape(-1, 2)
    building = idx.inside(centers)
    visible = idx.visible_from(source, centers)
    mask = np.where(building, BUILDING, np.where(visible, LOS, NLOS)).astype(np.uint8)
    return mask.reshape(resolution, resolution)
