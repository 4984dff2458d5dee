"""Compiled inner loops: segment/wall queries over a uniform grid, point
containment, detour search and image-receiver enumeration.

All kernels are ``nogil`` so callers can fan receiver chunks out over threads.
Walls are stored as rows ``[x0, y0, x1, y1]`` of counter-clockwise building
rings, so the building interior is always on the left of a wall.
"""

import math

import numpy as np
from numba import njit

EPS = 1e-9
# grid padding when collecting candidate cells, meters
PAD = 1e-6
# below this distance the tangency prefilter is skipped (direction ill-defined)
TANGENT_MIN_DIST = 0.05


@njit(cache=True, nogil=True, inline="always")
def _cell(v, origin, size, n):
    i = int(math.floor((v - origin) / size))
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


@njit(cache=True, nogil=True, inline="always")
def _on_segment(x, y, px, py, qx, qy, lw):
    ex = qx - px
    ey = qy - py
    t = ((x - px) * ex + (y - py) * ey) / (lw * lw)
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    cx = px + t * ex - x
    cy = py + t * ey - y
    return math.sqrt(cx * cx + cy * cy) <= EPS


@njit(cache=True, nogil=True)
def point_in_polygons(x, y, walls, wlen, pstart, pend, pbox, strict):
    """Index of the first polygon containing (x, y), or -1.

    With ``strict`` a point on a polygon's boundary does not count for that
    polygon; otherwise the boundary is inside.
    """
    for p in range(pbox.shape[0]):
        if x < pbox[p, 0] - EPS or x > pbox[p, 2] + EPS:
            continue
        if y < pbox[p, 1] - EPS or y > pbox[p, 3] + EPS:
            continue
        inside = False
        boundary = False
        for e in range(pstart[p], pend[p]):
            px = walls[e, 0]
            py = walls[e, 1]
            qx = walls[e, 2]
            qy = walls[e, 3]
            if _on_segment(x, y, px, py, qx, qy, wlen[e]):
                boundary = True
                break
            if (py > y) != (qy > y):
                xint = px + (y - py) * (qx - px) / (qy - py)
                if x < xint:
                    inside = not inside
        if boundary:
            if not strict:
                return p
            continue
        if inside:
            return p
    return -1


@njit(cache=True, nogil=True, inline="always")
def _wall_test(ax, ay, dx, dy, L, px, py, qx, qy, lw):
    # 0: no contact, 1: blocks the open segment, 2: touches only at an endpoint
    d1 = (dx * (py - ay) - dy * (px - ax)) / L
    d2 = (dx * (qy - ay) - dy * (qx - ax)) / L
    if (d1 > EPS and d2 > EPS) or (d1 < -EPS and d2 < -EPS):
        return 0
    ex = qx - px
    ey = qy - py
    bx = ax + dx
    by = ay + dy
    d3 = (ex * (ay - py) - ey * (ax - px)) / lw
    d4 = (ex * (by - py) - ey * (bx - px)) / lw
    if (d3 > EPS and d4 > EPS) or (d3 < -EPS and d4 < -EPS):
        return 0
    if ((d1 > EPS and d2 < -EPS) or (d1 < -EPS and d2 > EPS)) and (
        (d3 > EPS and d4 < -EPS) or (d3 < -EPS and d4 > EPS)
    ):
        return 1
    if abs(d1) <= EPS:
        t = ((px - ax) * dx + (py - ay) * dy) / L
        if EPS < t < L - EPS:
            return 1
    if abs(d2) <= EPS:
        t = ((qx - ax) * dx + (qy - ay) * dy) / L
        if EPS < t < L - EPS:
            return 1
    if abs(d3) <= EPS:
        u = ((ax - px) * ex + (ay - py) * ey) / lw
        if -EPS <= u <= lw + EPS:
            return 2
    if abs(d4) <= EPS:
        u = ((bx - px) * ex + (by - py) * ey) / lw
        if -EPS <= u <= lw + EPS:
            return 2
    return 0


@njit(cache=True, nogil=True)
def segment_blocked(ax, ay, bx, by, walls, wlen, pstart, pend, pbox,
                    gmeta, gdims, cstart, citems, stamp, sid):
    """True if the open segment (a, b) touches any building.

    Crossing a wall, passing through a wall vertex and running along a wall
    all block. Contact at the endpoints alone does not; in that case the
    midpoint decides whether the segment runs through a building interior.
    """
    dx = bx - ax
    dy = by - ay
    L = math.sqrt(dx * dx + dy * dy)
    if L <= EPS:
        return False
    x0 = gmeta[0]
    y0 = gmeta[1]
    cs = gmeta[2]
    nx = gdims[0]
    ny = gdims[1]
    minx = min(ax, bx)
    maxx = max(ax, bx)
    ix0 = _cell(minx - PAD, x0, cs, nx)
    ix1 = _cell(maxx + PAD, x0, cs, nx)
    touched = False
    for ix in range(ix0, ix1 + 1):
        xl = x0 + ix * cs
        lo = max(xl, minx)
        hi = min(xl + cs, maxx)
        if abs(dx) <= 1e-12 or hi < lo:
            ylo = min(ay, by)
            yhi = max(ay, by)
        else:
            ya = ay + (lo - ax) / dx * dy
            yb = ay + (hi - ax) / dx * dy
            ylo = min(ya, yb)
            yhi = max(ya, yb)
        iy0 = _cell(ylo - PAD, y0, cs, ny)
        iy1 = _cell(yhi + PAD, y0, cs, ny)
        for iy in range(iy0, iy1 + 1):
            c = iy * nx + ix
            for k in range(cstart[c], cstart[c + 1]):
                w = citems[k]
                if stamp[w] == sid:
                    continue
                stamp[w] = sid
                r = _wall_test(ax, ay, dx, dy, L, walls[w, 0], walls[w, 1],
                               walls[w, 2], walls[w, 3], wlen[w])
                if r == 1:
                    return True
                if r == 2:
                    touched = True
    if touched:
        mx = 0.5 * (ax + bx)
        my = 0.5 * (ay + by)
        return point_in_polygons(mx, my, walls, wlen, pstart, pend, pbox, False) >= 0
    return False


@njit(cache=True, nogil=True)
def visible_from(sx, sy, pts, walls, wlen, pstart, pend, pbox,
                 gmeta, gdims, cstart, citems):
    n = pts.shape[0]
    out = np.empty(n, dtype=np.bool_)
    stamp = np.full(walls.shape[0], -1, dtype=np.int64)
    for i in range(n):
        out[i] = not segment_blocked(sx, sy, pts[i, 0], pts[i, 1], walls, wlen,
                                     pstart, pend, pbox, gmeta, gdims, cstart,
                                     citems, stamp, i)
    return out


@njit(cache=True, nogil=True)
def pairs_visible(a, b, walls, wlen, pstart, pend, pbox, gmeta, gdims, cstart, citems):
    """Row-wise visibility between point arrays ``a`` and ``b``."""
    n = a.shape[0]
    out = np.empty(n, dtype=np.bool_)
    stamp = np.full(walls.shape[0], -1, dtype=np.int64)
    for i in range(n):
        out[i] = not segment_blocked(a[i, 0], a[i, 1], b[i, 0], b[i, 1], walls, wlen,
                                     pstart, pend, pbox, gmeta, gdims, cstart,
                                     citems, stamp, i)
    return out


@njit(cache=True, nogil=True)
def points_inside(pts, walls, wlen, pstart, pend, pbox, strict):
    n = pts.shape[0]
    out = np.empty(n, dtype=np.bool_)
    for i in range(n):
        out[i] = point_in_polygons(pts[i, 0], pts[i, 1], walls, wlen, pstart,
                                   pend, pbox, strict) >= 0
    return out


@njit(cache=True, nogil=True, inline="always")
def _tangent(x, y, vx, vy, ux, uy, wx, wy):
    # line x->v leaves both polygon neighbours of v on one side
    dx = vx - x
    dy = vy - y
    L = math.sqrt(dx * dx + dy * dy)
    if L < TANGENT_MIN_DIST:
        return True
    s1 = (dx * (uy - y) - dy * (ux - x)) / L
    s2 = (dx * (wy - y) - dy * (wx - x)) / L
    return not ((s1 > EPS and s2 < -EPS) or (s1 < -EPS and s2 > EPS))


@njit(cache=True, nogil=True)
def corner_graph(sx, sy, cxy, cv, cnb, walls, wlen, pstart, pend, pbox,
                 gmeta, gdims, cstart, citems):
    """Edges of the reduced visibility graph over node 0 (= s) and corners 1..C.

    Returns (i, j, length) arrays, i < j.
    """
    C = cxy.shape[0]
    cap = 1024
    ei = np.empty(cap, dtype=np.int64)
    ej = np.empty(cap, dtype=np.int64)
    el = np.empty(cap, dtype=np.float64)
    m = 0
    stamp = np.full(walls.shape[0], -1, dtype=np.int64)
    sid = 0
    for j in range(C):
        ok = _tangent(sx, sy, cv[j, 0], cv[j, 1], cnb[j, 0], cnb[j, 1], cnb[j, 2], cnb[j, 3])
        if ok:
            sid += 1
            ok = not segment_blocked(sx, sy, cxy[j, 0], cxy[j, 1], walls, wlen, pstart, pend,
                                     pbox, gmeta, gdims, cstart, citems, stamp, sid)
        if ok:
            if m == cap:
                cap *= 2
                ei = _grow_i(ei, cap)
                ej = _grow_i(ej, cap)
                el = _grow_f(el, cap)
            ei[m] = 0
            ej[m] = j + 1
            el[m] = math.hypot(cxy[j, 0] - sx, cxy[j, 1] - sy)
            m += 1
    for i in range(C):
        for j in range(i + 1, C):
            if not _tangent(cxy[i, 0], cxy[i, 1], cv[j, 0], cv[j, 1],
                            cnb[j, 0], cnb[j, 1], cnb[j, 2], cnb[j, 3]):
                continue
            if not _tangent(cxy[j, 0], cxy[j, 1], cv[i, 0], cv[i, 1],
                            cnb[i, 0], cnb[i, 1], cnb[i, 2], cnb[i, 3]):
                continue
            sid += 1
            if segment_blocked(cxy[i, 0], cxy[i, 1], cxy[j, 0], cxy[j, 1], walls, wlen,
                               pstart, pend, pbox, gmeta, gdims, cstart, citems, stamp, sid):
                continue
            if m == cap:
                cap *= 2
                ei = _grow_i(ei, cap)
                ej = _grow_i(ej, cap)
                el = _grow_f(el, cap)
            ei[m] = i + 1
            ej[m] = j + 1
            el[m] = math.hypot(cxy[j, 0] - cxy[i, 0], cxy[j, 1] - cxy[i, 1])
            m += 1
    return ei[:m].copy(), ej[:m].copy(), el[:m].copy()


@njit(cache=True, nogil=True)
def _grow_i(a, cap):
    out = np.empty(cap, dtype=np.int64)
    out[: a.shape[0]] = a
    return out


@njit(cache=True, nogil=True)
def _grow_f(a, cap):
    out = np.empty(cap, dtype=np.float64)
    out[: a.shape[0]] = a
    return out


@njit(cache=True, nogil=True)
def detour_search(pts, cxy, cv, cnb, g, walls, wlen, pstart, pend, pbox,
                  gmeta, gdims, cstart, citems):
    """Shortest source->corner->point length for each point, via the last corner.

    ``g`` holds the source-to-corner shortest distances (inf if unreachable).
    Candidates are scanned in order of total length; the first visible,
    tangent one is optimal. Returns (length, corner index) with (inf, -1)
    when no corner reaches the point.
    """
    n = pts.shape[0]
    C = cxy.shape[0]
    best = np.full(n, np.inf)
    via = np.full(n, -1, dtype=np.int64)
    keys = np.empty(C)
    stamp = np.full(walls.shape[0], -1, dtype=np.int64)
    sid = 0
    for i in range(n):
        x = pts[i, 0]
        y = pts[i, 1]
        for j in range(C):
            keys[j] = g[j] + math.hypot(cxy[j, 0] - x, cxy[j, 1] - y)
        order = np.argsort(keys, kind="mergesort")
        for j in order:
            if not np.isfinite(keys[j]):
                break
            if not _tangent(x, y, cv[j, 0], cv[j, 1], cnb[j, 0], cnb[j, 1], cnb[j, 2], cnb[j, 3]):
                continue
            sid += 1
            if not segment_blocked(x, y, cxy[j, 0], cxy[j, 1], walls, wlen, pstart, pend,
                                   pbox, gmeta, gdims, cstart, citems, stamp, sid):
                best[i] = keys[j]
                via[i] = j
                break
    return best, via


@njit(cache=True, nogil=True)
def reflection_energy(sx, sy, pts, seqs, seq_len, walls, wlen, pstart, pend, pbox,
                      gmeta, gdims, cstart, citems, adjusted_db, atm_db_per_m,
                      min_dist):
    """Energetic sum and count of valid image-receiver paths per point.

    ``seqs`` rows list wall indices receiver-side first; ``adjusted_db[k]`` is
    the source level for order-k paths after the reflection adjustment.
    """
    n = pts.shape[0]
    S = seqs.shape[0]
    K = seqs.shape[1]
    energy = np.zeros(n)
    count = np.zeros(n, dtype=np.int64)
    img = np.empty((K + 1, 2))
    hit = np.empty((K + 1, 2))
    stamp = np.full(walls.shape[0], -1, dtype=np.int64)
    sid = 0
    for i in range(n):
        rx = pts[i, 0]
        ry = pts[i, 1]
        for s in range(S):
            k = seq_len[s]
            img[0, 0] = rx
            img[0, 1] = ry
            ok = True
            for m in range(1, k + 1):
                w = seqs[s, m - 1]
                px = walls[w, 0]
                py = walls[w, 1]
                ex = walls[w, 2] - px
                ey = walls[w, 3] - py
                lw = wlen[w]
                xx = img[m - 1, 0]
                yy = img[m - 1, 1]
                side = (ex * (yy - py) - ey * (xx - px)) / lw
                if side >= -EPS:
                    ok = False
                    break
                t = ((xx - px) * ex + (yy - py) * ey) / (lw * lw)
                fx = px + t * ex
                fy = py + t * ey
                img[m, 0] = 2.0 * fx - xx
                img[m, 1] = 2.0 * fy - yy
            if not ok:
                continue
            # back-trace reflection points from the source
            cx = sx
            cy = sy
            for m in range(k, 0, -1):
                w = seqs[s, m - 1]
                px = walls[w, 0]
                py = walls[w, 1]
                ex = walls[w, 2] - px
                ey = walls[w, 3] - py
                lw = wlen[w]
                ds = (ex * (cy - py) - ey * (cx - px)) / lw
                di = (ex * (img[m, 1] - py) - ey * (img[m, 0] - px)) / lw
                if ds >= -EPS or di <= EPS:
                    ok = False
                    break
                t = ds / (ds - di)
                hx = cx + t * (img[m, 0] - cx)
                hy = cy + t * (img[m, 1] - cy)
                u = ((hx - px) * ex + (hy - py) * ey) / lw
                if u < -EPS or u > lw + EPS:
                    ok = False
                    break
                hit[m, 0] = hx
                hit[m, 1] = hy
                cx = hx
                cy = hy
            if not ok:
                continue
            hit[0, 0] = rx
            hit[0, 1] = ry
            ax = sx
            ay = sy
            for m in range(k, -1, -1):
                sid += 1
                if segment_blocked(ax, ay, hit[m, 0], hit[m, 1], walls, wlen, pstart, pend,
                                   pbox, gmeta, gdims, cstart, citems, stamp, sid):
                    ok = False
                    break
                ax = hit[m, 0]
                ay = hit[m, 1]
            if not ok:
                continue
            length = math.hypot(img[k, 0] - sx, img[k, 1] - sy)
            d = max(length, min_dist)
            level = adjusted_db[k] - (20.0 * math.log10(d) + 11.0) - atm_db_per_m * length
            energy[i] += 10.0 ** (level / 10.0)
            count[i] += 1
    return energy, count
