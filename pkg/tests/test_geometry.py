import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import LineString, Point, Polygon

from conftest import box
from urbanecho.errors import ValidationError
from urbanecho.geometry import (BUILDING, LOS, NLOS, Point2, Polygon2, SceneIndex, line_of_sight,
                                pixel_centers, point_in_polygon, point_strictly_in_polygon,
                                segments_intersect, shortest_detour, visibility_mask)
from urbanecho.scene import Scene
from urbanecho.synthetic import synthetic_scene


def random_polygon(rng, n=None, r=10.0):
    """Star-shaped simple polygon around the origin."""
    n = n or int(rng.integers(3, 12))
    ang = np.sort(rng.uniform(0, 2 * math.pi, n))
    rad = rng.uniform(0.3 * r, r, n)
    return Polygon2(tuple(zip(rad * np.cos(ang), rad * np.sin(ang))))


def winding_number(p, verts):
    """Independent oracle: sum of signed angles subtended by the edges."""
    total = 0.0
    for a, b in zip(verts, verts[1:] + verts[:1]):
        a1 = math.atan2(a[1] - p[1], a[0] - p[0])
        a2 = math.atan2(b[1] - p[1], b[0] - p[0])
        d = a2 - a1
        while d > math.pi:
            d -= 2 * math.pi
        while d < -math.pi:
            d += 2 * math.pi
        total += d
    return round(total / (2 * math.pi))


# --- polygons ---------------------------------------------------------------

def test_polygon_normalizes_orientation_and_closing_vertex():
    cw = Polygon2(((0, 0), (0, 1), (1, 1), (1, 0), (0, 0)))
    assert len(cw.vertices) == 4
    assert cw.area == pytest.approx(1.0)


def test_polygon_rejects_degenerate():
    with pytest.raises(ValidationError):
        Polygon2(((0, 0), (1, 1)))
    with pytest.raises(ValidationError):
        Polygon2(((0, 0), (1, 1), (2, 2)))


def test_is_simple_detects_bowtie():
    assert Polygon2(box(0, 0, 2, 2)).is_simple()
    assert not Polygon2(((0, 0), (2, 2), (2, 0), (0, 2), (-1, 1))).is_simple()


# --- point in polygon -------------------------------------------------------

def test_point_in_polygon_matches_winding_number_oracle():
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(10_000):
        poly = random_polygon(rng)
        p = tuple(rng.uniform(-11, 11, 2))
        if min(Polygon(poly.vertices).exterior.distance(Point(p)), 1.0) < 1e-7:
            continue  # boundary handled by its own test
        expected = winding_number(p, list(poly.vertices)) != 0
        mismatches += point_in_polygon(p, poly) != expected
    assert mismatches == 0


def test_boundary_points_count_as_inside():
    sq = Polygon2(box(0, 0, 4, 4))
    for p in [(0, 0), (2, 0), (4, 4), (4, 1.5), (0, 3)]:
        assert point_in_polygon(p, sq)
        assert not point_strictly_in_polygon(p, sq)
    assert point_strictly_in_polygon((2, 2), sq)
    assert not point_in_polygon((4 + 1e-6, 2), sq)


def test_kernel_inside_matches_scalar(city):
    rng = np.random.default_rng(5)
    pts = rng.uniform(-250, 250, (3000, 2))
    # add boundary points: vertices and edge midpoints
    verts = np.vstack([p.array for p in city.buildings])
    mids = np.vstack([(p.array + np.roll(p.array, -1, 0)) / 2 for p in city.buildings])
    pts = np.vstack([pts, verts, mids])
    fast = city.index.inside(pts)
    fast_strict = city.index.inside(pts, strict=True)
    for p, f, fs in zip(pts, fast, fast_strict):
        assert f == any(point_in_polygon(p, b) for b in city.buildings)
        assert fs == any(point_strictly_in_polygon(p, b) for b in city.buildings)


# --- segment intersection ---------------------------------------------------

def test_segments_intersect_against_shapely():
    rng = np.random.default_rng(1)
    for _ in range(5000):
        a, b, c, d = (tuple(v) for v in rng.integers(-4, 5, (4, 2)).astype(float))
        if a == b or c == d:
            continue
        expected = LineString([a, b]).intersects(LineString([c, d]))
        assert segments_intersect((a, b), (c, d)) == expected, (a, b, c, d)


@given(st.lists(st.floats(-100, 100), min_size=8, max_size=8))
def test_segments_intersect_symmetric(v):
    s1, s2 = ((v[0], v[1]), (v[2], v[3])), ((v[4], v[5]), (v[6], v[7]))
    assert segments_intersect(s1, s2) == segments_intersect(s2, s1)
    assert segments_intersect(s1, s2) == segments_intersect(s1[::-1], s2)


# --- line of sight ----------------------------------------------------------

def test_line_of_sight_conventions():
    scene = Scene(buildings=(box(-5, 10, 5, 20),))
    assert not line_of_sight(scene, (0, 0), (0, 30))      # through the block
    assert line_of_sight(scene, (0, 0), (0, 9.9))
    assert line_of_sight(scene, (0, 0), (0, 10))          # ends on the wall
    assert not line_of_sight(scene, (-10, 0), (10, 40))   # crosses a corner region
    assert not line_of_sight(scene, (-10, 5), (0, 25))    # grazes vertex (-5, 10)
    assert not line_of_sight(scene, (5, 0), (5, 30))      # runs along an edge
    assert line_of_sight(scene, (5.001, 0), (5.001, 30))
    assert line_of_sight(scene, (0, 0), (0, 0))


def test_line_of_sight_symmetric_and_matches_shapely_interior():
    rng = np.random.default_rng(2)
    scene = synthetic_scene(3, n_buildings=20)
    shapes = [Polygon(b.vertices) for b in scene.buildings]
    for _ in range(400):
        a, b = rng.uniform(-250, 250, (2, 2))
        if any(s.intersects(Point(a)) or s.intersects(Point(b)) for s in shapes):
            continue
        los = line_of_sight(scene, a, b)
        assert los == line_of_sight(scene, b, a)
        line = LineString([a, b])
        assert los == (not any(line.intersects(s) for s in shapes))


def test_kernel_visibility_matches_scalar_oracle(city):
    rng = np.random.default_rng(3)
    pts = rng.uniform(-250, 250, (2000, 2))
    pts = pts[~city.index.inside(pts)]
    # include points aimed exactly at building vertices
    verts = np.vstack([b.array for b in city.buildings])
    pts = np.vstack([pts, verts * 1.5, verts[:, ::-1]])
    pts = pts[(np.abs(pts) <= 250).all(axis=1) & ~city.index.inside(pts)]
    src = (0.0, 0.0)
    fast = city.index.visible_from(src, pts)
    slow = np.array([line_of_sight(city, src, p) for p in pts])
    assert np.array_equal(fast, slow)
    pair = city.index.pairs_visible(pts[:-1], pts[1:])
    assert np.array_equal(pair, [line_of_sight(city, a, b) for a, b in zip(pts[:-1], pts[1:])])


def test_grid_cell_size_does_not_change_answers(city):
    rng = np.random.default_rng(4)
    a = rng.uniform(-250, 250, (500, 2))
    b = rng.uniform(-250, 250, (500, 2))
    ref = SceneIndex(city.buildings, cell_size=8.0).pairs_visible(a, b)
    for cs in (1.0, 3.0, 50.0, 600.0):
        assert np.array_equal(SceneIndex(city.buildings, cell_size=cs).pairs_visible(a, b), ref)


# --- shortest detours -------------------------------------------------------

def brute_force_detour(scene, a, b, max_corners=3):
    """Enumerate corner sequences (offset corners) and keep the shortest sight-valid one."""
    corners = [tuple(c) for c in scene.index.corner_xy]
    best = math.inf
    for k in range(0, max_corners + 1):
        for seq in itertools.permutations(corners, k):
            chain = [a, *seq, b]
            length = sum(math.dist(p, q) for p, q in zip(chain, chain[1:]))
            if length >= best:
                continue
            if all(line_of_sight(scene, p, q) for p, q in zip(chain, chain[1:])):
                best = length
    return best


@pytest.mark.parametrize("scene_def,targets", [
    ((box(-25, 40, 25, 60),), [(0, 100), (10, 61), (-30, 70), (0, 60.5)]),
    ((box(-25, 40, 25, 60), box(-10, 80, 40, 90)), [(0, 100), (20, 95), (0, 70)]),
    ((((-20, 30), (20, 30), (20, 60), (5, 60), (5, 40), (-20, 40)),), [(0, 50), (-10, 55), (0, 80)]),
])
def test_shortest_detour_matches_enumeration(scene_def, targets):
    scene = Scene(buildings=scene_def)
    for t in targets:
        res = shortest_detour(scene, (0.0, 0.0), t)
        expected = brute_force_detour(scene, (0.0, 0.0), t)
        assert res is not None
        path, length = res
        assert length == pytest.approx(expected, abs=1e-9)
        assert sum(math.dist(p, q) for p, q in zip(path, path[1:])) == pytest.approx(length, abs=1e-9)
        for p, q in zip(path, path[1:]):
            assert line_of_sight(scene, p, q)


def test_shortest_detour_visible_is_direct():
    scene = Scene(buildings=(box(-25, 40, 25, 60),))
    path, length = shortest_detour(scene, (0, 0), (100, 0))
    assert path == [Point2(0, 0), Point2(100, 0)] and length == 100


def test_shortest_detour_unreachable_inside_courtyard():
    ring = box(-60, -60, 60, 60)
    # closed courtyard: a thick square ring made of four blocks
    blocks = (box(-60, -60, 60, -50), box(-60, 50, 60, 60), box(-60, -50, -50, 50), box(50, -50, 60, 50))
    scene = Scene(buildings=blocks)
    assert ring
    assert shortest_detour(scene, (0, 0), (100, 100)) is None


def test_detour_symmetry_property(city):
    rng = np.random.default_rng(9)
    pts = rng.uniform(-200, 200, (60, 2))
    pts = pts[~city.index.inside(pts)]
    for a, b in zip(pts[::2], pts[1::2]):
        ab = shortest_detour(city, a, b)
        ba = shortest_detour(city, b, a)
        assert (ab is None) == (ba is None)
        if ab is not None:
            assert ab[1] == pytest.approx(ba[1], abs=1e-6)
            assert ab[1] >= math.dist(a, b) - 1e-9


# --- rasters ----------------------------------------------------------------

def test_pixel_centers_layout():
    c = pixel_centers(4, 500.0)
    assert c.shape == (4, 4, 2)
    assert tuple(c[0, 0]) == (-187.5, 187.5)   # north-west
    assert tuple(c[3, 3]) == (187.5, -187.5)


def test_visibility_mask_codes(north_block):
    m = visibility_mask(north_block, (0, 0), 64)
    assert set(np.unique(m)) == {NLOS, LOS, BUILDING}
    centers = pixel_centers(64).reshape(-1, 2)
    for (x, y), code in zip(centers[::7], m.ravel()[::7]):
        if code == BUILDING:
            assert any(point_in_polygon((x, y), b) for b in north_block.buildings)
        else:
            assert (code == LOS) == line_of_sight(north_block, (0, 0), (x, y))


def test_visibility_mask_empty_scene_all_los(empty_scene):
    assert (visibility_mask(empty_scene, (0, 0), 16) == LOS).all()


def test_visibility_mask_rejects_source_in_building(north_block):
    with pytest.raises(ValidationError):
        visibility_mask(north_block, (0, 50), 32)


@settings(max_examples=30, deadline=None)
@given(st.floats(-240, 240), st.floats(-240, 240))
def test_los_pixels_really_see_the_source(x, y):
    scene = Scene(buildings=(box(-25, 40, 25, 60), box(60, -80, 90, -20)))
    if scene.index.inside([(x, y)])[0]:
        return
    m = visibility_mask(scene, (x, y), 16)
    centers = pixel_centers(16).reshape(-1, 2)
    for p, code in zip(centers, m.ravel()):
        if code != BUILDING:
            assert (code == LOS) == line_of_sight(scene, (x, y), p)
