import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import box
from urbanecho.errors import UndefinedMetricError, ValidationError
from urbanecho.geometry import BUILDING, LOS, NLOS, visibility_mask
from urbanecho.metrics import aggregate, evaluate, format_table, mae, report_from_masks, wmape
from urbanecho.raster import SoundMap
from urbanecho.scene import Scene

gray = arrays(np.uint8, (6, 7))


def test_mae_examples():
    t = np.full((4, 4), 100, np.uint8)
    assert mae(t, t) == 0
    assert mae(t + 3, t) == 3.0
    checker = (np.indices((4, 4)).sum(axis=0) % 2) * 10
    assert mae(t + checker.astype(np.uint8), t) == 5.0


def test_wmape_examples():
    t = np.zeros((3, 3), np.uint8)
    assert wmape(t, t) == 0
    assert wmape(np.full((3, 3), 255, np.uint8), t) == 100.0
    assert wmape(np.full((3, 3), 50, np.uint8), np.full((3, 3), 100, np.uint8)) == 50.0


def test_metric_errors():
    a = np.zeros((3, 3))
    with pytest.raises(ValidationError):
        mae(a, np.zeros((3, 4)))
    with pytest.raises(UndefinedMetricError):
        mae(a, a, np.zeros((3, 3), bool))
    with pytest.raises(UndefinedMetricError):
        wmape(a, a, np.zeros((3, 3), bool))
    with pytest.raises(ValidationError):
        wmape(a, a, np.ones((2, 2), bool))


@given(gray, gray)
def test_mae_symmetric(p, t):
    assert mae(p, t) == mae(t, p)


def test_wmape_not_symmetric():
    p, t = np.array([[200]]), np.array([[100]])
    assert wmape(p, t) == 100.0 and wmape(t, p) == 50.0


@given(gray, gray)
def test_wmape_bounded(p, t):
    assert 0.0 <= wmape(p, t) <= 100.0


@settings(max_examples=200)
@given(gray, gray, arrays(bool, (6, 7)), st.integers(0, 41))
def test_adding_perfect_pixel_never_increases(p, t, mask, k):
    if not mask.any():
        return
    i, j = divmod(k, 7)
    if mask[i, j]:
        return
    p = p.copy()
    p[i, j] = t[i, j]
    bigger = mask.copy()
    bigger[i, j] = True
    assert mae(p, t, bigger) <= mae(p, t, mask) + 1e-12
    assert wmape(p, t, bigger) <= wmape(p, t, mask) + 1e-12


def test_decomposition_identity_on_random_rasters():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        t = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        los = rng.random((32, 32)) < rng.uniform(0.1, 0.9)
        rep = report_from_masks(p, t, los, ~los)
        weighted = (rep.n_los * rep.los_mae + rep.n_nlos * rep.nlos_mae) / rep.n_pixels
        assert rep.mae == pytest.approx(weighted, rel=1e-12, abs=0)
        # the identity holds exactly over the integer error sums
        d = np.abs(p.astype(int) - t.astype(int))
        assert Fraction(int(d.sum()), rep.n_pixels) == (
            Fraction(int(d[los].sum()), rep.n_los) * rep.n_los + Fraction(int(d[~los].sum()), rep.n_nlos) * rep.n_nlos
        ) / rep.n_pixels
        assert 0 <= rep.wmape <= 100


def test_hand_evaluated_8x8_fixture():
    scene = Scene(buildings=(box(-70, 60, 70, 130),))
    L, N, B = LOS, NLOS, BUILDING
    expected = np.array([
        [N, N, N, N, N, N, N, N],
        [L, N, N, N, N, N, N, L],
        [L, L, N, B, B, N, L, L],
        *[[L] * 8] * 5,
    ], dtype=np.uint8)
    assert np.array_equal(visibility_mask(scene, (0, 0), 8), expected)

    truth = np.where(expected == NLOS, 200, 100).astype(np.uint8)
    truth[expected == BUILDING] = 0
    pred = np.where(expected == NLOS, 50, 104).astype(np.uint8)
    rep = evaluate(SoundMap.from_gray(pred), SoundMap.from_gray(truth, expected == BUILDING), scene)
    assert (rep.n_pixels, rep.n_los, rep.n_nlos) == (62, 46, 16)
    assert rep.los_mae == 4.0 and rep.nlos_mae == 150.0
    # 4 % is not a binary fraction, so wMAPE is compared to the last few ulps
    assert rep.los_wmape == pytest.approx(4.0, abs=1e-12) and rep.nlos_wmape == 75.0
    assert rep.mae == 2584 / 62
    assert rep.wmape == pytest.approx(100 * (46 * 0.04 + 16 * 0.75) / 62, abs=1e-12)


def test_evaluate_identical_maps_all_zero(north_block):
    g = np.random.default_rng(0).integers(0, 256, (64, 64), dtype=np.uint8)
    rep = evaluate(g, g, north_block)
    for v in (rep.mae, rep.wmape, rep.los_mae, rep.nlos_mae, rep.los_wmape, rep.nlos_wmape):
        assert v == 0
    assert rep.n_los + rep.n_nlos == rep.n_pixels < 64 * 64


def test_evaluate_empty_scene_has_no_nlos(empty_scene):
    g = np.full((16, 16), 80, np.uint8)
    rep = evaluate(g + 1, g, empty_scene)
    assert rep.n_nlos == 0 and rep.nlos_mae is None and rep.nlos_wmape is None
    assert rep.mae == 1.0 and rep.n_pixels == 256
    assert json.loads(rep.to_json())["nlos_mae"] is None


def test_evaluate_resolution_mismatch(empty_scene):
    with pytest.raises(ValidationError):
        evaluate(np.zeros((8, 8)), np.zeros((16, 16)), empty_scene)


def test_aggregate_and_table(north_block, empty_scene):
    g = np.full((16, 16), 80, np.uint8)
    reps = [evaluate(g + 2, g, north_block), evaluate(g + 4, g, empty_scene)]
    agg = aggregate(reps)
    assert agg["n_samples"] == 2 and agg["mae"] == 3.0
    assert agg["nlos_mae"] == 2.0  # the empty scene contributes no NLoS entry
    text = format_table({"baseline": agg}, runtime={"baseline": (20.4717, 1.4885)})
    lines = text.splitlines()
    assert "LoS MAE" in lines[0] and "NLoS wMAPE" in lines[0] and "Runtime" in lines[0]
    assert "20.4717 ± 1.4885" in lines[2]
    assert len({len(ln) for ln in lines}) == 1  # aligned columns
