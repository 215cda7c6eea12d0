import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughmckv.core import (
    ControlFn,
    Path,
    RoughPath,
    TimeGrid,
    TwoParamIncrement,
    chen_defect,
    fit_exponent,
    geometricity_defect,
    greedy_partition,
    holder_seminorm,
    lift_smooth_path,
    p_variation,
)


def _path(values, T=1.0):
    values = np.asarray(values, dtype=float)
    return Path(TimeGrid(np.linspace(0, T, values.shape[0])), values)


path_values = st.lists(st.floats(-3, 3), min_size=3, max_size=12)


# -- grids -------------------------------------------------------------------


def test_grid_rejects_degenerate():
    with pytest.raises(ValueError, match="degenerate grid"):
        TimeGrid(np.array([0.0]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 0.5, 0.5]))


def test_refine_keeps_coarse_points():
    g = TimeGrid.uniform(2.0, 3)
    f = g.refine(2)
    assert f.n == 32 and f.dyadic_level == 5
    assert np.array_equal(f.points[::4], g.points)


# -- Holder seminorm ---------------------------------------------------------


def test_holder_constant_path_is_zero():
    assert holder_seminorm(_path(np.full(9, 2.5)), 0.3) == 0.0


def test_holder_identity_path():
    g = TimeGrid.uniform(1.0, 6)
    assert holder_seminorm(Path(g, g.points), 0.5) == pytest.approx(1.0)


def test_holder_sqrt_matches_brute_force():
    pts = np.linspace(0, 1, 1024)
    f = np.sqrt(pts)
    i, j = np.triu_indices(pts.size, 1)
    oracle = np.max(np.abs(f[j] - f[i]) / (pts[j] - pts[i]) ** 0.5)
    got = holder_seminorm(Path(TimeGrid(pts), f), 0.5)
    assert got == pytest.approx(oracle, rel=1e-12)
    assert got == pytest.approx(1.0, abs=1e-12)


def test_holder_window_restricts_pairs():
    g = TimeGrid.uniform(1.0, 4)
    p = Path(g, g.points**2)
    full = holder_seminorm(p, 1.0)
    local = holder_seminorm(p, 1.0, h=1 / 16)
    assert local <= full
    assert local == pytest.approx(2 - 1 / 16)


@settings(max_examples=40, deadline=None)
@given(path_values, st.floats(0.3, 0.9), st.floats(0.0, 0.5))
def test_local_to_global_holder_bound(vals, alpha, frac):
    p = _path(vals)
    h = max(frac, p.grid.steps[0])
    glob = holder_seminorm(p, alpha)
    loc = holder_seminorm(p, alpha, h=h)
    assert glob <= loc * max(1.0, 2 * h ** (alpha - 1)) * (1 + 1e-9) + 1e-12


# -- p-variation -------------------------------------------------------------


def test_total_variation_of_monotone_path():
    assert p_variation(_path([0.0, 0.3, 0.7, 1.0]), 1.0) == pytest.approx(1.0)


def test_zigzag_two_variation_enumerated():
    vals = np.array([0.0, 1.0, 0.0])
    best = 0.0
    # every partition of three points keeps both endpoints
    for keep_mid in (False, True):
        pts = [0, 1, 2] if keep_mid else [0, 2]
        best = max(best, sum(abs(vals[b] - vals[a]) ** 2 for a, b in zip(pts, pts[1:])))
    assert p_variation(_path(vals), 2.0) == pytest.approx(math.sqrt(best))
    assert p_variation(_path(vals), 2.0) == pytest.approx(math.sqrt(2))


def test_p_variation_rejects_small_p():
    with pytest.raises(ValueError):
        p_variation(_path([0.0, 1.0]), 0.5)


def _brute_pvar(vals, p):
    n = len(vals)
    best = 0.0
    for r in range(n - 1):
        for inner in itertools.combinations(range(1, n - 1), r):
            pts = (0, *inner, n - 1)
            best = max(best, sum(abs(vals[b] - vals[a]) ** p for a, b in zip(pts, pts[1:])))
    return best ** (1 / p)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=8), st.floats(1.0, 4.0))
def test_p_variation_dp_matches_enumeration(vals, p):
    assert p_variation(_path(vals), p) == pytest.approx(_brute_pvar(vals, p), rel=1e-9, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.1, 0.1), min_size=3, max_size=10))
def test_p_variation_monotone_in_p_and_interval(incs):
    vals = np.concatenate([[0.0], np.cumsum(incs)])
    p = _path(vals)
    v = [p_variation(p, q) for q in (1.0, 1.5, 2.0, 3.0)]
    assert all(a >= b - 1e-12 for a, b in zip(v, v[1:]))
    n = len(vals) - 1
    assert p_variation(p, 2.0, 1, n - 1) <= p_variation(p, 2.0) + 1e-12


def test_pvar_holder_relation():
    rng = np.random.default_rng(3)
    g = TimeGrid.uniform(1.0, 7)
    p = Path(g, np.concatenate([[0.0], np.cumsum(rng.normal(0, g.steps[0] ** 0.5, g.n))]))
    alpha = 0.4
    h = holder_seminorm(p, alpha)
    w = ControlFn.from_p_variation(p, 1 / alpha)
    for s, t in rng.choice(g.points, (40, 2)):
        s, t = min(s, t), max(s, t)
        assert w(s, t) <= h ** (1 / alpha) * (t - s) * (1 + 1e-9) + 1e-15


def test_p_variation_control_is_superadditive():
    rng = np.random.default_rng(0)
    g = TimeGrid.uniform(1.0, 6)
    p = Path(g, rng.normal(size=(g.n + 1, 2)).cumsum(axis=0))
    w = ControlFn.from_p_variation(p, 2.5)
    trip = np.sort(rng.choice(g.n + 1, (1000, 3)), axis=1)
    for a, b, c in g.points[trip]:
        assert w(a, b) + w(b, c) <= w(a, c) + 1e-9
        assert w(a, a) == 0.0


# -- greedy partition --------------------------------------------------------


def test_greedy_linear_control_short_interval():
    gp = greedy_partition(ControlFn(lambda s, t: t - s), 1.0, 0.0, 2.5)
    assert np.allclose(gp.times, (0, 1, 2, 2.5), atol=1e-9)
    assert gp.n_beta == 2


def test_greedy_linear_control_ten():
    gp = greedy_partition(ControlFn(lambda s, t: t - s), 1.0, 0.0, 10.0)
    assert gp.n_beta == 9
    assert gp.times[9] == pytest.approx(9.0, abs=1e-8)


def test_greedy_zero_control():
    gp = greedy_partition(ControlFn(lambda s, t: 0.0), 0.1, 0.0, 1.0)
    assert gp.times == (0.0, 1.0) and gp.n_beta == 0


def test_greedy_warns_on_non_superadditive():
    gp = greedy_partition(ControlFn(lambda s, t: math.sqrt(t - s)), 0.5, 0.0, 1.0)
    assert gp.warnings


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.05, 1.0), st.floats(1.0, 2.0))
def test_greedy_covers_and_saturates(T, beta, power):
    w = ControlFn(lambda s, t: (t - s) ** power)
    gp = greedy_partition(w, beta, 0.0, T)
    assert gp.times[0] == 0.0 and gp.times[-1] == T
    for a, b in zip(gp.times[:-2], gp.times[1:-1]):
        assert abs(w(a, b) - beta) <= 1e-9 * max(1.0, beta) + beta * 1e-8


# -- lifts and defects -------------------------------------------------------


def test_lift_of_time():
    g = TimeGrid.uniform(1.0, 5)
    rp = lift_smooth_path(Path(g, g.points))
    i, j = np.triu_indices(len(g), 1)
    assert np.allclose(rp.area(i, j)[:, 0, 0], (g.points[j] - g.points[i]) ** 2 / 2, atol=1e-14)


def test_lift_of_constant_is_zero():
    rp = lift_smooth_path(_path(np.ones((6, 2))))
    assert np.all(rp.area(np.array([0, 1]), np.array([5, 3])) == 0)


def test_circle_area_against_fine_trapezoid():
    t = np.linspace(0, 2 * np.pi, 4096)
    rp = lift_smooth_path(Path(TimeGrid(t), np.c_[np.cos(t), np.sin(t)]))
    zz = rp.area(0, t.size - 1)
    got = zz[0, 1] - zz[1, 0]
    # oracle: int (x - x0) dy - (y - y0) dx on 10^6 points
    u = np.linspace(0, 2 * np.pi, 1_000_001)
    x, y = np.cos(u) - 1.0, np.sin(u)
    xm, ym = 0.5 * (x[1:] + x[:-1]), 0.5 * (y[1:] + y[:-1])
    oracle = np.sum(xm * np.diff(y) - ym * np.diff(x))
    assert oracle == pytest.approx(2 * np.pi, abs=1e-9)
    assert got == pytest.approx(oracle, abs=1e-3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3), st.integers(3, 40))
def test_chen_and_geometricity_of_smooth_lifts(seed, m, n):
    rng = np.random.default_rng(seed)
    pts = np.concatenate([[0.0], np.cumsum(rng.uniform(0.01, 1, n))])
    rp = lift_smooth_path(Path(TimeGrid(pts), rng.normal(size=(n + 1, m))))
    assert chen_defect(rp).value <= 1e-12
    assert geometricity_defect(rp).value <= 1e-12


def test_chen_detects_perturbation():
    g = TimeGrid.uniform(1.0, 3)
    rp = lift_smooth_path(Path(g, np.sin(3 * g.points)))
    dense = rp.zz.dense().copy()
    dense[2, 5, 0, 0] += 0.1
    bad = RoughPath(rp.z, TwoParamIncrement.from_dense(g, dense))
    assert chen_defect(bad).value >= 0.1 - 1e-12


def test_fit_exponent_sentinels():
    assert fit_exponent([0.1, 0.2, 0.4], [0, 0, 0]) == math.inf
    assert fit_exponent([0.1, 0.2, 0.4], [0.01, 0.04, 0.16]) == pytest.approx(2.0)
