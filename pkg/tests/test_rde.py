import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughmckv import corpus
from roughmckv.controlled import ControlledPath
from roughmckv.core import TimeGrid, fit_exponent, holder_seminorm
from roughmckv.corpus import ExperimentConfig
from roughmckv.drivers import driver_distance, driver_from_quadrature
from roughmckv.fields import GaussianBasis
from roughmckv.rde import (
    DriverTooRough,
    PicardNotConverged,
    SolverConfig,
    classical_consistency,
    solve_davie,
    solve_picard,
    stability_gap,
)
from roughmckv.stochastic import brownian_lift, sample_brownian

CFG = ExperimentConfig(level=10)


def _zero_driver(level=6):
    basis, _ = corpus.identity_field()
    g = TimeGrid.uniform(1.0, level)
    return driver_from_quadrature(basis, np.zeros((len(g), basis.K)), g)


def _scaled_linear(d, factor):
    basis, c = corpus.identity_field()
    return driver_from_quadrature(basis, np.tile(factor * c, (len(d.grid), 1)), d.grid)


# -- Davie scheme ------------------------------------------------------------


def test_smooth_linear_reproduces_e():
    sol = solve_davie(corpus.smooth_linear_driver(CFG), [1.0])
    assert sol.x.grid.n == 1024
    assert sol.values[-1, 0] == pytest.approx(np.e, abs=1e-4)
    assert sol.admission_violations == 0


def test_zero_driver_is_constant():
    sol = solve_davie(_zero_driver(), [0.7])
    assert np.all(sol.values == 0.7)


@pytest.mark.parametrize("stream", [0, 1])
def test_brownian_linear_matches_exponential(stream):
    cfg = ExperimentConfig(experiment="brownian-linear", level=14, seed=3)
    d, w = corpus.brownian_linear_driver(cfg, stream)
    assert np.max(np.abs(w)) < 3
    sol = solve_davie(d, [1.0], config=corpus.rde_solver_config(cfg))
    # exact solution of the ODE along the piecewise-linear path
    assert np.max(np.abs(sol.values[:, 0] - np.exp(w))) <= 1e-3
    assert sol.natural_report.exponent >= 3 * 0.45 - 0.15
    assert sol.sharp_report.exponent >= 2 * 0.45 - 0.1


def test_brownian_driver_too_rough_in_error_mode():
    cfg = ExperimentConfig(experiment="brownian-linear", level=8)
    d, _ = corpus.brownian_linear_driver(cfg, 0)
    with pytest.raises(DriverTooRough, match="too rough for grid budget"):
        solve_davie(d, [1.0], config=SolverConfig(max_refine=0))


def test_coarse_grid_is_refined_until_admissible():
    sol = solve_davie(corpus.smooth_linear_driver(CFG, level=5), [1.0])
    assert sol.x.grid.n == 128
    assert any("refined" in note for note in sol.notes)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        solve_davie(corpus.smooth_linear_driver(CFG, level=7), [1.0, 2.0])


def test_remainder_exponents_smooth_corpus():
    sol = solve_davie(corpus.smooth_linear_driver(CFG), [1.0])
    assert sol.sharp_report.exponent >= 2 * 0.45 - 0.1
    assert sol.natural_report.exponent >= 3 * 0.45 - 0.15


def test_decomposition_is_exact():
    sol = solve_davie(corpus.smooth_linear_driver(CFG, level=7), [1.0])
    n = sol.x.grid.n
    i = np.arange(n)
    # one Davie step leaves no natural remainder
    assert np.max(np.abs(sol.natural(i, i + 1))) <= 1e-12
    a, b = np.triu_indices(n + 1, 1)
    d = sol.driver
    xs = sol.values[a]
    ff = d.basis.two_point(d.second(a, b), xs, xs)
    assert np.allclose(sol.sharp(a, b) - sol.natural(a, b), ff, atol=1e-12)


def test_refinement_convergence_ratio():
    prev, diffs = None, []
    for level in range(7, 12):
        x = solve_davie(corpus.smooth_linear_driver(CFG, level), [1.0]).values
        if prev is not None:
            diffs.append(np.max(np.abs(x[::2] - prev)))
        prev = x
    ratios = np.array(diffs[1:]) / np.array(diffs[:-1])
    assert np.all(ratios <= 0.75)


def test_richardson_estimate_tracks_error():
    sol = solve_davie(corpus.smooth_linear_driver(CFG), [1.0])
    err = np.max(np.abs(sol.values[:, 0] - np.exp(sol.x.grid.points)))
    # first-order scheme: the coarse/fine difference is about the fine error
    assert 0.5 <= sol.richardson_error / err <= 4.0


def test_local_holder_bound_is_finite():
    d = corpus.smooth_linear_driver(CFG, level=8)
    sol = solve_davie(d, [1.0])
    h = 1 / 16
    xa = holder_seminorm(sol.x, 0.45, h=h)
    fa = driver_distance(d, _scaled_linear(d, 0.0), 0.45, h=h)
    C = xa / fa
    assert np.isfinite(C) and 0 < C < 10


@settings(max_examples=20, deadline=None)
@given(st.floats(-2.0, 2.0))
def test_linear_solution_scales_with_initial_value(xi):
    d = corpus.smooth_linear_driver(CFG, level=7)
    base = solve_davie(d, [1.0]).values
    got = solve_davie(d, [xi]).values
    # the damped identity is linear to |x|^2 / 2e8
    assert np.allclose(got, xi * base, atol=1e-6)


# -- Picard iteration --------------------------------------------------------


def test_picard_gaps_are_geometric_on_small_window():
    d = corpus.smooth_linear_driver(CFG.replace(T=0.25), level=8)
    _, gaps = solve_picard(d, [1.0], tol=1e-10)
    g = np.array(gaps)
    g = g[g > 1e-9]
    assert np.all(g[1:] / g[:-1] < 1)


def test_picard_zero_driver_one_iteration():
    sol, gaps = solve_picard(_zero_driver(), [0.3])
    assert gaps == [0.0]
    assert np.all(sol.values == 0.3)


@pytest.mark.parametrize("tol", [1e-6, 1e-8, 1e-10])
def test_picard_agrees_with_davie(tol):
    d = corpus.smooth_linear_driver(CFG)
    pic, _ = solve_picard(d, [1.0], tol=tol)
    dav = solve_davie(d, [1.0])
    gap = np.max(np.abs(pic.values - dav.values))
    assert gap <= 10 * tol
    assert gap <= 1e-6


def test_picard_reports_gap_trace_on_failure():
    d = corpus.smooth_linear_driver(CFG.replace(T=4.0))
    with pytest.raises(PicardNotConverged, match="last gaps") as info:
        solve_picard(d, [1.0], max_iters=3)
    assert len(info.value.gaps) == 4


# -- stability ---------------------------------------------------------------


def test_stability_identical_inputs():
    d = corpus.smooth_linear_driver(CFG, level=8)
    gap, rep = stability_gap(d, d, [1.0], [1.0])
    assert gap == 0.0 and rep["ratio"] == 0.0


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
def test_stability_initial_perturbation(T):
    d = corpus.smooth_linear_driver(CFG.replace(T=T), level=8)
    ratios = []
    for eps in (1e-3, 1e-2):
        gap, rep = stability_gap(d, d, [1.0], [1.0 + eps])
        ratios.append(rep["ratio"])
        assert np.isfinite(rep["ratio"]) and rep["accumulation"] >= 1
    # linear flow: the gap is eps e^T
    assert ratios == pytest.approx([np.exp(T)] * 2, rel=1e-4)


def test_stability_driver_perturbation_slope():
    d = corpus.smooth_linear_driver(CFG, level=8)
    eps = np.array([1e-1, 1e-2, 1e-3])
    gaps = [stability_gap(d, _scaled_linear(d, 1 + e), [1.0], [1.0])[0] for e in eps]
    assert fit_exponent(eps, gaps) >= 0.9


# -- classical consistency ---------------------------------------------------


def _smooth_z(level):
    return corpus.smooth_z(TimeGrid.uniform(1.0, level))


def _const_beta(coeffs, z):
    n1 = len(z.grid)
    K, m = coeffs.shape
    return ControlledPath.from_arrays(np.broadcast_to(coeffs, (n1, K, m)).copy(), np.zeros((n1, K, m, m)), z)


def test_classical_consistency_constant_field():
    z = _smooth_z(8)
    basis = corpus.flat_basis()
    b = 0.8
    gap = classical_consistency(_const_beta(np.array([[b]]), z), basis, [0.1])
    assert gap <= 1e-10


def test_classical_consistency_linear_field():
    z = _smooth_z(10)
    basis, c = corpus.identity_field()
    gap = classical_consistency(_const_beta(c[:, None], z), basis, [1.0])
    assert gap <= 1e-6


def test_classical_consistency_linear_field_closed_form():
    z = _smooth_z(10)
    basis, c = corpus.identity_field()
    from roughmckv.drivers import FieldRoughPath, driver_from_rough_path
    from roughmckv.controlled import integral_lift

    beta = _const_beta(c[:, None], z)
    sol = solve_davie(driver_from_rough_path(FieldRoughPath(basis, integral_lift(beta, z))), [1.0], config=SolverConfig(on_violation="off"))
    zv = z.z.values[:, 0]
    assert np.max(np.abs(sol.values[:, 0] - np.exp(zv - zv[0]))) <= 1e-5


def brownian_consistency_gap(seed, level=12):
    """Z-controlled field family on three atoms, m = 2."""
    basis = GaussianBasis([[-0.5], [0.7], [0.0]], [1.0, 0.8, 1.5], [[1.0], [1.0], [1.0]])
    g = TimeGrid.uniform(1.0, level)
    z = brownian_lift(sample_brownian(2, g, seed, 0), "stratonovich", 0.45)
    c0 = np.array([[0.6, -0.3], [-0.4, 0.5], [0.3, 0.2]])
    c1 = 0.3 * np.array([[[1, 0], [0, -1]], [[0.5, 0.2], [0, 1]], [[0, 1], [1, 0]]])
    y = c0 + np.einsum("kji,ni->nkj", c1, z.z.values)
    yp = np.broadcast_to(c1, (len(g),) + c1.shape).copy()
    return classical_consistency(ControlledPath.from_arrays(y, yp, z), basis, [0.2])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_classical_consistency_brownian(seed):
    assert brownian_consistency_gap(seed) <= 5e-3
