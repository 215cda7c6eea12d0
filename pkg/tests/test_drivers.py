import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughmckv.core import Path, RoughPath, TimeGrid, TwoParamIncrement, lift_smooth_path
from roughmckv.drivers import (
    FieldRoughPath,
    RoughDriver,
    driver_chen_defect,
    driver_distance,
    driver_from_quadrature,
    driver_from_rough_path,
    driver_from_smooth_path,
    random_driver_samples,
    step_norms,
)
from roughmckv.fields import GaussianBasis, SmoothField


def _basis(K=3, d=1, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianBasis(rng.uniform(-1, 1, (K, d)), rng.uniform(0.7, 1.5, K), rng.normal(size=(K, d)))


def _b_and_grad(basis, c, x, y):
    return basis.field_values(c, x), basis.field_jacobian(c, y)


def _expected_second(basis, c, x, y, scale):
    bx, J = _b_and_grad(basis, c, x, y)
    return scale * np.einsum("pji,pi->pj", J, bx)


def test_single_field_lift_closed_form():
    basis = _basis()
    c = np.array([0.5, -1.0, 0.3])
    g = TimeGrid.uniform(1.0, 4)
    d = driver_from_rough_path(FieldRoughPath(basis, lift_smooth_path(Path(g, g.points[:, None] * c))))
    x, y = np.array([[0.2]]), np.array([[-0.4]])
    for s, t in [(0, 16), (3, 9), (5, 6)]:
        h = g.points[t] - g.points[s]
        assert np.allclose(d.F(s, t, x), h * basis.field_values(c, x), atol=1e-14)
        assert np.allclose(d.FF(s, t, x, y), _expected_second(basis, c, x, y, h**2 / 2), atol=1e-14)


def test_zero_rough_path_gives_zero_driver():
    basis = _basis()
    g = TimeGrid.uniform(1.0, 3)
    d = driver_from_rough_path(FieldRoughPath(basis, lift_smooth_path(Path(g, np.zeros((9, 3))))))
    assert np.all(d.F(0, 8, np.ones((2, 1))) == 0)
    assert np.all(d.FF(0, 8, np.ones((2, 1)), np.ones((2, 1))) == 0)


def test_non_basis_input_rejected():
    basis = _basis()
    g = TimeGrid.uniform(1.0, 2)
    with pytest.raises(ValueError):
        FieldRoughPath(basis, lift_smooth_path(Path(g, np.zeros((5, 2)))))
    with pytest.raises(TypeError):
        driver_from_rough_path(lift_smooth_path(Path(g, np.zeros((5, 3)))))


def test_quadrature_autonomous_and_linear_in_time():
    basis = _basis()
    c = np.array([1.0, 0.2, -0.7])
    g = TimeGrid.uniform(2.0, 3)
    x, y = np.array([[0.1]]), np.array([[0.6]])
    auto = driver_from_quadrature(basis, np.tile(c, (9, 1)), g)
    lin = driver_from_quadrature(basis, lambda t: t * c, g)
    for s, t in [(0, 8), (2, 5)]:
        ts, tt = g.points[s], g.points[t]
        assert np.allclose(auto.F(s, t, x), (tt - ts) * basis.field_values(c, x), atol=1e-13)
        assert np.allclose(auto.FF(s, t, x, y), _expected_second(basis, c, x, y, (tt - ts) ** 2 / 2), atol=1e-13)
        assert np.allclose(lin.F(s, t, x), (tt**2 - ts**2) / 2 * basis.field_values(c, x), atol=1e-13)


def test_quadrature_accepts_smooth_field_family():
    basis = _basis()
    g = TimeGrid.uniform(1.0, 2)
    fam = [SmoothField(basis, np.full(3, t)) for t in g.points]
    d = driver_from_quadrature(basis, fam, g)
    assert np.allclose(d.first(0, 4), np.full(3, 0.5))
    with pytest.raises(ValueError):
        driver_from_quadrature(_basis(seed=3), fam, g)
    with pytest.raises(ValueError):
        driver_from_quadrature(basis, np.zeros((3, 3)), g)


def test_quadrature_against_fine_riemann_oracle():
    rng = np.random.default_rng(4)
    g = TimeGrid.uniform(1.0, 3)
    coeffs = rng.normal(size=(9, 3))
    d = driver_from_quadrature(_basis(), coeffs, g)
    # oracle: trapezoid sums on a grid 100x finer than needed for 1e-8
    u = np.linspace(0, 1, 8 * 12_500 + 1)
    cu = np.stack([np.interp(u, g.points, coeffs[:, k]) for k in range(3)], 1)
    du = u[1] - u[0]
    A = np.concatenate([np.zeros((1, 3)), np.cumsum(0.5 * (cu[1:] + cu[:-1]) * du, axis=0)])
    for s, t in [(0, 8), (1, 6), (3, 4)]:
        i0, i1 = 12_500 * s, 12_500 * t
        assert np.allclose(d.first(s, t), A[i1] - A[i0], atol=1e-12)
        integrand = (A[i0 : i1 + 1] - A[i0])[:, :, None] * cu[i0 : i1 + 1, None, :]
        B = np.sum(0.5 * (integrand[1:] + integrand[:-1]), axis=0) * du
        assert np.allclose(d.second(s, t), B, atol=1e-8)


def test_driver_chen_defect_quadrature_and_broken():
    basis = _basis(K=2, d=2, seed=5)
    rng = np.random.default_rng(5)
    g = TimeGrid.uniform(1.0, 5)
    d = driver_from_quadrature(basis, rng.normal(size=(33, 2)), g)
    samples = random_driver_samples(d, 50)
    assert driver_chen_defect(d, samples).value <= 1e-10
    zeroed = d.with_second(TwoParamIncrement(g, (2, 2), lambda i, j: np.zeros(np.shape(i) + (2, 2))))
    expected = 0.0
    for s, u, t, x, y in samples:
        J = basis.field_jacobian(d.first(u, t), y)
        expected = max(expected, float(np.max(np.linalg.norm(np.einsum("pji,pi->pj", J, d.F(s, u, x)), axis=-1))))
    assert expected > 0
    assert driver_chen_defect(zeroed, samples).value == pytest.approx(expected, rel=1e-12)


def test_distance_identity_and_scaling():
    basis = _basis()
    rng = np.random.default_rng(6)
    g = TimeGrid.uniform(1.0, 4)
    d = driver_from_quadrature(basis, rng.normal(size=(17, 3)), g)
    assert driver_distance(d, d, 0.45) == 0.0
    eps = 1e-2
    zs = d.coef
    scaled = RoughDriver(basis, RoughPath(Path(g, zs.z.values * (1 + eps)), zs.zz, zs.alpha))
    zeroF = RoughDriver(basis, RoughPath(Path(g, np.zeros_like(zs.z.values)), zs.zz, zs.alpha))
    F_alpha = driver_distance(d, zeroF, 0.45, h=0.5)
    assert driver_distance(d, scaled, 0.45, h=0.5) == pytest.approx(eps * F_alpha, rel=1e-10)


def test_distance_against_direct_pair_loop():
    basis = _basis(K=2)
    rng = np.random.default_rng(7)
    g = TimeGrid.uniform(1.0, 3)
    f, gg = rng.normal(size=(9, 2)), 0.1 * rng.normal(size=(9, 2))
    a = driver_from_quadrature(basis, f, g)
    b = driver_from_quadrature(basis, f + gg, g)
    first = second = 0.0
    for i in range(9):
        for j in range(i + 1, 9):
            dt = g.points[j] - g.points[i]
            first = max(first, float(basis.lattice_norm(a.first(i, j) - b.first(i, j))) / dt**0.45)
            second = max(second, float(basis.two_point_lattice_norm(a.second(i, j) - b.second(i, j))) / dt**0.9)
    assert driver_distance(a, b, 0.45) == pytest.approx(first + np.sqrt(second), rel=1e-12)
    with pytest.raises(ValueError):
        driver_distance(a, driver_from_quadrature(_basis(K=2, seed=9), f, g), 0.45)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_first_level_is_linear(seed):
    rng = np.random.default_rng(seed)
    basis = _basis()
    g = TimeGrid.uniform(1.0, 3)
    p1, p2 = rng.normal(size=(2, 9, 3))
    d1, d2, d12 = (driver_from_rough_path(FieldRoughPath(basis, lift_smooth_path(Path(g, p)))) for p in (p1, p2, p1 + p2))
    i, j = np.triu_indices(9, 1)
    assert np.allclose(d12.first(i, j), d1.first(i, j) + d2.first(i, j), atol=1e-12)


def test_lift_and_quadrature_agree_for_smooth_z():
    basis = _basis()
    c = np.array([0.3, 1.0, -0.5])
    g = TimeGrid.uniform(1.0, 6)
    t = g.points
    via_lift = driver_from_rough_path(FieldRoughPath(basis, lift_smooth_path(Path(g, (t**2)[:, None] * c))))
    via_quad = driver_from_quadrature(basis, (2 * t)[:, None] * c, g)
    i, j = np.triu_indices(len(g), 1)
    assert np.allclose(via_lift.first(i, j), via_quad.first(i, j), atol=1e-8)
    assert np.allclose(via_lift.second(i, j), via_quad.second(i, j), atol=1e-8)


def test_smooth_path_refiner_keeps_coarse_values():
    basis = _basis()
    g = TimeGrid.uniform(1.0, 3)
    d = driver_from_smooth_path(basis, Path(g, np.random.default_rng(0).normal(size=(9, 3))))
    f = d.refiner()
    assert f.grid.n == 16
    assert np.allclose(f.first(0, 16), d.first(0, 8), atol=1e-14)
    assert np.allclose(f.second(2, 14), d.second(1, 7), atol=1e-13)


def test_step_norms_modes():
    basis = _basis()
    g = TimeGrid.uniform(1.0, 3)
    d = driver_from_quadrature(basis, np.ones((9, 3)), g)
    lat = step_norms(d, "lattice")
    coef = step_norms(d, "coef")
    assert np.all(lat[0] <= coef[0] + 1e-12)
    assert lat[0].shape == (8,)
