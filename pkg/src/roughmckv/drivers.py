"""Rough drivers over a Gaussian atom basis.

A driver ``(F, FF)`` is stored as a rough path ``(A, B)`` over the coefficient
space ``R^K``::

    F_st(x)     = sum_k A^k_st phi_k(x)
    FF_st(x, y) = sum_{kl} B^{kl}_st (phi_k(x) . grad) phi_l(y)

Chen's relation for ``(A, B)`` is then exactly the driver relation
``delta FF_sut(x, y) = F_su(x) . grad F_ut(y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    DefectReport,
    RoughPath,
    TimeGrid,
    TwoParamIncrement,
    Path,
    chen_assemble,
)
from .fields import GaussianBasis, SmoothField

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class FieldRoughPath:
    """A rough path whose components are the atoms of ``basis``."""

    basis: GaussianBasis
    path: RoughPath

    def __post_init__(self):
        if self.path.m != self.basis.K:
            raise ValueError("rough path dimension does not match the field basis")


@dataclass(frozen=True, eq=False)
class RoughDriver:
    """Driver on a coefficient rough path; ``refiner`` (optional) returns the
    same driver on the once-refined dyadic grid."""

    basis: GaussianBasis
    coef: RoughPath
    refiner: Callable[[], "RoughDriver"] | None = None

    def __post_init__(self):
        if self.coef.m != self.basis.K:
            raise ValueError("driver coefficients do not match the field basis")

    @property
    def grid(self) -> TimeGrid:
        return self.coef.grid

    @property
    def alpha(self) -> float:
        return self.coef.alpha

    def first(self, i, j) -> Array:
        return self.coef.increment(i, j)

    def second(self, i, j) -> Array:
        return self.coef.area(i, j)

    def F(self, i: int, j: int, x: Array) -> Array:
        return self.basis.field_values(self.first(i, j), x)

    def FF(self, i: int, j: int, x: Array, y: Array) -> Array:
        return self.basis.two_point(self.second(i, j), x, y)

    def step_coefficients(self) -> tuple[Array, Array]:
        return self.coef.step_data()

    def with_second(self, second: TwoParamIncrement) -> "RoughDriver":
        """Same first level, replaced second level (used for negative controls)."""
        return RoughDriver(self.basis, RoughPath(self.coef.z, second, self.coef.alpha))

    def window(self, i0: int, i1: int) -> "RoughDriver":
        return RoughDriver(self.basis, self.coef.window(i0, i1))


def driver_from_rough_path(x: FieldRoughPath) -> RoughDriver:
    """``F = X`` and ``FF = (grad_2 (x) XX)``; linear in the coefficients."""
    if not isinstance(x, FieldRoughPath):
        raise TypeError("expected a rough path over field-basis components")
    return RoughDriver(x.basis, x.path)


def quadrature_steps(coeffs: Array, grid: TimeGrid) -> tuple[Array, Array]:
    """Exact per-segment integrals for coefficients linear in time on each step.

    With ``c(r) = c_i + dc (r - t_i)/h`` the first level is ``h (c_i + dc/2)``
    and the second ``h^2 (c_i c_i/2 + c_i dc/3 + dc c_i/6 + dc dc/8)``.
    """
    c = np.asarray(coeffs, dtype=float)
    h = grid.steps
    ci, dc = c[:-1], np.diff(c, axis=-2)
    a = h[:, None] * (ci + 0.5 * dc)
    o = lambda p, q: p[..., :, None] * q[..., None, :]
    b = (h**2)[:, None, None] * (0.5 * o(ci, ci) + o(ci, dc) / 3.0 + o(dc, ci) / 6.0 + o(dc, dc) / 8.0)
    return a, b


def driver_from_quadrature(basis: GaussianBasis, family, grid: TimeGrid, alpha: float = 0.45) -> RoughDriver:
    """``F_st = int_s^t f_r dr`` and ``FF_st(x,y) = int_s^t F_sr(x).grad f_r(y) dr``.

    ``family`` is a ``(n+1, K)`` coefficient array, a sequence of
    :class:`SmoothField` on the grid, or a callable ``t -> (K,)``; it is
    interpolated linearly in time between grid points.
    """
    if callable(family) and not isinstance(family, np.ndarray):
        coeffs = np.array([family(t) for t in grid.points], dtype=float)
    elif len(family) and isinstance(family[0], SmoothField):
        for f in family:
            if not f.basis.same_as(basis):
                raise ValueError("field family is not on the driver basis")
        coeffs = np.array([f.coeffs for f in family])
    else:
        coeffs = np.asarray(family, dtype=float)
    if coeffs.shape != (len(grid), basis.K):
        raise ValueError("family must be sampled on every grid point")
    a, b = quadrature_steps(coeffs, grid)

    def refine():
        fine = grid.refine(1)
        return driver_from_quadrature(basis, _interp_rows(coeffs, grid, fine), fine, alpha)

    return RoughDriver(basis, RoughPath.from_steps(grid, np.zeros(basis.K), a, b, alpha), refine)


def _interp_rows(values: Array, grid: TimeGrid, fine: TimeGrid) -> Array:
    return np.stack([np.interp(fine.points, grid.points, values[:, k]) for k in range(values.shape[1])], axis=1)


def driver_from_smooth_path(basis: GaussianBasis, coeff_path: Path, alpha: float = 0.45) -> RoughDriver:
    """Driver of the canonical lift of a piecewise-linear coefficient path.

    Refinement inserts interpolated points, which leaves the lift unchanged
    on the coarse grid.
    """
    from .core import lift_smooth_path

    if coeff_path.values.shape[1] != basis.K:
        raise ValueError("coefficient path does not match the field basis")
    rp = lift_smooth_path(coeff_path, alpha)

    def refine():
        fine = coeff_path.grid.refine(1)
        return driver_from_smooth_path(basis, Path(fine, _interp_rows(coeff_path.values, coeff_path.grid, fine)), alpha)

    return RoughDriver(basis, rp, refine)


def driver_chen_defect(d: RoughDriver, samples: Sequence[tuple]) -> DefectReport:
    """``max |delta FF_sut(x,y) - F_su(x).grad F_ut(y)|`` by direct field evaluation.

    ``samples`` holds tuples ``(s, u, t, x, y)`` of grid indices and points.
    """
    worst = 0.0
    for s, u, t, x, y in samples:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        lhs = d.FF(s, t, x, y) - d.FF(u, t, x, y) - d.FF(s, u, x, y)
        Fsu = d.F(s, u, x)
        J = d.basis.field_jacobian(d.first(u, t), y)
        rhs = np.einsum("pji,pi->pj", J, Fsu)
        worst = max(worst, float(np.max(np.linalg.norm(lhs - rhs, axis=-1))))
    return DefectReport("driver chen", worst)


def random_driver_samples(d: RoughDriver, count: int, seed: int = 0, half_width: float = 3.0) -> list[tuple]:
    rng = np.random.default_rng(seed)
    n = d.grid.n
    out = []
    for _ in range(count):
        s, u, t = np.sort(rng.choice(n + 1, 3, replace=False))
        x = rng.uniform(-half_width, half_width, (1, d.basis.d))
        y = rng.uniform(-half_width, half_width, (1, d.basis.d))
        out.append((int(s), int(u), int(t), x, y))
    return out


def _pairs_within(grid: TimeGrid, h: float | None):
    n = grid.n
    pts = grid.points
    i, j = np.triu_indices(n + 1, k=1)
    dt = pts[j] - pts[i]
    if h is not None:
        keep = dt <= h * (1 + 1e-12)
        i, j, dt = i[keep], j[keep], dt[keep]
    return i, j, dt


def driver_distance(a: RoughDriver, b: RoughDriver, alpha: float, h: float | None = None, chunk: int = 256) -> float:
    """``[F - G]_{alpha,h;C_b^3} + sqrt([FF - GG]_{2 alpha,h;C_b^2})`` on probe lattices."""
    if not a.basis.same_as(b.basis):
        raise ValueError("drivers live on different bases")
    if not np.array_equal(a.grid.points, b.grid.points):
        raise ValueError("drivers live on different grids")
    i, j, dt = _pairs_within(a.grid, h)
    first, second = 0.0, 0.0
    for k in range(0, i.size, chunk):
        ii, jj, tt = i[k : k + chunk], j[k : k + chunk], dt[k : k + chunk]
        da = a.first(ii, jj) - b.first(ii, jj)
        db = a.second(ii, jj) - b.second(ii, jj)
        first = max(first, float(np.max(a.basis.lattice_norm(da, 3) / tt**alpha)))
        second = max(second, float(np.max(a.basis.two_point_lattice_norm(db) / tt ** (2 * alpha))))
    return first + math.sqrt(second)


def step_norms(d: RoughDriver, mode: str = "lattice") -> tuple[Array, Array]:
    """Per-step ``|F|_{C_b^3}`` and ``|FF|_{C_b^2}``."""
    a, b = d.step_coefficients()
    if mode == "coef":
        nu3 = d.basis.atom_norms(3)
        nu2 = d.basis.atom_norms(2)
        return np.abs(a) @ nu3, np.einsum("nkl,k,l->n", np.abs(b), nu2, nu3)
    return d.basis.lattice_norm(a, 3), d.basis.two_point_lattice_norm(b)


def pair_norm_fn(d: RoughDriver, mode: str = "coef"):
    """Vectorised ``(i, j) -> |F_ij|_{C_b^3}, |FF_ij|_{C_b^2}``."""
    basis = d.basis
    if mode == "coef":
        nu3 = basis.atom_norms(3)
        nu2 = basis.atom_norms(2)
        w2 = nu2[:, None] * nu3[None, :]

        def fn(i, j):
            return np.abs(d.first(i, j)) @ nu3, np.sum(np.abs(d.second(i, j)) * w2, axis=(-1, -2))

    else:

        def fn(i, j):
            return basis.lattice_norm(d.first(i, j), 3), basis.two_point_lattice_norm(d.second(i, j))

    return fn


def pair_norm_tables(d: RoughDriver, mode: str = "coef") -> tuple[Array, Array]:
    """Dense upper-triangular tables of :func:`pair_norm_fn` over all grid pairs."""
    n1 = len(d.grid)
    i, j = np.triu_indices(n1, 1)
    n1s, n2s = pair_norm_fn(d, mode)(i, j)
    t1, t2 = np.zeros((n1, n1)), np.zeros((n1, n1))
    t1[i, j], t2[i, j] = n1s, n2s
    return t1, t2


def driver_control_row(
    d: RoughDriver, p: float, start: int, stop: int | None = None, mode: str = "coef", tables: tuple[Array, Array] | None = None
) -> Array:
    """``w_F(t_start, t_j) = [[F]]_{p,[t_start,t_j]}^p`` for ``j >= start``.

    ``[[F]] = [[F]]_{p;C_b^3} + sqrt([[FF]]_{p/2;C_b^2})``, each p-variation
    computed exactly by dynamic programming over grid indices. ``tables``
    from :func:`pair_norm_tables` skip the pair evaluations when many rows
    of one driver are needed.
    """
    stop = d.grid.n if stop is None else stop
    fn = pair_norm_fn(d, mode) if tables is None else None
    L = stop - start
    b1 = np.zeros(L + 1)
    b2 = np.zeros(L + 1)
    for jj in range(1, L + 1):
        if fn is None:
            n1, n2 = tables[0][start : start + jj, start + jj], tables[1][start : start + jj, start + jj]
        else:
            i = np.arange(start, start + jj)
            n1, n2 = fn(i, np.full_like(i, start + jj))
        b1[jj] = np.max(b1[:jj] + n1**p)
        b2[jj] = np.max(b2[:jj] + n2 ** (p / 2))
    return (b1 ** (1 / p) + np.sqrt(b2 ** (2 / p))) ** p
