"""Davie and Picard solvers for rough differential equations ``dx = F(dt, x)``."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .controlled import ControlledPath, integral_lift
from .core import (
    DefectReport,
    Path,
    RoughPath,
    TimeGrid,
    TwoParamIncrement,
    dyadic_defect,
)
from .drivers import FieldRoughPath, RoughDriver, driver_distance, driver_from_rough_path, step_norms
from .fields import GaussianBasis

Array = np.ndarray


class DriverTooRough(RuntimeError):
    pass


class PicardNotConverged(RuntimeError):
    def __init__(self, msg: str, gaps: list[float]):
        super().__init__(msg)
        self.gaps = gaps


@dataclass(frozen=True)
class SolverConfig:
    """Step admission: every step must satisfy ``C w_F(step)^{1/p} <= 1/2``.

    ``on_violation`` is ``error`` (refine, then raise), ``warn`` (record and
    continue) or ``off``.
    """

    step_constant: float = 8.0
    p: float | None = None
    on_violation: str = "error"
    norm_mode: str = "lattice"
    max_refine: int = 4
    fit_levels: int = 6  # finest dyadic levels used for remainder exponents


@dataclass(frozen=True, eq=False)
class RdeSolution:
    x: Path
    driver: RoughDriver
    grid_index: Array  # solver grid points as driver-grid indices
    sharp: TwoParamIncrement
    natural: TwoParamIncrement
    sharp_report: DefectReport
    natural_report: DefectReport
    richardson_error: float = math.nan
    admission_violations: int = 0
    notes: tuple = ()

    @property
    def values(self) -> Array:
        return self.x.values


def _step_arrays(d: RoughDriver, idx: Array) -> tuple[Array, Array]:
    if idx.size == d.grid.n + 1 and np.array_equal(idx, np.arange(d.grid.n + 1)):
        return d.step_coefficients()
    return d.first(idx[:-1], idx[1:]), d.second(idx[:-1], idx[1:])


def davie_loop(basis: GaussianBasis, x0: Array, a_steps: Array, b_steps: Array) -> Array:
    """Iterate ``x <- x + F(x) + FF(x, x)`` for a batch of starting points.

    ``x0`` is ``(P, d)``; ``a_steps`` ``(n, K)`` or ``(n, P, K)``; ``b_steps``
    ``(n, K, K)`` or ``(n, P, K, K)``. Returns ``(P, n+1, d)``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    P = x0.shape[0]
    n = a_steps.shape[0]
    out = np.empty((P, n + 1, x0.shape[1]))
    out[:, 0] = x0
    x = x0.copy()
    K = basis.K
    for k in range(n):
        a = np.broadcast_to(a_steps[k], (P, K))
        B = np.broadcast_to(b_steps[k], (P, K, K))
        x = x + basis.step_increment(x, a, B)
        out[:, k + 1] = x
    return out


def _admission(d: RoughDriver, idx: Array, cfg: SolverConfig) -> Array:
    p = cfg.p or 1.0 / d.alpha
    beta = (0.5 / cfg.step_constant) ** p
    sub = RoughDriver(d.basis, _subsampled(d.coef, idx))
    nF, nFF = step_norms(sub, cfg.norm_mode)
    w = (nF + np.sqrt(nFF)) ** p
    return w > beta * (1 + 1e-12)


def _subsampled(rp: RoughPath, idx: Array) -> RoughPath:
    if idx.size == rp.grid.n + 1:
        return rp
    g = TimeGrid(rp.grid.points[idx])
    zz = rp.zz
    return RoughPath(
        Path(g, rp.z.values[idx]),
        TwoParamIncrement(g, zz.shape, lambda i, j: zz(idx[i], idx[j])),
        rp.alpha,
        (rp.increment(idx[:-1], idx[1:]), rp.area(idx[:-1], idx[1:])),
    )


def _solution_from_path(
    d: RoughDriver, idx: Array, xv: Array, notes=(), violations=0, richardson=math.nan, fit_levels: int = 6
) -> RdeSolution:
    grid = TimeGrid(d.grid.points[idx])
    basis = d.basis

    def sharp(i, j):
        xi = xv[i].reshape(-1, xv.shape[1])
        A = d.first(idx[i], idx[j]).reshape(-1, basis.K)
        out = (xv[j] - xv[i]).reshape(-1, xv.shape[1]) - basis.field_values(A, xi)
        return out.reshape(np.shape(i) + (xv.shape[1],))

    def natural(i, j):
        xi = xv[i].reshape(-1, xv.shape[1])
        B = d.second(idx[i], idx[j]).reshape(-1, basis.K, basis.K)
        out = sharp(i, j).reshape(-1, xv.shape[1]) - basis.two_point(B, xi, xi)
        return out.reshape(np.shape(i) + (xv.shape[1],))

    shape = (xv.shape[1],)
    # coarse lags hold few pairs and their maxima saturate, so fit on fine ones
    levels = [k for k in range(1, fit_levels + 1) if 2**k <= grid.n]
    sharp_rep = dyadic_defect("x sharp", sharp, grid, levels)
    nat_rep = dyadic_defect("x natural", natural, grid, levels)
    return RdeSolution(
        Path(grid, xv),
        d,
        idx,
        TwoParamIncrement(grid, shape, sharp),
        TwoParamIncrement(grid, shape, natural),
        sharp_rep,
        nat_rep,
        richardson,
        violations,
        tuple(notes),
    )


def _grid_indices(d: RoughDriver, grid: TimeGrid | None) -> Array:
    if grid is None:
        return np.arange(d.grid.n + 1)
    try:
        return d.grid.index_of(grid.points)
    except KeyError as exc:
        raise ValueError("solver grid must be a subgrid of the driver grid") from exc


def solve_davie(d: RoughDriver, xi, grid: TimeGrid | None = None, config: SolverConfig | None = None) -> RdeSolution:
    """Davie scheme on ``grid`` (a subgrid of the driver grid; default: all of it).

    If a step fails admission the grid is refined towards the driver grid by
    halving; a failure on the driver grid itself raises :class:`DriverTooRough`
    unless ``config.on_violation`` says otherwise.
    """
    cfg = config or SolverConfig()
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.size != d.basis.d:
        raise ValueError("initial condition dimension does not match the driver")
    idx = _grid_indices(d, grid)
    notes = []
    violations = 0
    refinements = 0
    if cfg.on_violation != "off":
        while True:
            bad = _admission(d, idx, cfg)
            violations = int(bad.sum())
            if not violations:
                break
            if idx.size < d.grid.n + 1:
                idx = _refine_indices(idx)
                notes.append(f"refined to {idx.size - 1} steps")
                continue
            if d.refiner is not None and refinements < cfg.max_refine:
                d = d.refiner()
                refinements += 1
                idx = np.arange(d.grid.n + 1)
                notes.append(f"refined driver to {d.grid.n} steps")
                continue
            if cfg.on_violation == "error":
                raise DriverTooRough(f"driver too rough for grid budget: {violations} steps exceed the admission threshold")
            notes.append(f"admission violated on {violations} of {idx.size - 1} steps")
            break
    a, b = _step_arrays(d, idx)
    xv = davie_loop(d.basis, xi[None, :], a, b)[0]
    rich = math.nan
    if idx.size > 2 and (idx.size - 1) % 2 == 0:
        coarse = idx[::2]
        ca, cb = _step_arrays(d, coarse)
        xc = davie_loop(d.basis, xi[None, :], ca, cb)[0]
        rich = float(np.max(np.abs(xc - xv[::2])))
    return _solution_from_path(d, idx, xv, notes, violations, rich, cfg.fit_levels)


def _refine_indices(idx: Array) -> Array:
    mids = (idx[:-1] + idx[1:]) // 2
    ok = mids > idx[:-1]
    out = np.sort(np.concatenate([idx, mids[ok]]))
    return np.unique(out)


def two_point_batch(basis: GaussianBasis, B: Array, x: Array, y: Array) -> Array:
    return basis.two_point(B, x, y)


def solve_picard(
    d: RoughDriver,
    xi,
    grid: TimeGrid | None = None,
    max_iters: int = 200,
    tol: float = 1e-12,
) -> tuple[RdeSolution, list[float]]:
    """Picard iteration on the discrete germ sums.

    ``x^0 = xi``, ``x^1_t = xi + F_{0t}(xi)`` and
    ``x^{n+1}_t = xi + sum_steps [F(x^n_s) + FF(x^{n-1}_s, x^n_s)]``, where the
    older iterate sits in the first (field) slot of ``FF`` and the newer one in
    the differentiated slot. The fixed point coincides with the Davie scheme.
    """
    xi = np.asarray(xi, dtype=float).reshape(-1)
    idx = _grid_indices(d, grid)
    a, b = _step_arrays(d, idx)
    n = a.shape[0]
    basis = d.basis
    prev = np.broadcast_to(xi, (n + 1, xi.size)).copy()
    cur = np.vstack([xi, xi + np.cumsum(basis.field_values(a, np.broadcast_to(xi, (n, xi.size))), axis=0)])
    gaps = [float(np.max(np.abs(cur - prev)))]
    for _ in range(max_iters):
        if gaps[-1] <= tol:
            break
        inc = basis.field_values(a, cur[:-1]) + basis.two_point(b, prev[:-1], cur[:-1])
        nxt = np.vstack([xi, xi + np.cumsum(inc, axis=0)])
        gaps.append(float(np.max(np.abs(nxt - cur))))
        prev, cur = cur, nxt
    if not gaps[-1] <= tol:
        trace = ", ".join(f"{g:.3g}" for g in gaps[-5:])
        raise PicardNotConverged(f"Picard iteration did not reach {tol:g} in {max_iters} iterations (last gaps: {trace})", gaps)
    return _solution_from_path(d, idx, cur), gaps


def greedy_count(d: RoughDriver, beta: float = 1.0, p: float | None = None, mode: str = "coef") -> int:
    from .stochastic import accumulation_count

    return accumulation_count(d, beta, p, mode)


def stability_gap(
    dA: RoughDriver, dB: RoughDriver, xiA, xiB, grid: TimeGrid | None = None, h: float | None = None, norm_mode: str = "lattice"
) -> tuple[float, dict]:
    """Sup gap between two solutions and the ingredients of the Gronwall-type bound.

    Cost is quadratic in the grid size (all pairs for the driver distance and
    the accumulation count), so keep grids at a few hundred steps.
    """
    sa = solve_davie(dA, xiA, grid, SolverConfig(on_violation="off"))
    sb = solve_davie(dB, xiB, grid, SolverConfig(on_violation="off"))
    gap = float(np.max(np.abs(sa.values - sb.values)))
    init = float(np.linalg.norm(np.asarray(xiA, float) - np.asarray(xiB, float)))
    dist = driver_distance(dA, dB, dA.alpha, h)
    n_acc = greedy_count(dA, mode=norm_mode)
    report = {
        "sup_gap": gap,
        "initial_gap": init,
        "driver_distance": dist,
        "accumulation": n_acc,
        "ratio": gap / (init + dist) if init + dist > 0 else (0.0 if gap == 0 else math.inf),
    }
    return gap, report


def classical_consistency(
    beta: ControlledPath,
    basis: GaussianBasis,
    xi,
    grid: TimeGrid | None = None,
    z: RoughPath | None = None,
) -> float:
    """Gap between Davie on ``int beta dZ`` and the explicit classical scheme.

    ``beta`` holds coefficients ``(n+1, K, m)`` (column ``j`` is the field
    ``beta^j``) and derivative ``(n+1, K, m, m)``. The classical step is
    ``x += beta^j Z^j + (beta'^{j,i} + D beta^j beta^i) ZZ^{i,j}``.
    """
    z = beta.base if z is None else z
    lift = integral_lift(beta, z)
    drv = driver_from_rough_path(FieldRoughPath(basis, lift))
    sol = solve_davie(drv, xi, grid, SolverConfig(on_violation="off"))
    idx = sol.grid_index
    y, yp = beta.y.values, beta.y_prime.values
    x = np.asarray(xi, dtype=float).reshape(1, -1)
    out = [x[0].copy()]
    for k in range(idx.size - 1):
        s, t = idx[k], idx[k + 1]
        dz = z.increment(s, t)
        dzz = z.area(s, t)
        cols = y[s]  # (K, m)
        inc = basis.field_values(cols @ dz, x)
        # beta'^{j,i} ZZ^{i,j}
        inc = inc + basis.field_values(np.einsum("kji,ij->k", yp[s], dzz), x)
        m = cols.shape[1]
        for i in range(m):
            bi = basis.field_values(cols[:, i], x)
            for j in range(m):
                if dzz[i, j] == 0.0:
                    continue
                Jj = basis.field_jacobian(cols[:, j], x)
                inc = inc + dzz[i, j] * np.einsum("pab,pb->pa", Jj, bi)
        x = x + inc
        out.append(x[0].copy())
    classical = np.array(out)
    return float(np.max(np.abs(classical - sol.values)))
