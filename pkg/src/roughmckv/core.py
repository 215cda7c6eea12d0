"""Level-2 rough path algebra on finite time grids.

Two-parameter quantities are evaluated lazily from index pairs so that grids
with thousands of points never materialise an O(n^2) table. Rough paths keep
their second level as the cumulative ``Z_{0 t_j}`` and recover any pair
through Chen's relation, which makes the relation hold to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


# ---------------------------------------------------------------------------
# grids and paths


@dataclass(frozen=True, eq=False)
class TimeGrid:
    points: Array
    dyadic_level: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("degenerate grid")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, T: float, level: int, t0: float = 0.0) -> "TimeGrid":
        if level < 0:
            raise ValueError("dyadic level must be non-negative")
        n = 2**level
        return cls(t0 + (T - t0) * np.arange(n + 1) / n, dyadic_level=level)

    @property
    def n(self) -> int:
        return self.points.size - 1

    @property
    def t0(self) -> float:
        return float(self.points[0])

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def steps(self) -> Array:
        return np.diff(self.points)

    def refine(self, levels: int) -> "TimeGrid":
        """Insert midpoints ``levels`` times; coarse points are kept exactly."""
        pts = self.points
        for _ in range(levels):
            mid = 0.5 * (pts[:-1] + pts[1:])
            out = np.empty(2 * pts.size - 1)
            out[0::2] = pts
            out[1::2] = mid
            pts = out
        lvl = None if self.dyadic_level is None else self.dyadic_level + levels
        return TimeGrid(pts, dyadic_level=lvl)

    def index_of(self, t: float | Array) -> Array:
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.points, t), 0, self.n)
        lo = np.clip(idx - 1, 0, self.n)
        pick = np.where(np.abs(self.points[lo] - t) < np.abs(self.points[idx] - t), lo, idx)
        tol = 1e-9 * max(1.0, abs(self.T))
        if np.any(np.abs(self.points[pick] - t) > tol):
            raise KeyError("time not on grid")
        return pick

    def window(self, i0: int, i1: int) -> "TimeGrid":
        return TimeGrid(self.points[i0 : i1 + 1])

    def __len__(self) -> int:
        return self.points.size


@dataclass(frozen=True, eq=False)
class Path:
    grid: TimeGrid
    values: Array

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != len(self.grid):
            raise ValueError("path values do not match the grid")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(np.prod(self.values.shape[1:]))

    def increment(self, i, j) -> Array:
        return self.values[j] - self.values[i]

    def window(self, i0: int, i1: int) -> "Path":
        return Path(self.grid.window(i0, i1), self.values[i0 : i1 + 1])


# ---------------------------------------------------------------------------
# two-parameter increments


@dataclass(frozen=True, eq=False)
class TwoParamIncrement:
    """A map ``(i, j) -> g_{t_i t_j}`` with values of fixed ``shape``.

    ``fn`` receives integer arrays of equal shape and returns
    ``(*idx.shape, *shape)``.
    """

    grid: TimeGrid
    shape: tuple
    fn: Callable[[Array, Array], Array]

    def __call__(self, i, j) -> Array:
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        i, j = np.broadcast_arrays(i, j)
        return self.fn(i, j)

    @classmethod
    def from_path(cls, path: Path) -> "TwoParamIncrement":
        vals = path.values
        return cls(path.grid, vals.shape[1:], lambda i, j: vals[j] - vals[i])

    @classmethod
    def from_dense(cls, grid: TimeGrid, table: Array) -> "TwoParamIncrement":
        table = np.asarray(table, dtype=float)
        if table.shape[:2] != (len(grid), len(grid)):
            raise ValueError("dense table must be (n+1, n+1, ...)")
        return cls(grid, table.shape[2:], lambda i, j: table[i, j])

    @classmethod
    def from_cumulative(cls, grid: TimeGrid, base: Array, cumulative: Array) -> "TwoParamIncrement":
        """Second level recovered from ``C_j = Z_{0 t_j}`` through Chen.

        ``Z_{ij} = C_j - C_i - (X_i - X_0) (x) (X_j - X_i)``.
        """
        base = np.asarray(base, dtype=float)
        cumulative = np.asarray(cumulative, dtype=float)
        x0 = base - base[0]

        def fn(i, j):
            return cumulative[j] - cumulative[i] - x0[i][..., :, None] * (base[j] - base[i])[..., None, :]

        return cls(grid, cumulative.shape[1:], fn)

    def dense(self) -> Array:
        n1 = len(self.grid)
        i, j = np.meshgrid(np.arange(n1), np.arange(n1), indexing="ij")
        return self(i, j)

    def __sub__(self, other: "TwoParamIncrement") -> "TwoParamIncrement":
        a, b = self.fn, other.fn
        return TwoParamIncrement(self.grid, self.shape, lambda i, j: a(i, j) - b(i, j))


def chen_assemble(increments: Array, second_steps: Array) -> Array:
    """Cumulative second level from per-step data.

    ``increments`` is ``(..., n, m)`` and ``second_steps`` ``(..., n, m, m)``.
    Returns ``(..., n+1, m, m)`` with ``C_0 = 0`` and
    ``C_{j+1} = C_j + X_{0 t_j} (x) dX_j + S_j``.
    """
    inc = np.asarray(increments, dtype=float)
    steps = np.asarray(second_steps, dtype=float)
    lead = inc.shape[:-2]
    n, m = inc.shape[-2:]
    x0 = np.concatenate([np.zeros(lead + (1, m)), np.cumsum(inc, axis=-2)[..., :-1, :]], axis=-2)
    terms = x0[..., :, :, None] * inc[..., :, None, :] + steps
    out = np.zeros(lead + (n + 1, m, m))
    np.cumsum(terms, axis=-3, out=out[..., 1:, :, :])
    return out


# ---------------------------------------------------------------------------
# rough paths


@dataclass(frozen=True, eq=False)
class RoughPath:
    z: Path
    zz: TwoParamIncrement
    alpha: float = 0.45
    steps: tuple | None = None  # exact per-step (dZ, dZZ) when built from steps

    def __post_init__(self):
        m = self.z.values.shape[1]
        if self.z.values.ndim != 2:
            raise ValueError("rough path values must be (n+1, m)")
        if tuple(self.zz.shape) != (m, m):
            raise ValueError("second level must be m x m")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def grid(self) -> TimeGrid:
        return self.z.grid

    @property
    def m(self) -> int:
        return self.z.values.shape[1]

    def increment(self, i, j) -> Array:
        return self.z.increment(i, j)

    def area(self, i, j) -> Array:
        return self.zz(i, j)

    def step_data(self) -> tuple[Array, Array]:
        if self.steps is not None:
            return self.steps
        i = np.arange(self.grid.n)
        return self.increment(i, i + 1), self.area(i, i + 1)

    @classmethod
    def from_steps(cls, grid: TimeGrid, start: Array, increments: Array, second_steps: Array, alpha: float = 0.45) -> "RoughPath":
        start = np.asarray(start, dtype=float).reshape(-1)
        inc = np.asarray(increments, dtype=float)
        values = np.concatenate([start[None, :], start[None, :] + np.cumsum(inc, axis=0)], axis=0)
        steps = np.asarray(second_steps, dtype=float)
        cum = chen_assemble(inc, steps)
        return cls(Path(grid, values), TwoParamIncrement.from_cumulative(grid, values, cum), alpha, (inc, steps))

    def window(self, i0: int, i1: int) -> "RoughPath":
        g = self.grid.window(i0, i1)
        zz = self.zz
        return RoughPath(
            self.z.window(i0, i1),
            TwoParamIncrement(g, zz.shape, lambda i, j: zz(i + i0, j + i0)),
            self.alpha,
            None if self.steps is None else (self.steps[0][i0:i1], self.steps[1][i0:i1]),
        )


def lift_smooth_path(z: Path, alpha: float = 0.45) -> RoughPath:
    """Canonical lift of the piecewise-linear interpolation of ``z``."""
    dz = np.diff(z.values, axis=0)
    steps = 0.5 * dz[:, :, None] * dz[:, None, :]
    return RoughPath.from_steps(z.grid, z.values[0], dz, steps, alpha)


# ---------------------------------------------------------------------------
# defects, seminorms, p-variation


@dataclass(frozen=True)
class DefectReport:
    label: str
    value: float
    scales: tuple = ()
    maxima: tuple = ()
    exponent: float = math.nan

    def passes(self, threshold: float) -> bool:
        return bool(self.exponent >= threshold)


def fit_exponent(scales: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(values) against log(scales).

    Zero values are dropped; if all are zero the remainder vanishes faster
    than any power and ``inf`` is returned.
    """
    s = np.asarray(scales, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = v > 0
    if not np.any(keep):
        return math.inf
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(s[keep]), np.log(v[keep]), 1)[0])


def _norms(vals: Array, nd: int) -> Array:
    if nd == 0:
        return np.abs(vals)
    flat = vals.reshape(vals.shape[: vals.ndim - nd] + (-1,))
    return np.sqrt(np.sum(flat * flat, axis=-1))


def dyadic_defect(
    label: str,
    fn: Callable[[Array, Array], Array],
    grid: TimeGrid,
    levels: Sequence[int] | None = None,
    value_ndim: int = 1,
    norm: Callable[[Array], Array] | None = None,
) -> DefectReport:
    """Max of ``|fn(i, i + 2^k)|`` over ``i`` for each dyadic lag ``2^k``."""
    n = grid.n
    if levels is None:
        levels = [k for k in range(0, 64) if 2**k <= n]
    scales, maxima = [], []
    for k in levels:
        lag = 2**k
        if lag > n:
            continue
        i = np.arange(0, n - lag + 1)
        vals = fn(i, i + lag)
        nv = norm(vals) if norm is not None else _norms(vals, value_ndim)
        scales.append(float(np.max(grid.points[i + lag] - grid.points[i])))
        maxima.append(float(np.max(nv)))
    return DefectReport(label, max(maxima) if maxima else 0.0, tuple(scales), tuple(maxima), fit_exponent(scales, maxima))


def _as_increment(g) -> TwoParamIncrement:
    return TwoParamIncrement.from_path(g) if isinstance(g, Path) else g


def holder_seminorm(g, alpha: float, h: float | None = None, norm=None) -> float:
    """``sup_{|t-s| <= h} |g_st| / |t-s|^alpha`` over grid pairs."""
    g = _as_increment(g)
    pts = g.grid.points
    n = g.grid.n
    h = math.inf if h is None else h
    nd = len(g.shape)
    best = 0.0
    for lag in range(1, n + 1):
        i = np.arange(0, n - lag + 1)
        dt = pts[i + lag] - pts[i]
        ok = dt <= h * (1 + 1e-12)
        if not np.any(ok):
            if np.all(dt > h):
                break
            continue
        i = i[ok]
        vals = g(i, i + lag)
        nv = norm(vals) if norm is not None else _norms(vals, nd)
        best = max(best, float(np.max(nv / dt[ok] ** alpha)))
    return best


def p_variation_row(g, p: float, start: int = 0, stop: int | None = None, norm=None) -> Array:
    """``w(t_start, t_j) = [[g]]_{p,[t_start,t_j]}^p`` for all ``j >= start``.

    Exact dynamic programme over grid-subordinate partitions, O(L^2).
    """
    g = _as_increment(g)
    stop = g.grid.n if stop is None else stop
    L = stop - start
    nd = len(g.shape)
    best = np.zeros(L + 1)
    for jj in range(1, L + 1):
        i = np.arange(start, start + jj)
        vals = g(i, np.full_like(i, start + jj))
        nv = norm(vals) if norm is not None else _norms(vals, nd)
        best[jj] = np.max(best[:jj] + nv**p)
    return best


def p_variation(g, p: float, start: int = 0, stop: int | None = None, norm=None) -> float:
    if p < 1:
        raise ValueError("p-variation needs p >= 1")
    return float(p_variation_row(g, p, start, stop, norm)[-1] ** (1.0 / p))


# ---------------------------------------------------------------------------
# controls and greedy partitions


@dataclass(eq=False)
class ControlFn:
    """A control ``w(s, t)``.

    Grid controls additionally supply ``row(i)`` returning ``w(t_i, t_j)`` for
    every ``j >= i``; the greedy partition uses it to avoid bisection.
    """

    evaluator: Callable[[float, float], float]
    superadditive: bool = True
    grid: TimeGrid | None = None
    row: Callable[[int], Array] | None = None

    def __call__(self, s: float, t: float) -> float:
        return float(self.evaluator(s, t))

    @classmethod
    def from_p_variation(cls, g, p: float, norm=None) -> "ControlFn":
        g = _as_increment(g)
        grid = g.grid
        cache: dict[int, Array] = {}

        def row(i: int) -> Array:
            if i not in cache:
                cache[i] = p_variation_row(g, p, i, norm=norm)
            return cache[i]

        def ev(s, t):
            i, j = int(grid.index_of(s)), int(grid.index_of(t))
            if j <= i:
                return 0.0
            return float(row(i)[j - i])

        return cls(ev, True, grid, row)


@dataclass(frozen=True)
class GreedyPartition:
    times: tuple
    n_beta: int
    warnings: tuple = ()


def _superadditivity_warnings(w: ControlFn, s: float, t: float, seed: int = 0) -> list[str]:
    rng = np.random.default_rng(seed)
    out = []
    if w.grid is not None:
        pts = w.grid.points
        pool = pts[(pts >= s - 1e-12) & (pts <= t + 1e-12)]
        if pool.size < 3:
            return out
        draws = [np.sort(rng.choice(pool, 3, replace=False)) for _ in range(8)]
    else:
        draws = [np.sort(rng.uniform(s, t, 3)) for _ in range(8)]
    for a, b, c in draws:
        lhs = w(a, b) + w(b, c)
        rhs = w(a, c)
        if lhs > rhs + 1e-9 * max(1.0, abs(rhs)):
            out.append(f"superadditivity violated on ({a:.6g}, {b:.6g}, {c:.6g}): {lhs:.6g} > {rhs:.6g}")
    return out


def greedy_partition(w: ControlFn, beta: float, s: float, t: float, max_points: int = 1_000_000) -> GreedyPartition:
    """Greedy sequence ``tau_{n+1} = inf{r : w(tau_n, r) >= beta} ^ t``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not t > s:
        raise ValueError("need s < t")
    warns = _superadditivity_warnings(w, s, t)
    times = [s]
    if w.grid is not None and w.row is not None:
        grid = w.grid
        i, end = int(grid.index_of(s)), int(grid.index_of(t))
        while i < end:
            r = w.row(i)[: end - i + 1]
            hit = np.nonzero(r >= beta)[0]
            hit = hit[hit > 0]
            i = i + int(hit[0]) if hit.size else end
            times.append(float(grid.points[i]))
            if len(times) > max_points:
                break
    else:
        tol = 1e-10 * max(abs(t), abs(t - s))
        tau = s
        while tau < t:
            if w(tau, t) < beta:
                tau = t
            else:
                lo, hi = tau, t
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    if w(tau, mid) >= beta:
                        hi = mid
                    else:
                        lo = mid
                tau = hi
            times.append(tau)
            if len(times) > max_points:
                raise RuntimeError("greedy partition did not terminate")
    n_beta = sum(1 for x in times if x < t) - 1
    return GreedyPartition(tuple(times), n_beta, tuple(warns))


# ---------------------------------------------------------------------------
# algebraic defects


def _check_indices(n1: int, max_points: int, seed: int) -> Array:
    if n1 <= max_points:
        return np.arange(n1)
    rng = np.random.default_rng(seed)
    inner = rng.choice(np.arange(1, n1 - 1), max_points - 2, replace=False)
    return np.unique(np.concatenate([[0, n1 - 1], inner]))


def chen_defect(rp: RoughPath, max_points: int = 48, seed: int = 0) -> DefectReport:
    """``max |Z_st - Z_su - Z_ut - Z_su (x) Z_ut|`` over grid triples.

    Grids longer than ``max_points`` are checked on a seeded subset of
    indices (always containing both endpoints).
    """
    idx = _check_indices(len(rp.grid), max_points, seed)
    a, b, c = np.meshgrid(idx, idx, idx, indexing="ij")
    keep = (a < b) & (b < c)
    s, u, t = a[keep], b[keep], c[keep]
    if s.size == 0:
        return DefectReport("chen", 0.0)
    d = rp.area(s, t) - rp.area(s, u) - rp.area(u, t) - rp.increment(s, u)[:, :, None] * rp.increment(u, t)[:, None, :]
    return DefectReport("chen", float(np.max(_norms(d, 2))))


def symmetric_defect(rp: RoughPath, i, j) -> Array:
    """``1/2 Z_st (x) Z_st - Sym(Z_st)``; equals ``(t-s)/2 Id`` in mean for Ito lifts."""
    z = rp.increment(i, j)
    zz = rp.area(i, j)
    return 0.5 * z[..., :, None] * z[..., None, :] - 0.5 * (zz + np.swapaxes(zz, -1, -2))


def geometricity_defect(rp: RoughPath, max_points: int = 128, seed: int = 0) -> DefectReport:
    idx = _check_indices(len(rp.grid), max_points, seed)
    a, b = np.meshgrid(idx, idx, indexing="ij")
    keep = a < b
    d = symmetric_defect(rp, a[keep], b[keep])
    return DefectReport("geometricity", float(np.max(_norms(d, 2))) if d.size else 0.0)
