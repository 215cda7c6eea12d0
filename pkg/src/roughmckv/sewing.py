"""Sewing of two-parameter germs by dyadic refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DefectReport, Path, TimeGrid, TwoParamIncrement, dyadic_defect, fit_exponent

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class Germ:
    """``evaluator(s, t)`` takes equal-shape time arrays and returns ``(..., d)``."""

    evaluator: Callable[[Array, Array], Array]
    claimed_zeta: float = 1.5

    def __call__(self, s, t) -> Array:
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        out = np.asarray(self.evaluator(s, t), dtype=float)
        if out.ndim == s.ndim:
            out = out[..., None]
        return out

    @classmethod
    def on_grid(cls, grid: TimeGrid, fn: Callable[[Array, Array], Array], claimed_zeta: float = 1.5) -> "Germ":
        """Germ defined through grid indices; times must lie on ``grid``."""

        def ev(s, t):
            return fn(grid.index_of(s), grid.index_of(t))

        return cls(ev, claimed_zeta)

    def __add__(self, other: "Germ") -> "Germ":
        a, b = self.evaluator, other.evaluator
        return Germ(lambda s, t: a(s, t) + b(s, t), min(self.claimed_zeta, other.claimed_zeta))

    def scaled(self, c: float) -> "Germ":
        a = self.evaluator
        return Germ(lambda s, t: c * a(s, t), self.claimed_zeta)


@dataclass(frozen=True, eq=False)
class SewResult:
    integral: Path
    natural_remainder: TwoParamIncrement
    fitted_zeta: float
    report: DefectReport


def sew(g: Germ, grid: TimeGrid, refine_levels: int = 6) -> SewResult:
    """Sum the germ over the ``2^L``-fold refinement of ``grid``.

    Fine sums are accumulated inside each coarse interval first, then across
    coarse intervals, so coarse values do not depend on the refinement of
    unrelated intervals.
    """
    if refine_levels < 0:
        raise ValueError("refine_levels must be >= 0")
    fine = grid.refine(refine_levels)
    s, t = fine.points[:-1], fine.points[1:]
    vals = g(s, t)
    bad = ~np.all(np.isfinite(vals.reshape(vals.shape[0], -1)), axis=1)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise FloatingPointError(f"non-finite germ value at (s, t) = ({s[k]!r}, {t[k]!r})")
    r = 2**refine_levels
    per_interval = vals.reshape((grid.n, r) + vals.shape[1:]).sum(axis=1)
    integral = np.zeros((grid.n + 1,) + vals.shape[1:])
    np.cumsum(per_interval, axis=0, out=integral[1:])
    pts = grid.points

    def rem(i, j):
        return (integral[j] - integral[i]) - g(pts[i], pts[j])

    remainder = TwoParamIncrement(grid, vals.shape[1:], rem)
    report = dyadic_defect("sewing remainder", rem, grid, value_ndim=vals.ndim - 1)
    return SewResult(Path(grid, integral), remainder, report.exponent, report)


def scaling_exponent(defects: DefectReport) -> float:
    """Least-squares log-log slope of per-scale maxima; ``inf`` if all vanish."""
    if len(defects.scales) < 3:
        raise ValueError("need at least 3 dyadic levels")
    if all(m == 0 for m in defects.maxima):
        return math.inf
    return fit_exponent(defects.scales, defects.maxima)
