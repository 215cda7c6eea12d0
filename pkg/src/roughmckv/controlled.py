"""Controlled paths, rough integrals and integral lifts.

Index convention: a controlled integrand ``Y`` has values ``(e, m)`` and its
Gubinelli derivative ``Y'`` has values ``(e, m, m)`` with
``Y'[:, k, l] = dY^k / dZ^l``. The rough-integral germ pairs ``Y'[:, k, l]``
with ``ZZ[l, k] = int Z^l dZ^k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DefectReport,
    Path,
    RoughPath,
    TwoParamIncrement,
    dyadic_defect,
    holder_seminorm,
)
from .sewing import Germ, sew

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class ControlledPath:
    y: Path
    y_prime: Path
    base: RoughPath

    def __post_init__(self):
        n1 = len(self.base.grid)
        if self.y.values.shape[0] != n1 or self.y_prime.values.shape[0] != n1:
            raise ValueError("grid mismatch between controlled path and its base")
        if self.y_prime.values.shape[1:] != self.y.values.shape[1:] + (self.base.m,):
            raise ValueError("derivative shape must be value shape + (m,)")

    @classmethod
    def from_arrays(cls, y: Array, y_prime: Array, base: RoughPath) -> "ControlledPath":
        return cls(Path(base.grid, y), Path(base.grid, y_prime), base)

    def remainder(self) -> TwoParamIncrement:
        y, yp, z = self.y.values, self.y_prime.values, self.base

        def fn(i, j):
            dz = _expand(z.increment(i, j), yp.ndim - 2)
            return y[j] - y[i] - np.sum(yp[i] * dz, axis=-1)

        return TwoParamIncrement(self.base.grid, y.shape[1:], fn)

    def norm(self, alpha: float | None = None, h: float | None = None) -> float:
        """``|Y_0| + [Y']_{alpha,h} + [Y#]_{2 alpha,h}``."""
        a = self.base.alpha if alpha is None else alpha
        return (
            float(np.linalg.norm(self.y.values[0]))
            + holder_seminorm(self.y_prime, a, h)
            + holder_seminorm(self.remainder(), 2 * a, h)
        )


def _expand(z: Array, extra: int) -> Array:
    # insert singleton axes between the batch axis and the last (m) axis
    return z.reshape(z.shape[:-1] + (1,) * extra + z.shape[-1:])


def _check(yp: ControlledPath, z: RoughPath) -> None:
    if len(yp.base.grid) != len(z.grid) or not np.array_equal(yp.base.grid.points, z.grid.points):
        raise ValueError("grid mismatch between integrand and rough path")
    if yp.y.values.ndim != 3:
        raise ValueError("integrand values must be (n+1, e, m)")


def integral_germ_values(y: Array, yp: Array, z: RoughPath, i: Array, j: Array) -> Array:
    """``Y_s Z_st + Y'_s ZZ_st`` with the ``Y'^{k,l} ZZ^{l,k}`` pairing."""
    return np.einsum("...ek,...k->...e", y[i], z.increment(i, j)) + np.einsum("...ekl,...lk->...e", yp[i], z.area(i, j))


def rough_integral_germ(yp: ControlledPath) -> Germ:
    y, ypr, z = yp.y.values, yp.y_prime.values, yp.base
    return Germ.on_grid(z.grid, lambda i, j: integral_germ_values(y, ypr, z, i, j), claimed_zeta=3 * z.alpha)


def rough_integral(yp: ControlledPath, z: RoughPath) -> tuple[Path, ControlledPath]:
    """``X = int Y dZ`` with ``X_0 = 0``; returns ``X`` and ``(X, Y)``."""
    _check(yp, z)
    res = sew(rough_integral_germ(yp), z.grid, refine_levels=0)
    x = res.integral
    return x, ControlledPath(x, Path(z.grid, yp.y.values), z)


def integral_remainder_report(yp: ControlledPath, z: RoughPath, levels=(1, 2, 3, 4, 5, 6)) -> DefectReport:
    """Dyadic maxima of ``delta X - germ`` on coarse pairs.

    Lag one is skipped by default: there the sum of germs is the germ itself.
    """
    x, _ = rough_integral(yp, z)
    y, ypr = yp.y.values, yp.y_prime.values
    xv = x.values

    def fn(i, j):
        return xv[j] - xv[i] - integral_germ_values(y, ypr, z, i, j)

    return dyadic_defect("rough integral remainder", fn, z.grid, levels)


def lift_steps(y: Array, yp: Array, dz: Array, dzz: Array) -> tuple[Array, Array]:
    """Per-step first and second level of the integral lift.

    The second level is ``1/2 X (x) X + Y (ZZ - 1/2 Z (x) Z) Y^T``. It agrees
    with the local expansion ``X_s (x) Y^k Z^k + (Y^l (x) Y^k + X_s (x) Y^{k,l})
    ZZ^{l,k} - X_s (x) X_st`` up to ``O(|t-s|^{3 alpha})`` and keeps the
    symmetric part exact, so weakly geometric input stays weakly geometric on
    the grid and not only in the limit. Leading axes of all arrays are batch
    axes.
    """
    x = np.einsum("...ek,...k->...e", y, dz) + np.einsum("...ekl,...lk->...e", yp, dzz)
    a = dzz - 0.5 * dz[..., :, None] * dz[..., None, :]
    xx = 0.5 * x[..., :, None] * x[..., None, :] + np.einsum("...al,...lk,...bk->...ab", y, a, y)
    return x, xx


def integral_lift(yp: ControlledPath, z: RoughPath) -> RoughPath:
    _check(yp, z)
    dz, dzz = z.step_data()
    n = z.grid.n
    x, xx = lift_steps(yp.y.values[:n], yp.y_prime.values[:n], dz, dzz)
    e = x.shape[1]
    return RoughPath.from_steps(z.grid, np.zeros(e), x, xx, z.alpha)
