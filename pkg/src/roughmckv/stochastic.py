"""Brownian sampling, Ito/Stratonovich lifts and the mixed stochastic-rough driver.

Random numbers are addressed by ``(seed, stream_id, level)``: every dyadic
level of the Brownian bridge construction of every stream reads its own
Philox counter block, so refining a grid never changes coarse values and
stream labels can be permuted freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .controlled import ControlledPath, integral_lift, lift_steps
from .core import Path, RoughPath, TimeGrid, chen_assemble
from .drivers import FieldRoughPath, RoughDriver, driver_control_row, driver_from_rough_path, pair_norm_tables
from .fields import GaussianBasis, ScalarFn

Array = np.ndarray

_MASK = (1 << 64) - 1


def stream_generator(seed: int, stream_id: int, block: int = 0) -> np.random.Generator:
    key = np.array([seed & _MASK, stream_id & _MASK], dtype=np.uint64)
    counter = np.array([0, 0, block & _MASK, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True, eq=False)
class BrownianPath:
    path: Path
    seed: int
    stream_id: int

    @property
    def grid(self) -> TimeGrid:
        return self.path.grid

    @property
    def values(self) -> Array:
        return self.path.values

    @property
    def increments(self) -> Array:
        return np.diff(self.path.values, axis=0)


def _bridge_values(d: int, level: int, T: float, t0: float, seed: int, stream_id: int) -> Array:
    n = 2**level
    w = np.zeros((n + 1, d))
    w[n] = math.sqrt(T - t0) * stream_generator(seed, stream_id, 0).standard_normal(d)
    for lvl in range(1, level + 1):
        stride = n >> lvl  # index distance from a midpoint to its neighbours
        count = 2 ** (lvl - 1)
        span = (T - t0) / count
        xi = stream_generator(seed, stream_id, lvl).standard_normal((count, d))
        mid = np.arange(stride, n, 2 * stride)
        w[mid] = 0.5 * (w[mid - stride] + w[mid + stride]) + math.sqrt(span / 4.0) * xi
    return w


def sample_brownian(d: int, grid: TimeGrid, seed: int, stream_id: int = 0) -> BrownianPath:
    """Brownian motion on a uniform dyadic grid by Brownian-bridge refinement."""
    if grid.dyadic_level is None:
        raise ValueError("Brownian sampling needs a uniform dyadic grid")
    vals = _bridge_values(d, grid.dyadic_level, grid.T, grid.t0, seed, stream_id)
    return BrownianPath(Path(grid, vals), seed, stream_id)


def sample_brownian_batch(d: int, grid: TimeGrid, seed: int, stream_ids: Sequence[int]) -> Array:
    """``(N, n+1, d)`` Brownian paths, one stream each."""
    if grid.dyadic_level is None:
        raise ValueError("Brownian sampling needs a uniform dyadic grid")
    return np.stack([_bridge_values(d, grid.dyadic_level, grid.T, grid.t0, seed, int(s)) for s in stream_ids])


def brownian_lift(w: BrownianPath, mode: str = "stratonovich", alpha: float = 0.4) -> RoughPath:
    """Ito (left-point) or Stratonovich (midpoint) lift, assembled through Chen.

    Per step the Ito second level is 0 and the Stratonovich one ``dW dW / 2``.
    """
    dw = w.increments
    if mode == "ito":
        steps = np.zeros(dw.shape + (dw.shape[1],))
    elif mode == "stratonovich":
        steps = 0.5 * dw[:, :, None] * dw[:, None, :]
    else:
        raise ValueError("mode must be 'ito' or 'stratonovich'")
    return RoughPath.from_steps(w.grid, w.values[0], dw, steps, alpha)


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True, eq=False)
class KernelFamily:
    """Rank-limited two-point kernels ``k^j(y, x) = sum_a f_a(y) sum_k C[a, j, k] phi_k(x)``.

    ``y`` is the particle (law) variable and ``x`` the spatial variable, so
    freezing a law ``mu`` gives the field with coefficients
    ``sum_a mu(f_a) C[a, j, :]``.
    """

    basis: GaussianBasis
    slots: tuple
    sigma: Array  # (A, dW, K)
    beta: Array  # (A, m, K)

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        A = len(self.slots)
        if s.ndim != 3 or b.ndim != 3 or s.shape[0] != A or b.shape[0] != A:
            raise ValueError("kernel coefficient arrays must be (A, directions, K)")
        if s.shape[2] != self.basis.K or b.shape[2] != self.basis.K:
            raise ValueError("kernel coefficients do not match the basis")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "slots", tuple(self.slots))

    @property
    def noise_dim(self) -> int:
        return self.sigma.shape[1]

    @property
    def m(self) -> int:
        return self.beta.shape[1]

    def slot_means(self, particles: Array) -> Array:
        """``mu(f_a)`` for particles ``(N, ..., d)``; returns ``(..., A)``."""
        return np.stack([np.mean(f.value(particles), axis=0) for f in self.slots], axis=-1)

    def frozen_sigma(self, particles: Array) -> Array:
        return np.einsum("...a,ajk->...jk", self.slot_means(particles), self.sigma)

    def frozen_beta(self, particles: Array) -> Array:
        return np.einsum("...a,ajk->...jk", self.slot_means(particles), self.beta)

    def beta_derivative(self, paths: Array, gamma: Array) -> Array:
        """``beta(mu)'^{j,i} = mu(grad_1 beta^j . gamma^i)`` as ``(n+1, m_j, m_i, K)``.

        ``paths`` is ``(N, n+1, d)``; ``gamma`` holds field coefficients
        ``(n+1, m, K)``.
        """
        g = self.basis.scalar(paths)[0]  # (N, n+1, K)
        gam = np.einsum("ntk,tik,kd->ntid", g, gamma, self.basis.directions)
        moments = np.stack([np.mean(np.einsum("ntd,ntid->nti", f.grad(paths), gam), axis=0) for f in self.slots], axis=1)
        return np.einsum("tai,ajk->tjik", moments, self.beta)

    def lipschitz(self, which: str = "sigma") -> float:
        """Bound on ``|k(mu) - k(nu)|_{C_b^0} / W_1(mu, nu)`` on the probe lattice."""
        C = self.sigma if which == "sigma" else self.beta
        total = 0.0
        for a, f in enumerate(self.slots):
            if f.kind == "const":
                continue
            total += f.lipschitz * float(np.max(self.basis.lattice_norm(C[a], 0)))
        return total


def controlled_beta(k: KernelFamily, paths: Array, gamma: Array, z: RoughPath) -> ControlledPath:
    """Coefficients of ``beta(mu_t)`` as a controlled path ``(n+1, K, m)``."""
    y = np.swapaxes(k.frozen_beta(paths), -1, -2)
    yp = np.moveaxis(k.beta_derivative(paths, gamma), -1, 1)  # (n+1, K, m_j, m_i)
    return ControlledPath.from_arrays(y, yp, z)


# ---------------------------------------------------------------------------
# drivers


def w_sigma_steps(sigma_coeffs: Array, dw: Array) -> Array:
    """Left-point coefficient increments ``sum_j sigma^j(t_i) dW^j_i``; batched over leading axes of ``dw``."""
    n = dw.shape[-2]
    return np.einsum("njk,...nj->...nk", sigma_coeffs[:n], dw)


def mixed_steps(a_w: Array, a_z: Array, b_z: Array) -> tuple[Array, Array]:
    """Per-step coefficients of ``W^sigma + Z^beta``.

    Ito left-point sums leave the ``W W`` and ``Z dW`` parts zero inside one
    step; integration by parts puts ``a_w (x) a_z`` into the ``W dZ`` part.
    """
    return a_z + a_w, b_z + a_w[..., :, None] * a_z[..., None, :]


def build_w_sigma(basis: GaussianBasis, sigma_coeffs: Array, w: BrownianPath, alpha: float = 0.4) -> RoughDriver:
    """Ito driver ``W^sigma_st = int sigma_r dW_r`` and its second level."""
    a = w_sigma_steps(np.asarray(sigma_coeffs, dtype=float), w.increments)
    b = np.zeros(a.shape + (a.shape[-1],))
    a, b = mixed_steps(a, np.zeros_like(a), b)
    return RoughDriver(basis, RoughPath.from_steps(w.grid, np.zeros(basis.K), a, b, alpha))


def build_z_beta(basis: GaussianBasis, beta_controlled: ControlledPath, z: RoughPath) -> RoughDriver:
    """``Z^beta = int beta dZ`` with second level from the integral lift."""
    return driver_from_rough_path(FieldRoughPath(basis, integral_lift(beta_controlled, z)))


def z_beta_steps(beta_controlled: ControlledPath, z: RoughPath) -> tuple[Array, Array]:
    dz, dzz = z.step_data()
    n = z.grid.n
    return lift_steps(beta_controlled.y.values[:n], beta_controlled.y_prime.values[:n], dz, dzz)


def build_mixed_driver(k: KernelFamily, paths: Array, gamma: Array, w: BrownianPath, z: RoughPath) -> RoughDriver:
    """Driver of ``sigma(mu) dW + beta(mu) dZ`` for a frozen law.

    ``paths`` ``(N, n+1, d)`` are the law's particles, ``gamma`` ``(n+1, m, K)``
    its Gubinelli field.
    """
    sig = k.frozen_sigma(paths)
    a_w = w_sigma_steps(sig, w.increments)
    a_z, b_z = z_beta_steps(controlled_beta(k, paths, gamma, z), z)
    a, b = mixed_steps(a_w, a_z, b_z)
    return RoughDriver(k.basis, RoughPath.from_steps(z.grid, np.zeros(k.basis.K), a, b, min(z.alpha, 0.5)))


def mixed_cross_terms(a_w: Array, a_z: Array) -> tuple[Array, Array]:
    """Coefficient forms of ``int Z^beta_{0r} dW^sigma_r`` and ``int W^sigma_{0r} dZ^beta_r`` over the whole grid.

    Batched over leading axes; returns two ``(..., K, K)`` arrays.
    """
    z0 = np.cumsum(a_z, axis=-2) - a_z  # Z_{0 t_i}
    w1 = np.cumsum(a_w, axis=-2)  # W_{0 t_{i+1}}
    zw = np.einsum("...nk,...nl->...kl", z0, a_w)
    wz = np.einsum("...nk,...nl->...kl", w1, a_z)
    return zw, wz


@dataclass(frozen=True)
class AccumulationStats:
    counts: Array
    histogram: dict
    tail_slope: float
    tail_intercept: float
    curvature: float
    concave: bool
    mgf: float
    r_values: Array
    log_survival: Array


def accumulation_count(d: RoughDriver, beta: float = 1.0, p: float | None = None, mode: str = "coef") -> int:
    """``N_beta(w_F, [0, T])`` by the greedy partition on grid indices."""
    p = p or 1.0 / d.alpha
    n = d.grid.n
    tables = pair_norm_tables(d, mode)
    i, count = 0, 0
    while True:
        row = driver_control_row(d, p, i, mode=mode, tables=tables)
        hit = np.nonzero(row[1:] >= beta)[0]
        if hit.size == 0:
            return count
        i = i + int(hit[0]) + 1
        if i >= n:
            return count
        count += 1


def accumulation_statistics(
    driver_samples: Sequence[RoughDriver],
    beta: float = 1.0,
    p: float | None = None,
    mode: str = "coef",
    min_count: int = 10,
    min_samples: int = 100,
) -> AccumulationStats:
    """Histogram of ``N`` and a Gaussian-tail fit ``log P(N > r) ~ a + b r^2``.

    Tail levels with fewer than ``min_count`` exceedances are dropped from the fit.
    """
    if len(driver_samples) < min_samples:
        raise ValueError(f"need at least {min_samples} driver samples, got {len(driver_samples)}")
    counts = np.array([accumulation_count(d, beta, p, mode) for d in driver_samples])
    vals, freq = np.unique(counts, return_counts=True)
    hist = {int(v): int(f) for v, f in zip(vals, freq)}
    rs, logs = [], []
    for r in range(int(counts.max()) + 1):
        exceed = int(np.sum(counts > r))
        if exceed < min_count:
            break
        rs.append(r)
        logs.append(math.log(exceed / counts.size))
    rs = np.array(rs, dtype=float)
    logs = np.array(logs)
    slope = intercept = curvature = math.nan
    if rs.size >= 2:
        slope, intercept = np.polyfit(rs**2, logs, 1)
    if rs.size >= 3:
        curvature = float(np.polyfit(rs, logs, 2)[0])
    concave = bool(rs.size >= 3 and curvature <= 0)
    mgf = float(np.mean(np.exp(counts.astype(float))))
    return AccumulationStats(counts, hist, float(slope), float(intercept), curvature, concave, mgf, rs, logs)
