"""Empirical path measures, Wasserstein distances and the McKean-Vlasov fixed point.

The common noise ``Z`` is one fixed rough path shared by all particles; each
particle owns a Brownian stream. Everything is conditional on ``Z``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .controlled import ControlledPath
from .core import ControlFn, Path, RoughPath, TimeGrid, greedy_partition, p_variation_row
from .fields import GaussianBasis, ScalarFn, default_probes
from .rde import davie_loop
from .stochastic import KernelFamily, controlled_beta, mixed_steps, sample_brownian_batch, w_sigma_steps, z_beta_steps

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class EmpiricalPathMeasure:
    grid: TimeGrid
    paths: Array  # (N, n+1, d)

    def __post_init__(self):
        p = np.asarray(self.paths, dtype=float)
        if p.ndim != 3 or p.shape[1] != len(self.grid):
            raise ValueError("paths must be (N, n+1, d) on the measure grid")
        if p.shape[0] < 1:
            raise ValueError("empty measure")
        object.__setattr__(self, "paths", p)

    @classmethod
    def constant(cls, grid: TimeGrid, x0: Array) -> "EmpiricalPathMeasure":
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        return cls(grid, np.repeat(x0[:, None, :], len(grid), axis=1))

    @property
    def N(self) -> int:
        return self.paths.shape[0]

    @property
    def d(self) -> int:
        return self.paths.shape[2]

    def marginal(self, i: int) -> Array:
        return self.paths[:, i]

    def mean(self) -> Array:
        return np.mean(self.paths, axis=0)

    def expect(self, f: ScalarFn) -> Array:
        """``t -> mu_t(f)`` on the grid."""
        return np.mean(f.value(self.paths), axis=0)

    def window(self, i0: int, i1: int) -> "EmpiricalPathMeasure":
        return EmpiricalPathMeasure(self.grid.window(i0, i1), self.paths[:, i0 : i1 + 1])


@dataclass(frozen=True, eq=False)
class ControlledMeasure:
    """A path law with its Gubinelli field ``gamma`` ``(n+1, m, K)``."""

    measure: EmpiricalPathMeasure
    gamma: Array
    basis: GaussianBasis
    z: RoughPath

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.shape != (len(self.measure.grid), self.z.m, self.basis.K):
            raise ValueError("gamma must be (n+1, m, K)")
        if not np.array_equal(self.measure.grid.points, self.z.grid.points):
            raise ValueError("grid mismatch between measure and rough path")
        object.__setattr__(self, "gamma", g)

    @classmethod
    def constant(cls, x0: Array, basis: GaussianBasis, z: RoughPath) -> "ControlledMeasure":
        meas = EmpiricalPathMeasure.constant(z.grid, x0)
        return cls(meas, np.zeros((len(z.grid), z.m, basis.K)), basis, z)

    def probe_path(self, phi: ScalarFn, martingale: tuple | None = None) -> ControlledPath:
        """``(mu(phi), mu(grad phi . gamma))`` as a controlled path in ``R^1``.

        ``martingale = (sigma, dw)`` with frozen sigma coefficients
        ``(n+1, dW, K)`` and particle increments ``(N, n, dW)`` subtracts the
        empirical Ito sum ``mean_i sum_k grad phi(x^i) . sigma(x^i) dW^i_k``.
        It has mean zero, so the estimate of the law is unchanged while the
        ``sqrt(h / N)`` Monte Carlo noise of the increments drops out.
        """
        paths = self.measure.paths
        y = np.mean(phi.value(paths), axis=0)[:, None]
        if martingale is not None:
            sig, dw = martingale
            n = paths.shape[1] - 1
            left = paths[:, :-1]
            g = self.basis.scalar(left)[0]  # (N, n, K)
            fields = np.einsum("ntk,tjk,kd->ntjd", g, np.asarray(sig)[:n], self.basis.directions)
            inc = np.einsum("ntd,ntjd,ntj->nt", phi.grad(left), fields, np.asarray(dw))
            y = y - np.concatenate([[0.0], np.cumsum(np.mean(inc, axis=0))])[:, None]
        g = self.basis.scalar(paths)[0]
        gam = np.einsum("ntk,tik,kd->ntid", g, self.gamma, self.basis.directions)
        yp = np.mean(np.einsum("ntd,ntid->nti", phi.grad(paths), gam), axis=0)[:, None, :]
        return ControlledPath.from_arrays(y, yp, self.z)

    def window(self, i0: int, i1: int) -> "ControlledMeasure":
        return ControlledMeasure(self.measure.window(i0, i1), self.gamma[i0 : i1 + 1], self.basis, self.z.window(i0, i1))


@dataclass(frozen=True)
class ParticleNoise:
    """Brownian streams ``stream_ids`` under one seed; one stream per particle."""

    seed: int
    stream_ids: tuple
    noise_dim: int = 1

    @classmethod
    def for_particles(cls, N: int, seed: int = 0, noise_dim: int = 1, offset: int = 0) -> "ParticleNoise":
        return cls(seed, tuple(range(offset, offset + N)), noise_dim)

    def increments(self, grid: TimeGrid) -> Array:
        """``(N, n, noise_dim)`` Brownian increments on ``grid``."""
        w = sample_brownian_batch(self.noise_dim, grid, self.seed, self.stream_ids)
        return np.diff(w, axis=1)


# ---------------------------------------------------------------------------
# Wasserstein distances


@dataclass(frozen=True)
class WassersteinResult:
    value: float
    method: str
    entropic_gap: float = 0.0


def _as_samples(a) -> Array:
    if isinstance(a, EmpiricalPathMeasure):
        return a.paths
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def path_distance_matrix(a: Array, b: Array, alpha: float | None = None, grid: TimeGrid | None = None) -> Array:
    """Pairwise distances; for paths ``(N, n+1, d)`` the sup norm, or with
    ``alpha`` the Hölder norm ``|x_0 - y_0| + [x - y]_alpha``."""
    if a.ndim == 2:
        return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    diff = a[:, None] - b[None, :]  # (Na, Nb, n+1, d)
    if alpha is None:
        return np.max(np.linalg.norm(diff, axis=-1), axis=-1)
    pts = grid.points
    out = np.linalg.norm(diff[:, :, 0], axis=-1)
    n = diff.shape[2] - 1
    best = np.zeros(out.shape)
    for lag in range(1, n + 1):
        inc = np.linalg.norm(diff[:, :, lag:] - diff[:, :, :-lag], axis=-1)
        dt = pts[lag:] - pts[:-lag]
        best = np.maximum(best, np.max(inc / dt**alpha, axis=-1))
    return out + best


def _sinkhorn(cost: Array, eps_rel: float = 1e-3, iters: int = 5000) -> tuple[float, float]:
    n, m = cost.shape
    scale = float(np.max(cost)) or 1.0
    eps = eps_rel * scale
    loga = np.full(n, -math.log(n))
    logb = np.full(m, -math.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    from scipy.special import logsumexp

    for _ in range(iters):
        f_old = f
        f = -eps * logsumexp((g[None, :] - cost) / eps + logb[None, :], axis=1)
        g = -eps * logsumexp((f[:, None] - cost) / eps + loga[:, None], axis=0)
        if np.max(np.abs(f - f_old)) < 1e-12 * scale:
            break
    plan = np.exp((f[:, None] + g[None, :] - cost) / eps + loga[:, None] + logb[None, :])
    primal = float(np.sum(plan * cost))
    dual = float(np.mean(f) + np.mean(g))
    return primal, max(primal - dual, 0.0)


def wasserstein_details(a, b, rho: float = 2.0, alpha: float | None = None, grid: TimeGrid | None = None, exact_limit: int = 256) -> WassersteinResult:
    """``W_rho`` between two uniform empirical measures.

    1-D samples use sorted matching; equal sizes up to ``exact_limit`` use the
    Hungarian algorithm; larger ones Sinkhorn (the primal-dual gap is
    reported); unequal sizes a transport linear programme.
    """
    if rho < 1:
        raise ValueError("Wasserstein order must be >= 1")
    xa, xb = _as_samples(a), _as_samples(b)
    if xa.ndim == 2 and xa.shape[1] == 1 and xa.shape[0] == xb.shape[0]:
        sa, sb = np.sort(xa[:, 0]), np.sort(xb[:, 0])
        return WassersteinResult(float(np.mean(np.abs(sa - sb) ** rho) ** (1 / rho)), "sorted")
    if alpha is not None and grid is None:
        grid = a.grid if isinstance(a, EmpiricalPathMeasure) else None
    cost = path_distance_matrix(xa, xb, alpha, grid) ** rho
    na, nb = cost.shape
    if na != nb:
        A_eq = np.zeros((na + nb, na * nb))
        for i in range(na):
            A_eq[i, i * nb : (i + 1) * nb] = 1.0
        for j in range(nb):
            A_eq[na + j, j::nb] = 1.0
        b_eq = np.concatenate([np.full(na, 1 / na), np.full(nb, 1 / nb)])
        res = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        return WassersteinResult(float(max(res.fun, 0.0) ** (1 / rho)), "linprog")
    if na <= exact_limit:
        r, c = linear_sum_assignment(cost)
        # sorted summation keeps the value exactly symmetric in (a, b)
        return WassersteinResult(float(np.mean(np.sort(cost[r, c])) ** (1 / rho)), "hungarian")
    val, gap = _sinkhorn(cost)
    return WassersteinResult(float(val ** (1 / rho)), "sinkhorn", gap)


def wasserstein_rho(a, b, rho: float = 2.0, alpha: float | None = None, grid: TimeGrid | None = None) -> float:
    return wasserstein_details(a, b, rho, alpha, grid).value


def brute_force_wasserstein(a: Array, b: Array, rho: float = 2.0) -> float:
    """Minimum over all permutations; only for tiny samples."""
    xa, xb = _as_samples(a), _as_samples(b)
    cost = path_distance_matrix(xa, xb) ** rho
    n = cost.shape[0]
    best = min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
    return float((best / n) ** (1 / rho))


def index_coupling_distance(a: Array, b: Array, rho: float, alpha: float, grid: TimeGrid) -> float:
    """Upper bound of path-space ``W_rho`` from the identity coupling (same particle labels)."""
    diff = a - b
    norm = np.linalg.norm(diff[:, 0], axis=-1)
    pts = grid.points
    best = np.zeros(a.shape[0])
    for lag in range(1, grid.n + 1):
        inc = np.linalg.norm(diff[:, lag:] - diff[:, :-lag], axis=-1)
        best = np.maximum(best, np.max(inc / (pts[lag:] - pts[:-lag]) ** alpha, axis=-1))
    return float(np.mean((norm + best) ** rho) ** (1 / rho))


# ---------------------------------------------------------------------------
# mean-field map


def solve_particles(basis: GaussianBasis, x0: Array, a_steps: Array, b_steps: Array) -> Array:
    """Davie scheme for particle-specific steps ``(N, n, K)`` / ``(N, n, K, K)``."""
    return davie_loop(basis, x0, np.swapaxes(a_steps, 0, 1), np.swapaxes(b_steps, 0, 1))


def particle_steps(k: KernelFamily, paths: Array, gamma: Array, z: RoughPath, dw: Array) -> tuple[Array, Array, Array]:
    """Per-particle driver steps of the frozen law; returns ``(a, B, sigma)``."""
    sig = k.frozen_sigma(paths)  # (n+1, dW, K)
    a_w = w_sigma_steps(sig, dw)  # (N, n, K)
    a_z, b_z = z_beta_steps(controlled_beta(k, paths, gamma, z), z)
    a, b = mixed_steps(a_w, a_z[None], b_z[None])
    return a, b, sig


def mean_field_step(cm: ControlledMeasure, k: KernelFamily, z: RoughPath, noise: ParticleNoise | Array, x0: Array | None = None) -> ControlledMeasure:
    """One application of ``Gamma(mu, gamma) = (Law(x), beta(mu))``.

    The law ``mu`` is frozen in the kernels, every particle is driven by its
    own Brownian stream and the common ``z``; ``noise`` is a
    :class:`ParticleNoise` or precomputed increments ``(N, n, dW)``.
    """
    if not np.array_equal(cm.measure.grid.points, z.grid.points):
        raise ValueError("grid mismatch between measure and rough path")
    if not k.basis.same_as(cm.basis):
        raise ValueError("kernel basis differs from the measure basis")
    paths = cm.measure.paths
    x0 = paths[:, 0] if x0 is None else np.atleast_2d(np.asarray(x0, dtype=float))
    dw = noise.increments(z.grid) if isinstance(noise, ParticleNoise) else np.asarray(noise, dtype=float)
    if dw.shape[0] != x0.shape[0]:
        raise ValueError("one Brownian stream per particle is required")
    a, b, _ = particle_steps(k, paths, cm.gamma, z, dw)
    new = solve_particles(k.basis, x0, a, b)
    bad = np.nonzero(~np.all(np.isfinite(new), axis=(1, 2)))[0]
    if bad.size:
        raise FloatingPointError(f"particle {int(bad[0])} left the finite range")
    gamma = k.frozen_beta(paths)  # (n+1, m, K)
    return ControlledMeasure(EmpiricalPathMeasure(z.grid, new), gamma, cm.basis, z)


def controlled_gap(a: ControlledMeasure, b: ControlledMeasure, probes: Sequence[ScalarFn], alpha: float) -> float:
    """``max_phi |(mu(phi) - nu(phi), mu(grad phi gamma) - nu(grad phi zeta))|_{Z, alpha}``."""
    best = 0.0
    for phi in probes:
        pa, pb = a.probe_path(phi), b.probe_path(phi)
        diff = ControlledPath.from_arrays(pa.y.values - pb.y.values, pa.y_prime.values - pb.y_prime.values, a.z)
        best = max(best, diff.norm(alpha))
    return best


class NonContraction(RuntimeError):
    def __init__(self, msg: str, trace: list):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class FixedPointResult:
    measure: ControlledMeasure
    trace: tuple  # rows (window, iter, wasserstein_gap, gubinelli_gap, controlled_gap)
    windows: tuple
    iterations: tuple
    ball_flags: tuple = ()

    @property
    def max_iterations(self) -> int:
        return max(self.iterations) if self.iterations else 0


def z_windows(z: RoughPath, beta: float, p: float | None = None) -> list[int]:
    """Window endpoints (grid indices) from the greedy partition of the control of ``Z``."""
    p = p or 1.0 / z.alpha
    g = z.z
    cache = {}

    def row(i):
        if i not in cache:
            first = p_variation_row(g, p, i)
            second = p_variation_row(z.zz, p / 2, i)
            cache[i] = (first ** (1 / p) + np.sqrt(second ** (2 / p))) ** p
        return cache[i]

    def ev(s, t):
        i, j = int(z.grid.index_of(s)), int(z.grid.index_of(t))
        return 0.0 if j <= i else float(row(i)[j - i])

    part = greedy_partition(ControlFn(ev, True, z.grid, row), beta, z.grid.t0, z.grid.T)
    return [int(i) for i in z.grid.index_of(np.array(part.times))]


def mckv_fixed_point(
    initial: ControlledMeasure,
    k: KernelFamily,
    z: RoughPath | None = None,
    noise: ParticleNoise | Array | None = None,
    max_iters: int = 50,
    tol: float = 1e-6,
    window_beta: float = 1e-3,
    probes: Sequence[ScalarFn] | None = None,
    rho: float = 2.0,
    ball_radius: float | None = None,
) -> FixedPointResult:
    """Iterate ``Gamma`` window by window and concatenate the fixed points.

    Each window starts from constant paths at the particles' positions at
    its left end, with ``gamma = beta`` of that constant law. The gap of an iteration is the sum of an index-coupling
    bound of the path-space ``W_rho``, the sup gap of the Gubinelli fields and
    the controlled-norm gap over ``probes``. Three consecutive gap ratios
    ``>= 1`` (after the second iteration) raise :class:`NonContraction`.
    """
    z = initial.z if z is None else z
    if not np.array_equal(initial.measure.grid.points, z.grid.points):
        raise ValueError("grid mismatch between measure and rough path")
    basis = initial.basis
    probes = list(probes) if probes is not None else default_probes(basis.d, 8)
    N = initial.measure.N
    if noise is None:
        noise = ParticleNoise.for_particles(N, noise_dim=k.noise_dim)
    dw = noise.increments(z.grid) if isinstance(noise, ParticleNoise) else np.asarray(noise, dtype=float)
    alpha = z.alpha
    cuts = z_windows(z, window_beta)
    x_start = initial.measure.paths[:, 0]
    full = np.empty((N, len(z.grid), basis.d))
    gam_full = np.zeros_like(initial.gamma)
    trace, iters, flags = [], [], []
    atom_w = basis.atom_norms(3)
    for w, (i0, i1) in enumerate(zip(cuts[:-1], cuts[1:])):
        zw = z.window(i0, i1)
        cur = ControlledMeasure.constant(x_start, basis, zw)
        cur = ControlledMeasure(cur.measure, k.frozen_beta(cur.measure.paths), basis, zw)
        dww = dw[:, i0:i1]
        ratios = []
        last = math.inf
        for it in range(1, max_iters + 1):
            nxt = mean_field_step(cur, k, zw, dww, x_start)
            wg = index_coupling_distance(nxt.measure.paths, cur.measure.paths, rho, alpha, zw.grid)
            gg = float(np.max(np.abs(nxt.gamma - cur.gamma) @ atom_w)) if nxt.gamma.size else 0.0
            cg = controlled_gap(nxt, cur, probes, alpha)
            gap = wg + gg + cg
            trace.append((w, it, wg, gg, cg))
            if ball_radius is not None:
                moment = float(np.max(np.mean(np.linalg.norm(nxt.measure.paths, axis=-1) ** rho, axis=0) ** (1 / rho)))
                if moment > ball_radius:
                    flags.append((w, it, moment))
            cur = nxt
            if gap <= tol:
                break
            if math.isfinite(last) and last > 0 and it > 2:
                ratios.append(gap / last)
                if len(ratios) >= 3 and all(r >= 1 for r in ratios[-3:]):
                    raise NonContraction(f"no contraction in window {w} after {it} iterations", trace)
            last = gap
        iters.append(it)
        full[:, i0 : i1 + 1] = cur.measure.paths
        gam_full[i0 : i1 + 1] = cur.gamma
        x_start = cur.measure.paths[:, -1]
    result = ControlledMeasure(EmpiricalPathMeasure(z.grid, full), gam_full, basis, z)
    return FixedPointResult(result, tuple(trace), tuple(cuts), tuple(iters), tuple(flags))


def controlled_measure_norm(
    cm: ControlledMeasure,
    probes: Sequence[ScalarFn],
    alpha: float | None = None,
    h: float | None = None,
    martingale: tuple | None = None,
    fit_levels: int = 6,
) -> tuple[float, dict]:
    """``max_phi |mu(phi)_0| + [mu(grad phi gamma)]_alpha + [remainder]_{2 alpha}``.

    Also returns the remainder exponent per probe index, fitted on the
    ``fit_levels`` finest dyadic lags. See :meth:`ControlledMeasure.probe_path`
    for ``martingale``.
    """
    from .core import dyadic_defect, holder_seminorm

    probes = list(probes)
    if not probes:
        raise ValueError("empty probe set")
    a = cm.z.alpha if alpha is None else alpha
    best = 0.0
    exps = {}
    for j, phi in enumerate(probes):
        cp = cm.probe_path(phi, martingale)
        best = max(best, cp.norm(a, h))
        levels = [k for k in range(fit_levels) if 2**k <= cm.z.grid.n]
        exps[j] = dyadic_defect(f"probe {j} remainder", cp.remainder(), cm.z.grid, levels).exponent
    return best, exps
