"""Unbounded rough drivers and defect checks for rough Fokker-Planck equations.

For a coefficient rough path ``(X, XX)`` over the atom basis the operators are

    B1_st phi = X_st^k (phi_k . grad) phi
    B2_st phi = XX_st^{kl} [ ((phi_a . grad) phi_b) . grad phi + phi_k^T D^2 phi phi_l ]

where ``(a, b) = (k, l)`` for the ``law`` ordering (earlier field in the
first slot, matching the particle expansion) and ``(a, b) = (l, k)`` for the
``nabla1`` ordering. Their Chen relations are
``delta B2_sut = B1_su(B1_ut .)`` and ``delta B2_sut = B1_ut(B1_su .)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .controlled import ControlledPath, integral_lift, rough_integral
from .core import DefectReport, RoughPath, TimeGrid, fit_exponent
from .drivers import FieldRoughPath
from .fields import GaussianBasis, ScalarFn
from .measures import FixedPointResult
from .stochastic import KernelFamily, controlled_beta

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class UnboundedRoughDriver:
    basis: GaussianBasis
    source: RoughPath
    ordering: str = "law"

    def __post_init__(self):
        if self.source.m != self.basis.K:
            raise ValueError("rough path dimension does not match the field basis")
        if self.ordering not in ("law", "nabla1"):
            raise ValueError("ordering must be 'law' or 'nabla1'")

    @property
    def grid(self) -> TimeGrid:
        return self.source.grid

    def atom_terms(self, phi: ScalarFn, x: Array) -> tuple[Array, Array]:
        """Per-point coefficient forms ``(P, K)`` and ``(P, K, K)`` of ``B1`` and ``B2``."""
        return _atom_terms(self.basis, phi, x, self.ordering)

    def B1(self, i: int, j: int, phi: ScalarFn, x: Array) -> Array:
        e1, _ = self.atom_terms(phi, x)
        return e1 @ self.source.increment(i, j)

    def B2(self, i: int, j: int, phi: ScalarFn, x: Array) -> Array:
        _, e2 = self.atom_terms(phi, x)
        return np.einsum("pkl,kl->p", e2, self.source.area(i, j))

    def apply_B1_field(self, i: int, j: int, coeffs_then: Array, x: Array, phi: ScalarFn) -> Array:
        """``B1_ij`` applied to the function ``x -> X_then(x) . grad phi(x)``."""
        return _b1_of_b1(self.basis, self.source.increment(i, j), coeffs_then, phi, x)


def _atom_terms(basis: GaussianBasis, phi: ScalarFn, x: Array, ordering: str) -> tuple[Array, Array]:
    x = np.asarray(x, dtype=float)
    g, dg = basis.scalar(x, 1)
    v = basis.directions
    grad = phi.grad(x)
    hess = phi.hess(x)
    q = grad @ v.T  # (..., K): dir_l . grad phi
    e1 = g * q
    D = g[..., :, None] * np.einsum("ki,...li->...kl", v, dg)  # g_k dir_k . grad g_l
    H = g[..., :, None] * g[..., None, :] * np.einsum("ki,...ij,lj->...kl", v, hess, v)
    if ordering == "law":
        e2 = D * q[..., None, :] + H
    else:
        e2 = np.swapaxes(D, -1, -2) * q[..., :, None] + H
    return e1, e2


def _b1_of_b1(basis: GaussianBasis, outer: Array, inner: Array, phi: ScalarFn, x: Array) -> Array:
    """``X_outer . grad (X_inner . grad phi)`` at ``x``."""
    F = basis.field_values(outer, x)
    G = basis.field_values(inner, x)
    JG = basis.field_jacobian(inner, x)
    grad, hess = phi.grad(x), phi.hess(x)
    return np.einsum("...i,...ji,...j->...", F, JG, grad) + np.einsum("...i,...ij,...j->...", F, hess, G)


def urd_from_rough_path(x: FieldRoughPath, ordering: str = "law") -> UnboundedRoughDriver:
    if not isinstance(x, FieldRoughPath):
        raise TypeError("expected a rough path over field-basis components")
    return UnboundedRoughDriver(x.basis, x.path, ordering)


def urd_chen_defect(urd: UnboundedRoughDriver, probes: Sequence[ScalarFn], points: Array, triples: Sequence[tuple]) -> float:
    """``max |delta B2_sut phi - B1 B1 phi|`` with the composition order of ``urd.ordering``."""
    worst = 0.0
    for s, u, t in triples:
        for phi in probes:
            lhs = urd.B2(s, t, phi, points) - urd.B2(s, u, phi, points) - urd.B2(u, t, phi, points)
            first, second = urd.source.increment(s, u), urd.source.increment(u, t)
            if urd.ordering == "law":
                rhs = _b1_of_b1(urd.basis, first, second, phi, points)
            else:
                rhs = _b1_of_b1(urd.basis, second, first, phi, points)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


# ---------------------------------------------------------------------------
# Fokker-Planck defect


@dataclass(frozen=True)
class FpDefectReport:
    probe_set: str
    rows: tuple  # (phi_id, s, t, defect, ci_low, ci_high)
    scales: tuple
    maxima: tuple
    ci: tuple
    exponent: float
    threshold: float
    verdict: str
    resolved_levels: int
    required_N: int | None = None
    N: int = 0

    def summary(self) -> str:
        items = [
            ("probe_set", self.probe_set),
            ("N", self.N),
            ("exponent", f"{self.exponent:.6g}"),
            ("threshold", f"{self.threshold:.6g}"),
            ("resolved_levels", self.resolved_levels),
            ("verdict", self.verdict),
        ]
        if self.required_N is not None:
            items.append(("required_N", self.required_N))
        return "\n".join(f"{k}={v}" for k, v in items)


def _sigma_hessian_term(basis: GaussianBasis, sigma: Array, phi: ScalarFn, x: Array) -> Array:
    """``Tr(a D^2 phi)`` with ``a = sigma sigma^T / 2``; ``sigma`` ``(dW, K)`` or time-batched."""
    g = basis.scalar(x)[0]  # (..., K)
    cols = np.einsum("...k,...jk,kd->...jd", g, sigma, basis.directions)  # (..., dW, d)
    return 0.5 * np.einsum("...ja,...ab,...jb->...", cols, phi.hess(x), cols)


def _hermite_nodes(dim: int, order: int) -> tuple[Array, Array]:
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wts = np.meshgrid(*([w] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1), np.prod([v.ravel() for v in wts], axis=0)


def transition_control(
    basis: GaussianBasis,
    sigma: Array,
    a_z: Array,
    b_z: Array,
    paths: Array,
    dw: Array,
    probes: Sequence[ScalarFn],
    steps: Array,
    order: int = 12,
) -> Array:
    """Martingale control variates ``phi(S(x_i, dW_i)) - E[phi(S(x_i, dW)) | x_i]``.

    ``S`` is one mixed Davie step with frozen coefficients ``sigma`` ``(n+1, dW, K)``
    and rough-part steps ``a_z`` ``(n, K)``, ``b_z`` ``(n, K, K)``; the
    conditional mean is a Gauss-Hermite rule in the Brownian increment.
    Each term has mean zero because ``x_i`` is independent of ``dW_i``, so
    subtracting the running sum leaves expectations unchanged. Returns
    ``(probes, N, n)``.
    """
    N, n1, d = paths.shape
    nodes, wts = _hermite_nodes(sigma.shape[1], order)
    out = np.empty((len(probes), N, n1 - 1))

    def step(x, aw, i):
        a = aw + a_z[i]
        B = b_z[i] + aw[:, :, None] * a_z[i][None, None, :]
        return x + basis.step_increment(x, a, B)

    for i in range(n1 - 1):
        x = paths[:, i]
        sq = math.sqrt(steps[i])
        actual = step(x, dw[:, i] @ sigma[i], i)
        mean = np.zeros((len(probes), N))
        for q in range(nodes.shape[0]):
            aw = np.broadcast_to(sq * nodes[q] @ sigma[i], (N, basis.K))
            xq = step(x, aw, i)
            for p, phi in enumerate(probes):
                mean[p] += wts[q] * phi.value(xq)
        for p, phi in enumerate(probes):
            out[p, :, i] = phi.value(actual) - mean[p]
    return out


@dataclass(frozen=True, eq=False)
class _ProbeStats:
    phi: Array  # (B, n+1) batch means of phi(x_t)
    drift: Array  # (B, n+1) batch means of Tr(a D^2 phi)(x_t)
    mart: Array  # (B, n+1) batch means of the cumulative martingale terms
    e1: Array  # (B, n+1, K)
    e2: Array  # (B, n+1, K, K)


def _probe_stats(basis, ordering, paths, sigma, phi, cv, batches, weights=None) -> _ProbeStats:
    N, n1, d = paths.shape
    if weights is None:
        groups = np.array_split(np.arange(N), batches)
    else:
        groups = [np.arange(N)]
    phis, drifts, marts, e1s, e2s = [], [], [], [], []
    for idx in groups:
        x = paths[idx]
        w = None if weights is None else weights[idx]
        mean = (lambda a: np.mean(a, axis=0)) if w is None else (lambda a: np.tensordot(w, a, axes=(0, 0)))
        phis.append(mean(phi.value(x)))
        e1, e2 = _atom_terms(basis, phi, x, ordering)
        e1s.append(mean(e1))
        e2s.append(mean(e2))
        if sigma is None:
            drifts.append(np.zeros(n1))
            marts.append(np.zeros(n1))
            continue
        drifts.append(mean(_sigma_hessian_term(basis, sigma, phi, x)))
        if cv is None:
            marts.append(np.zeros(n1))
        else:
            marts.append(np.concatenate([[0.0], np.cumsum(mean(cv[idx]))]))
    return _ProbeStats(np.array(phis), np.array(drifts), np.array(marts), np.array(e1s), np.array(e2s))


def _defects_at_lag(st: _ProbeStats, urd: UnboundedRoughDriver, steps: Array, lag: int) -> tuple[Array, Array]:
    """Per-batch defects on non-overlapping pairs ``(i, i + lag)``; returns ``(B, P)`` and the left indices."""
    n = steps.size
    i = np.arange(0, n - lag + 1, lag)
    j = i + lag
    drift_cum = np.concatenate([np.zeros((st.drift.shape[0], 1)), np.cumsum(st.drift[:, :-1] * steps, axis=1)], axis=1)
    X = urd.source.increment(i, j)  # (P, K)
    XX = urd.source.area(i, j)  # (P, K, K)
    b1 = np.einsum("bpk,pk->bp", st.e1[:, i], X)
    b2 = np.einsum("bpkl,pkl->bp", st.e2[:, i], XX)
    dphi = st.phi[:, j] - st.phi[:, i] - (st.mart[:, j] - st.mart[:, i])
    return dphi - (drift_cum[:, j] - drift_cum[:, i]) - b1 - b2, i


def fp_defect(
    paths: Array,
    sigma: Array | None,
    urd: UnboundedRoughDriver,
    probes: Sequence[ScalarFn],
    levels: Sequence[int] | None = None,
    dw: Array | None = None,
    alpha: float | None = None,
    slack: float = 0.2,
    batches: int = 16,
    weights: Array | None = None,
    probe_set: str = "default",
    resolve_factor: float = 2.0,
) -> FpDefectReport:
    """Fokker-Planck remainder ``nu_st(phi) - int nu_r(Tr a D^2 phi) dr - nu_s(B1 phi) - nu_s(B2 phi)``.

    ``paths`` ``(N, n+1, d)`` sample ``nu``; ``sigma`` ``(n+1, dW, K)`` gives
    ``a = sigma sigma^T / 2`` (``None`` for no diffusion). With ``dw`` the
    martingale control variates of :func:`transition_control` are
    subtracted, which leaves the expectation unchanged and removes the
    Brownian part of the Monte-Carlo noise. Confidence
    bands come from batch means. ``weights`` (quadrature weights summing to 1)
    replace the particle average by an exact weighted one with no bands.

    ``levels`` are dyadic lags ``2^k`` in fine steps. The exponent is fitted
    on lags whose maximum exceeds ``resolve_factor`` times its band; fewer
    than three such lags give an ``INCONCLUSIVE`` verdict and an estimate of
    the particle count needed.
    """
    paths = np.asarray(paths, dtype=float)
    grid = urd.grid
    n = grid.n
    if paths.shape[1] != n + 1:
        raise ValueError("paths and driver live on different grids")
    probes = list(probes)
    if not probes:
        raise ValueError("empty probe set")
    alpha = urd.source.alpha if alpha is None else alpha
    threshold = 3 * alpha - slack
    if levels is None:
        levels = [k for k in range(0, 64) if 2**k <= n][-6:]
    steps = grid.steps
    N = paths.shape[0]
    B = 1 if weights is not None else min(batches, N)
    tq = float(stats.t.ppf(0.975, B - 1)) if B > 1 else 0.0
    cvs = [None] * len(probes)
    if dw is not None and sigma is not None and weights is None:
        a_z, b_z = urd.source.step_data()
        cvs = transition_control(urd.basis, sigma, a_z, b_z, paths, np.asarray(dw, dtype=float), probes, steps)
    per_probe = [_probe_stats(urd.basis, urd.ordering, paths, sigma, phi, cv, B, weights) for phi, cv in zip(probes, cvs)]
    rows, scales, maxima, bands = [], [], [], []
    for k in levels:
        lag = 2**k
        if lag > n:
            continue
        best, best_ci = -1.0, 0.0
        for pid, st in enumerate(per_probe):
            vals, i = _defects_at_lag(st, urd, steps, lag)
            if B > 1:
                mean = vals.mean(axis=0)
                ci = tq * vals.std(axis=0, ddof=1) / math.sqrt(B)
            else:
                mean, ci = vals[0], np.zeros(vals.shape[1])
            for a, m, c in zip(i, mean, ci):
                rows.append((pid, float(grid.points[a]), float(grid.points[a + lag]), float(m), float(m - c), float(m + c)))
            arg = int(np.argmax(np.abs(mean)))
            if abs(mean[arg]) > best:
                best, best_ci = float(abs(mean[arg])), float(ci[arg])
        scales.append(float(lag * np.max(steps)))
        maxima.append(best)
        bands.append(best_ci)
    s, v, c = np.array(scales), np.array(maxima), np.array(bands)
    if np.all(v == 0):
        return FpDefectReport(probe_set, tuple(rows), tuple(scales), tuple(maxima), tuple(bands), math.inf, threshold, "PASS", len(scales), None, N)
    ok = v > resolve_factor * c
    required = None
    if ok.sum() >= 3:
        exponent = fit_exponent(s[ok], v[ok])
        verdict = "PASS" if exponent >= threshold else "FAIL"
    else:
        exponent = fit_exponent(s, v)
        verdict = "INCONCLUSIVE"
        finest = int(np.argmin(s))
        ratio = resolve_factor * c[finest] / max(v[finest], 1e-300)
        required = int(math.ceil(N * ratio**2))
    return FpDefectReport(probe_set, tuple(rows), tuple(scales), tuple(maxima), tuple(bands), exponent, threshold, verdict, int(ok.sum()), required, N)


def corrupt_area(z: RoughPath, shift: float) -> RoughPath:
    """``ZZ_st + shift (t - s) Id``: still satisfies Chen, no longer geometric (negative control)."""
    dz, dzz = z.step_data()
    h = z.grid.steps
    bad = dzz + shift * h[:, None, None] * np.eye(z.m)
    return RoughPath.from_steps(z.grid, z.z.values[0], dz, bad, z.alpha)


def measure_driver(k: KernelFamily, paths: Array, gamma: Array, z: RoughPath, ordering: str = "law") -> UnboundedRoughDriver:
    """``B^mu`` built from ``X^mu = int beta(mu_r) dZ_r`` with its Gubinelli derivative."""
    lift = integral_lift(controlled_beta(k, paths, gamma, z), z)
    return UnboundedRoughDriver(k.basis, lift, ordering)


def nonlocal_fp_check(
    fixed_point,
    k: KernelFamily,
    z: RoughPath | None = None,
    probes: Sequence[ScalarFn] = (),
    dw: Array | None = None,
    levels: Sequence[int] | None = None,
    slack: float = 0.2,
    sigma_scale: float = 1.0,
    area_shift: float = 0.0,
    probe_set: str = "default",
) -> FpDefectReport:
    """Check that the fixed-point law solves the nonlocal Fokker-Planck equation.

    ``fixed_point`` is a :class:`~roughmckv.measures.ControlledMeasure` (or a
    result carrying one in ``.measure``). ``sigma_scale`` and ``area_shift``
    corrupt the diffusion and the second level of ``Z`` for negative controls.
    """
    cm = fixed_point.measure if isinstance(fixed_point, FixedPointResult) else fixed_point
    z = cm.z if z is None else z
    if area_shift:
        z = corrupt_area(z, area_shift)
    paths = cm.measure.paths
    urd = measure_driver(k, paths, cm.gamma, z)
    sigma = sigma_scale * k.frozen_sigma(paths)
    if not np.any(sigma):
        sigma = None
    return fp_defect(paths, sigma, urd, probes, levels, dw, z.alpha, slack, probe_set=probe_set)


@dataclass(frozen=True)
class ItoResidualReport:
    report: DefectReport
    residual: float  # max over probes and times of the batch-mean global residual
    ci: float  # band of the residual at its argmax
    per_probe: tuple = ()


def _field_vals(basis: GaussianBasis, g: Array, coeffs: Array) -> Array:
    # g (N, n+1, K), coeffs (n+1, ..., K) -> (N, n+1, ..., d)
    return np.einsum("ntk,t...k,kd->nt...d", g, coeffs, basis.directions)


def average_ito_residual(
    paths: Array,
    k: KernelFamily,
    gamma: Array,
    z: RoughPath,
    probes: Sequence[ScalarFn],
    dw: Array | None = None,
    batches: int = 16,
) -> ItoResidualReport:
    """Residual of ``E phi(x_t) = E phi(xi) + 1/2 int E[D^2 phi : sigma sigma^T] dr + int E[grad phi . beta] dZ``.

    The rough integral uses the Gubinelli derivative
    ``E[grad phi . (beta' + D beta beta) + D^2 phi : beta (x) beta]``. The
    returned report holds the dyadic maxima of the local residual germs and
    their fitted exponent; ``residual`` is the global discrepancy.
    """
    paths = np.asarray(paths, dtype=float)
    basis = k.basis
    grid = z.grid
    n = grid.n
    steps = grid.steps
    sig = k.frozen_sigma(paths)
    beta = k.frozen_beta(paths)  # (n+1, m, K)
    bprime = k.beta_derivative(paths, gamma)  # (n+1, m_j, m_i, K)
    N = paths.shape[0]
    groups = np.array_split(np.arange(N), min(batches, N))
    B = len(groups)
    tq = float(stats.t.ppf(0.975, B - 1)) if B > 1 else 0.0
    dz, dzz = z.step_data()
    probes = list(probes)
    cvs = None
    if dw is not None and np.any(sig):
        a_z, b_z = integral_lift(controlled_beta(k, paths, gamma, z), z).step_data()
        cvs = transition_control(basis, sig, a_z, b_z, paths, np.asarray(dw, dtype=float), probes, steps)
    worst, worst_ci = 0.0, 0.0
    local_max: dict[int, float] = {}
    per_probe = []
    for pid, phi in enumerate(probes):
        glob = np.zeros((B, n + 1))
        local = []
        for b, idx in enumerate(groups):
            x = paths[idx]
            g, dg = basis.scalar(x, 1)
            grad, hess = phi.grad(x), phi.hess(x)
            bv = _field_vals(basis, g, beta)  # (P, n+1, m, d)
            bpv = _field_vals(basis, g, bprime)  # (P, n+1, m, m, d)
            jac = np.einsum("ntki,tjk,kd->ntjdi", dg, beta, basis.directions)  # d_i beta^j_d
            y = np.mean(np.einsum("ntd,ntjd->ntj", grad, bv), axis=0)
            chain = bpv + np.einsum("ntjdi,ntli->ntjld", jac, bv)
            yp = np.mean(np.einsum("ntd,ntjld->ntjl", grad, chain) + np.einsum("ntla,ntab,ntjb->ntjl", bv, hess, bv), axis=0)
            phiv = np.mean(phi.value(x), axis=0)
            drift = np.mean(_sigma_hessian_term(basis, sig, phi, x), axis=0) if np.any(sig) else np.zeros(n + 1)
            if cvs is not None:
                phiv = phiv - np.concatenate([[0.0], np.cumsum(np.mean(cvs[pid][idx], axis=0))])
            dcum = np.concatenate([[0.0], np.cumsum(drift[:-1] * steps)])
            cp = ControlledPath.from_arrays(y[:, None, :], yp[:, None, :, :], z)
            integral, _ = rough_integral(cp, z)
            glob[b] = phiv - phiv[0] - dcum - integral.values[:, 0]
            local.append((phiv, dcum, y, yp))
        mean = glob.mean(axis=0)
        ci = tq * glob.std(axis=0, ddof=1) / math.sqrt(B) if B > 1 else np.zeros(n + 1)
        arg = int(np.argmax(np.abs(mean)))
        per_probe.append((float(mean[arg]), float(ci[arg])))
        if abs(mean[arg]) >= worst:
            worst, worst_ci = float(abs(mean[arg])), float(ci[arg])
        phiv = np.mean([l[0] for l in local], axis=0)
        dcum = np.mean([l[1] for l in local], axis=0)
        y = np.mean([l[2] for l in local], axis=0)
        yp = np.mean([l[3] for l in local], axis=0)
        for lvl in range(0, int(math.log2(n)) + 1):
            lag = 2**lvl
            i = np.arange(0, n - lag + 1, lag)
            j = i + lag
            germ = np.einsum("pj,pj->p", y[i], z.increment(i, j)) + np.einsum("pjl,plj->p", yp[i], z.area(i, j))
            r = phiv[j] - phiv[i] - (dcum[j] - dcum[i]) - germ
            local_max[lag] = max(local_max.get(lag, 0.0), float(np.max(np.abs(r))))
    lags = sorted(local_max)
    scales = tuple(float(l * np.max(steps)) for l in lags)
    maxima = tuple(local_max[l] for l in lags)
    rep = DefectReport("average ito residual", worst, scales, maxima, fit_exponent(scales, maxima))
    return ItoResidualReport(rep, worst, worst_ci, tuple(per_probe))


# ---------------------------------------------------------------------------
# Gaussian oracle


def gauss_hermite_marginals(mean: Array, var: Array, order: int = 48) -> tuple[Array, Array]:
    """Quadrature nodes ``(Q, n+1, 1)`` and weights ``(Q,)`` for 1-D Gaussian marginals."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    pts = np.asarray(mean)[None, :] + np.sqrt(np.asarray(var))[None, :] * x[:, None]
    return pts[..., None], w


def linear_gaussian_moments(z: RoughPath, sigma: float, m0: float, v0: float) -> tuple[Array, Array]:
    """Mean and variance of ``dx = sigma dW + x dZ`` for piecewise-linear 1-D ``Z``.

    ``x_t = e^{Z_t} (x_0 + sigma int_0^t e^{-Z_r} dW_r)``; the variance
    integral is exact on each linear segment.
    """
    zv = z.z.values[:, 0]
    h = z.grid.steps
    dz = np.diff(zv)
    a, b = np.exp(-2 * zv[:-1]), np.exp(-2 * zv[1:])
    small = np.abs(dz) < 1e-12
    seg = np.where(small, h * a, h * (a - b) / np.where(small, 1.0, 2 * dz))
    integ = np.concatenate([[0.0], np.cumsum(seg)])
    e = np.exp(zv)
    return m0 * e, e**2 * (v0 + sigma**2 * integ)
