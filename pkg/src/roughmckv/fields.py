"""Finite-basis smooth vector fields built from Gaussian atoms.

An atom is ``phi_k(x) = v_k exp(-|x - c_k|^2 / (2 lambda_k^2))``. Every
time-dependent field, driver and kernel in the package is a coefficient
vector over one fixed atom basis, so compositions stay inside the basis and
algebraic identities hold to rounding.

Norms: ``|F|_{C_b^r}`` is the max over derivative orders ``0..r`` of the sup
over the probe lattice of the Frobenius norm of the derivative tensor.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

Array = np.ndarray


def probe_lattice(d: int, per_dim: int = 41, half_width: float = 5.0) -> Array:
    """Uniform lattice ``per_dim^d`` on ``[-half_width, half_width]^d``."""
    axis = np.linspace(-half_width, half_width, per_dim)
    return np.array(list(itertools.product(axis, repeat=d)), dtype=float).reshape(-1, d)


def gaussian_derivatives(x: Array, centers: Array, inv_var: Array, order: int) -> list[Array]:
    """Scalar Gaussians and derivatives up to ``order`` (at most 3).

    Returns ``[g, Dg, D2g, D3g][: order + 1]`` with shapes ``(..., K)``,
    ``(..., K, d)``, ``(..., K, d, d)``, ``(..., K, d, d, d)``.
    """
    u = x[..., None, :] - centers  # (..., K, d)
    s = inv_var[:, None]
    g = np.exp(-0.5 * np.sum(u * u, axis=-1) * inv_var)
    out = [g]
    if order >= 1:
        out.append(-s * u * g[..., None])
    if order >= 2:
        d = u.shape[-1]
        eye = np.eye(d)
        s2 = inv_var[:, None, None]
        out.append((s2 * s2 * u[..., :, None] * u[..., None, :] - s2 * eye) * g[..., None, None])
    if order >= 3:
        d = u.shape[-1]
        eye = np.eye(d)
        s3 = inv_var[:, None, None, None]
        uuu = u[..., :, None, None] * u[..., None, :, None] * u[..., None, None, :]
        sym = (
            eye[:, :, None] * u[..., None, None, :]
            + eye[:, None, :] * u[..., None, :, None]
            + eye[None, :, :] * u[..., :, None, None]
        )
        out.append((-(s3**3) * uuu + s3 * s3 * sym) * g[..., None, None, None])
    return out


@dataclass(frozen=True, eq=False)
class GaussianBasis:
    centers: Array
    widths: Array
    directions: Array

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        w = np.atleast_1d(np.asarray(self.widths, dtype=float))
        v = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if c.shape != v.shape or w.shape != (c.shape[0],):
            raise ValueError("centers, widths and directions disagree in shape")
        if np.any(w <= 0):
            raise ValueError("atom widths must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "widths", w)
        object.__setattr__(self, "directions", v)

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @cached_property
    def inv_var(self) -> Array:
        return 1.0 / self.widths**2

    def scalar(self, x: Array, order: int = 0) -> list[Array]:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError("point dimension does not match the basis")
        return gaussian_derivatives(x, self.centers, self.inv_var, order)

    def same_as(self, other: "GaussianBasis") -> bool:
        return (
            self is other
            or (
                self.centers.shape == other.centers.shape
                and np.array_equal(self.centers, other.centers)
                and np.array_equal(self.widths, other.widths)
                and np.array_equal(self.directions, other.directions)
            )
        )

    # -- evaluation of coefficient combinations -----------------------------

    def field_values(self, coeffs: Array, x: Array) -> Array:
        """``sum_k a_k phi_k(x)``; ``coeffs`` is ``(K,)`` or batched ``(..., K)``."""
        g = self.scalar(x)[0]
        return np.sum((g * coeffs)[..., :, None] * self.directions, axis=-2)

    def field_jacobian(self, coeffs: Array, x: Array) -> Array:
        """``J[..., j, i] = d_i F^j(x)``."""
        dg = self.scalar(x, 1)[1]
        w = dg * np.asarray(coeffs)[..., :, None]  # (..., K, d_i)
        return np.einsum("...ki,kj->...ji", w, self.directions)

    def two_point(self, B: Array, x: Array, y: Array) -> Array:
        """``sum_{kl} B_kl (phi_k(x) . grad) phi_l(y)``, the driver second level."""
        gx = self.scalar(x)[0]
        dgy = self.scalar(y, 1)[1]
        D = np.einsum("ki,...li->...kl", self.directions, dgy)
        s = np.sum(B * gx[..., :, None] * D, axis=-2)
        return np.sum(s[..., :, None] * self.directions, axis=-2)

    def step_increment(self, x: Array, a: Array, B: Array) -> Array:
        """``F(x) + FF(x, x)`` for coefficients ``a`` ``(P, K)`` and ``B`` ``(P, K, K)``.

        Reductions run along contiguous trailing axes only so that a batch
        of one reproduces the batched result bit for bit.
        """
        g, dg = self.scalar(x, 1)
        v = self.directions
        D = np.einsum("ki,pli->pkl", v, dg)
        s = np.sum(np.ascontiguousarray(np.swapaxes(B * g[:, :, None] * D, -1, -2)), axis=-1)
        coef = g * a + s
        return np.sum(np.ascontiguousarray(np.swapaxes(coef[:, :, None] * v, -1, -2)), axis=-1)

    # -- norms ----------------------------------------------------------------

    def atom_norms(self, order: int = 3) -> Array:
        """Exact ``C_b^order`` norm of each atom (radial profile, sup over r)."""
        out = np.zeros(self.K)
        r = np.linspace(0.0, 8.0, 4001)
        for k in range(self.K):
            lam = self.widths[k]
            x = np.zeros((r.size, self.d))
            x[:, 0] = r * lam
            ders = gaussian_derivatives(x, np.zeros((1, self.d)), np.array([1.0 / lam**2]), order)
            best = 0.0
            for dk in ders:
                flat = dk.reshape(r.size, -1)
                best = max(best, float(np.max(np.sqrt(np.sum(flat * flat, axis=1)))))
            out[k] = best * np.linalg.norm(self.directions[k])
        return out

    def coefficient_bound(self, coeffs: Array, order: int = 3) -> Array:
        return np.sum(np.abs(coeffs) * self.atom_norms(order), axis=-1)

    def lattice_norm(self, coeffs: Array, order: int = 3, lattice: Array | None = None) -> Array:
        """Probe-lattice ``C_b^order`` norms for a batch ``(..., K)`` of fields."""
        coeffs = np.asarray(coeffs, dtype=float)
        lat = probe_lattice(self.d) if lattice is None else lattice
        ders = self.scalar(lat, order)
        lead = coeffs.shape[:-1]
        c2 = coeffs.reshape(-1, self.K)
        best = np.zeros(c2.shape[0])
        for dk in ders:
            # D^a F^j = sum_k a_k v_k^j D^a g_k
            comb = np.einsum("bk,pk...->bp...", c2, dk[..., None] * _expand_dir(self.directions, dk.ndim - 2))
            flat = comb.reshape(comb.shape[0], comb.shape[1], -1)
            best = np.maximum(best, np.max(np.sqrt(np.sum(flat * flat, axis=-1)), axis=1))
        return best.reshape(lead)

    def two_point_lattice_norm(self, B: Array, pairs: tuple[Array, Array] | None = None, order: int = 2) -> Array:
        """``C_b^2`` norm of ``(x, y) -> sum B_kl (phi_k(x).grad) phi_l(y)`` on probe pairs.

        ``B`` is ``(..., K, K)``. Default probes: the product of a 21-point
        lattice per coordinate for ``d = 1``, 512 seeded random pairs otherwise.
        """
        B = np.asarray(B, dtype=float)
        if pairs is None:
            pairs = default_two_point_pairs(self.d)
        xs, ys = pairs
        lead = B.shape[:-2]
        B2 = B.reshape(-1, self.K, self.K)
        gx = self.scalar(xs, order)
        gy = self.scalar(ys, order + 1)
        v = self.directions
        K, P = self.K, xs.shape[0]
        Bf = B2.reshape(-1, K * K)
        best = np.zeros(B2.shape[0])
        for a in range(order + 1):
            for b in range(order + 1 - a):
                # G[p,k,alpha] = D^a g_k(x_p); H[p,k,l,beta] = sum_i v_k^i D^b d_i g_l(y_p)
                G = gx[a].reshape(P, K, -1)
                H = np.einsum("ki,pli...->pkl...", v, gy[b + 1]).reshape(P, K, K, -1)
                # M[p,alpha,beta,j,(k,l)] does not depend on B, so the batch is one matmul
                M = G[:, :, None, :, None, None] * H[:, :, :, None, :, None] * v[None, None, :, None, None, :]
                M = np.moveaxis(M.reshape(P, K * K, -1), 1, -1)  # (P, R, K*K)
                R = M.shape[1]
                Mf = M.reshape(P * R, K * K).T
                for lo in range(0, Bf.shape[0], 2048):
                    val = (Bf[lo : lo + 2048] @ Mf).reshape(-1, P, R)
                    best[lo : lo + 2048] = np.maximum(best[lo : lo + 2048], np.max(np.sqrt(np.sum(val * val, axis=-1)), axis=1))
        return best.reshape(lead)


def _expand_dir(v: Array, extra: int) -> Array:
    # (K, d_out) -> (K, 1, ..., 1, d_out) aligned after the derivative axes
    return v.reshape((v.shape[0],) + (1,) * extra + (v.shape[1],))


_PAIR_CACHE: dict[int, tuple[Array, Array]] = {}


def default_two_point_pairs(d: int) -> tuple[Array, Array]:
    if d not in _PAIR_CACHE:
        if d == 1:
            ax = np.linspace(-5.0, 5.0, 21)
            X, Y = np.meshgrid(ax, ax, indexing="ij")
            _PAIR_CACHE[d] = (X.reshape(-1, 1), Y.reshape(-1, 1))
        else:
            rng = np.random.default_rng(12345)
            _PAIR_CACHE[d] = (rng.uniform(-5, 5, (512, d)), rng.uniform(-5, 5, (512, d)))
    return _PAIR_CACHE[d]


@dataclass(frozen=True, eq=False)
class SmoothField:
    basis: GaussianBasis
    coeffs: Array

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.basis.K,):
            raise ValueError("coefficient vector does not match the basis")
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x: Array) -> Array:
        return self.basis.field_values(self.coeffs, x)

    def jacobian(self, x: Array) -> Array:
        return self.basis.field_jacobian(self.coeffs, x)

    def cb_norm(self, order: int = 3, lattice: Array | None = None) -> float:
        return float(self.basis.lattice_norm(self.coeffs, order, lattice))

    def sobolev_proxy(self, k: int = 2) -> float:
        """``sum_k c_k^2 (1 + lambda_k^{-2})^k``."""
        return float(np.sum(self.coeffs**2 * (1.0 + self.basis.inv_var) ** k))

    def rows(self) -> list[list[float]]:
        b = self.basis
        return [list(b.centers[k]) + [b.widths[k]] + list(b.directions[k]) + [self.coeffs[k]] for k in range(b.K)]

    @staticmethod
    def row_schema(d: int) -> list[str]:
        return [f"center_{i + 1}" for i in range(d)] + ["width"] + [f"direction_{i + 1}" for i in range(d)] + ["coeff"]

    @classmethod
    def from_rows(cls, rows: Array, d: int) -> "SmoothField":
        rows = np.asarray(rows, dtype=float).reshape(-1, 2 * d + 2)
        basis = GaussianBasis(rows[:, :d], rows[:, d], rows[:, d + 1 : 2 * d + 1])
        return cls(basis, rows[:, -1])


def damped_identity_basis(d: int = 1, width: float = 10.0, offset: float | None = None, scale: float = 1.0) -> tuple[GaussianBasis, Array]:
    """Atoms and coefficients for ``x -> scale * x * exp(-|x|^2/(2 width^2))`` (approx.).

    Uses the centred difference ``lambda^2 (g(x - h e_i) - g(x + h e_i)) / (2h)``
    along each axis, so the field is close to the identity on ``|x| << width``.
    The relative error of the difference is ``(x h / width^2)^2 / 6``, so the
    offset ``h`` defaults to ``width / 10``: a small offset buys nothing and
    inflates the coefficients to ``width^2 / (2h)``, which then cancel badly.
    """
    offset = 0.1 * width if offset is None else offset
    centers, dirs, coeffs = [], [], []
    for i in range(d):
        e = np.eye(d)[i]
        for sgn in (1.0, -1.0):
            centers.append(sgn * offset * e)
            dirs.append(e)
            coeffs.append(sgn * scale * width**2 / (2 * offset) * np.exp(offset**2 / (2 * width**2)))
    basis = GaussianBasis(np.array(centers), np.full(len(centers), width), np.array(dirs))
    return basis, np.array(coeffs)


def concat_bases(*bases: GaussianBasis) -> GaussianBasis:
    return GaussianBasis(
        np.concatenate([b.centers for b in bases]),
        np.concatenate([b.widths for b in bases]),
        np.concatenate([b.directions for b in bases]),
    )


# ---------------------------------------------------------------------------
# scalar functions: kernel slots and probes


@dataclass(frozen=True)
class ScalarFn:
    """Scalar test function with analytic gradient and Hessian.

    kinds: ``const``; ``coord`` (``y_index``); ``square`` (``y_index^2``);
    ``gauss`` (``amp exp(-|y-c|^2/(2 w^2))``); ``cos`` (``amp cos(k.y + phase)``).
    """

    kind: str
    index: int = 0
    center: tuple = ()
    width: float = 1.0
    amp: float = 1.0
    wave: tuple = ()
    phase: float = 0.0

    def value(self, y: Array) -> Array:
        y = np.asarray(y, dtype=float)
        if self.kind == "const":
            return np.full(y.shape[:-1], self.amp)
        if self.kind == "coord":
            return self.amp * y[..., self.index]
        if self.kind == "square":
            return self.amp * y[..., self.index] ** 2
        if self.kind == "gauss":
            u = y - np.asarray(self.center)
            return self.amp * np.exp(-0.5 * np.sum(u * u, axis=-1) / self.width**2)
        if self.kind == "cos":
            return self.amp * np.cos(y @ np.asarray(self.wave) + self.phase)
        raise ValueError(f"unknown scalar kind {self.kind!r}")

    def grad(self, y: Array) -> Array:
        y = np.asarray(y, dtype=float)
        d = y.shape[-1]
        out = np.zeros(y.shape)
        if self.kind == "coord":
            out[..., self.index] = self.amp
        elif self.kind == "square":
            out[..., self.index] = 2 * self.amp * y[..., self.index]
        elif self.kind == "gauss":
            u = y - np.asarray(self.center)
            out = -u / self.width**2 * self.value(y)[..., None]
        elif self.kind == "cos":
            k = np.asarray(self.wave)
            out = -self.amp * np.sin(y @ k + self.phase)[..., None] * k
        elif self.kind != "const":
            raise ValueError(f"unknown scalar kind {self.kind!r}")
        return out

    def hess(self, y: Array) -> Array:
        y = np.asarray(y, dtype=float)
        d = y.shape[-1]
        out = np.zeros(y.shape + (d,))
        if self.kind == "square":
            out[..., self.index, self.index] = 2 * self.amp
        elif self.kind == "gauss":
            u = y - np.asarray(self.center)
            s = 1.0 / self.width**2
            out = (s * s * u[..., :, None] * u[..., None, :] - s * np.eye(d)) * self.value(y)[..., None, None]
        elif self.kind == "cos":
            k = np.asarray(self.wave)
            out = -self.amp * np.cos(y @ k + self.phase)[..., None, None] * k[:, None] * k[None, :]
        elif self.kind not in ("const", "coord"):
            raise ValueError(f"unknown scalar kind {self.kind!r}")
        return out

    @property
    def lipschitz(self) -> float:
        if self.kind == "const":
            return 0.0
        if self.kind == "coord":
            return abs(self.amp)
        if self.kind == "gauss":
            return abs(self.amp) * np.exp(-0.5) / self.width
        if self.kind == "cos":
            return abs(self.amp) * float(np.linalg.norm(self.wave))
        return np.inf


def default_probes(d: int = 1, count: int = 32, seed: int = 7) -> list[ScalarFn]:
    """Bounded probe dictionary: Gaussian bumps and cosines on ``[-3, 3]^d``."""
    rng = np.random.default_rng(seed)
    probes = []
    for i in range(count):
        if i % 2 == 0:
            probes.append(ScalarFn("gauss", center=tuple(rng.uniform(-2.5, 2.5, d)), width=float(rng.uniform(0.6, 1.6))))
        else:
            probes.append(ScalarFn("cos", wave=tuple(rng.uniform(-1.2, 1.2, d)), phase=float(rng.uniform(0, 2 * np.pi))))
    return probes
