"""Registry of the test corpora and their experiment configuration.

Every corpus instance is built from an :class:`ExperimentConfig`; ids are
``smooth-linear``, ``brownian-linear``, ``flow``, ``ou``,
``meanfield-linear`` and ``meanfield-ou``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Path, RoughPath, TimeGrid, lift_smooth_path
from .drivers import FieldRoughPath, RoughDriver, driver_from_quadrature, driver_from_smooth_path
from .fields import GaussianBasis, ScalarFn, concat_bases, damped_identity_basis, default_probes
from .stochastic import KernelFamily, sample_brownian

Array = np.ndarray

IDENTITY_WIDTH = 1.0e4
FLAT_WIDTH = 1.0e4


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "smooth-linear"
    T: float = 1.0
    level: int = 8
    alpha: float = 0.45
    N: int = 1024
    seed: int = 0
    streams: int = 0  # first Brownian stream id
    sigma: float | None = None
    z_amplitude: float = 0.3
    z_drift: float = 0.3
    m0: float = 1.0
    s0: float = 0.5
    xi: float = 1.0
    probe_set: str = "default"
    probe_count: int = 8
    levels: tuple = (4, 5, 6, 7, 8, 9, 10)
    fp_levels: tuple = (0, 1, 2, 3, 4, 5)
    window_beta: float = 1e-3
    tol: float = 1e-6
    samples: int = 1000
    out: str = "out"

    def __post_init__(self):
        if not (1 / 3 < self.alpha < 1 / 2):
            raise ValueError(f"alpha must lie in (1/3, 1/2), got {self.alpha}")
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.level < 1:
            raise ValueError("level must be at least 1")
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        object.__setattr__(self, "fp_levels", tuple(int(v) for v in self.fp_levels))

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.T, self.level)


def config_fields() -> set[str]:
    return {f.name for f in dataclasses.fields(ExperimentConfig)}


def smooth_z(grid: TimeGrid, amplitude: float = 0.3, drift: float = 0.3, alpha: float = 0.45) -> RoughPath:
    """``Z_t = a sin(2 pi t / T) + b t`` lifted canonically."""
    t = grid.points
    return lift_smooth_path(Path(grid, (amplitude * np.sin(2 * np.pi * t / grid.T) + drift * t)[:, None]), alpha)


def identity_field(d: int = 1) -> tuple[GaussianBasis, Array]:
    return damped_identity_basis(d, width=IDENTITY_WIDTH)


def flat_basis(d: int = 1) -> GaussianBasis:
    """One very wide atom per axis: a field constant to ``|x|^2 / 2e8`` near the origin."""
    return GaussianBasis(np.zeros((d, d)), np.full(d, FLAT_WIDTH), np.eye(d))


def initial_particles(cfg: ExperimentConfig, N: int | None = None) -> Array:
    """Gaussian initial law ``N(m0, s0^2)`` drawn from the config seed (stream block 2^32)."""
    from .stochastic import stream_generator

    N = cfg.N if N is None else N
    gen = stream_generator(cfg.seed, 2**32 + cfg.streams, 0)
    return cfg.m0 + cfg.s0 * gen.standard_normal((N, 1))


def probe_set(cfg: ExperimentConfig, d: int = 1) -> list[ScalarFn]:
    if cfg.probe_set != "default":
        raise KeyError(f"unknown probe set {cfg.probe_set!r}")
    return default_probes(d, cfg.probe_count)


# ---------------------------------------------------------------------------
# RDE corpora


def smooth_linear_driver(cfg: ExperimentConfig, level: int | None = None) -> RoughDriver:
    """``dx = x dt`` with the identity field expanded on two wide atoms."""
    basis, c = identity_field()
    grid = TimeGrid.uniform(cfg.T, cfg.level if level is None else level)
    return driver_from_quadrature(basis, np.tile(c, (len(grid), 1)), grid, cfg.alpha)


def brownian_linear_driver(cfg: ExperimentConfig, stream: int, level: int | None = None) -> tuple[RoughDriver, Array]:
    """``dx = x o dW`` driven by the piecewise-linear Brownian path; returns the driver and ``W``."""
    basis, c = identity_field()
    grid = TimeGrid.uniform(cfg.T, cfg.level if level is None else level)
    w = sample_brownian(1, grid, cfg.seed, stream).values[:, 0]
    return driver_from_smooth_path(basis, Path(grid, w[:, None] * c[None, :]), cfg.alpha), w


def rde_solver_config(cfg: ExperimentConfig):
    """Admission is enforced except on Brownian drivers, where it is only recorded.

    With ``C = 8`` and the lattice ``C_b`` norm the identity field needs
    ``|dW| < 0.0125`` per step, i.e. about ``2^17`` steps on ``[0, 1]``.
    """
    from .rde import SolverConfig

    if cfg.experiment == "brownian-linear":
        return SolverConfig(on_violation="warn", max_refine=0)
    return SolverConfig()


def flow_driver(cfg: ExperimentConfig) -> tuple[RoughDriver, RoughPath]:
    """``dx = x dZ`` with smooth ``Z``; the sigma = 0 flow corpus."""
    basis, c = identity_field()
    z = smooth_z(cfg.grid, cfg.z_amplitude, cfg.z_drift, cfg.alpha)
    coef = lift_smooth_path(Path(cfg.grid, z.z.values[:, :1] * c[None, :]), cfg.alpha)
    return RoughDriver(basis, coef), z


# ---------------------------------------------------------------------------
# McKean-Vlasov corpora


def meanfield_kernel(sigma: float) -> KernelFamily:
    """``sigma(mu, x) = sigma``, ``beta(mu, x) = mu(id) psi(x)`` with ``psi`` almost 1."""
    basis = flat_basis(1)
    return KernelFamily(
        basis,
        (ScalarFn("const"), ScalarFn("coord")),
        np.array([[[sigma]], [[0.0]]]),
        np.array([[[0.0]], [[1.0]]]),
    )


def ou_kernel(sigma: float) -> KernelFamily:
    """Law-independent ``sigma(x) = sigma`` and ``beta(x) = x``."""
    ident, c = identity_field()
    basis = concat_bases(ident, flat_basis(1))
    K = basis.K
    s = np.zeros((1, 1, K))
    s[0, 0, -1] = sigma
    b = np.zeros((1, 1, K))
    b[0, 0, :-1] = c
    return KernelFamily(basis, (ScalarFn("const"),), s, b)


CORPORA = {
    "smooth-linear": "deterministic linear RDE dx = x dt, exact solution xi e^t",
    "brownian-linear": "linear RDE along a piecewise-linear Brownian path, exact solution xi e^{W_t}",
    "flow": "particles of dx = x dZ with smooth Z and Gaussian initial law (sigma = 0)",
    "ou": "dx = sigma dW + x dZ, Gaussian marginals in closed form",
    "meanfield-linear": "dx = E[x] dZ (sigma = 0); mean m0 e^{Z_t}",
    "meanfield-ou": "dx = sigma dW + E[x] dZ; mean m0 e^{Z_t}",
}

DEFAULT_SIGMA = {"meanfield-linear": 0.0, "meanfield-ou": 1.0, "ou": 1.0, "flow": 0.0}


def resolve_sigma(cfg: ExperimentConfig) -> float:
    return DEFAULT_SIGMA.get(cfg.experiment, 0.0) if cfg.sigma is None else float(cfg.sigma)


def kernel_for(cfg: ExperimentConfig) -> KernelFamily:
    if cfg.experiment in ("meanfield-linear", "meanfield-ou"):
        return meanfield_kernel(resolve_sigma(cfg))
    if cfg.experiment == "ou":
        return ou_kernel(resolve_sigma(cfg))
    raise KeyError(f"experiment {cfg.experiment!r} has no kernel")
