"""Self-convergence in the particle count.

For each replicate the N- and 2N-particle fixed points share seeds, so the
first N particles of the larger system start from the same data. The gap is
the largest W1 distance between time marginals.
"""

import argparse
from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from roughmckv import corpus
from roughmckv.core import fit_exponent
from roughmckv.corpus import ExperimentConfig
from roughmckv.io import emit_table
from roughmckv.measures import ControlledMeasure, ParticleNoise, mckv_fixed_point


@dataclass
class SweepConfig:
    experiment: str = "meanfield-ou"
    level: int = 6
    Ns: tuple = (64, 128, 256, 512, 1024)
    replicates: int = 20
    out: str = "out/n_sweep.csv"


def terminal_paths(exp: str, N: int, seed: int, level: int) -> np.ndarray:
    cfg = ExperimentConfig(experiment=exp, N=N, seed=seed, level=level)
    k = corpus.kernel_for(cfg)
    z = corpus.smooth_z(cfg.grid)
    x0 = corpus.initial_particles(cfg)
    noise = ParticleNoise.for_particles(N, seed, k.noise_dim)
    res = mckv_fixed_point(ControlledMeasure.constant(x0, k.basis, z), k, z, noise, tol=cfg.tol, window_beta=cfg.window_beta)
    return res.measure.measure.paths[:, :, 0]


def sweep(sc: SweepConfig):
    Ns = list(sc.Ns)
    gaps = np.zeros((sc.replicates, len(Ns)))
    for r in range(sc.replicates):
        paths = {N: terminal_paths(sc.experiment, N, r, sc.level) for N in Ns + [2 * Ns[-1]]}
        for a, N in enumerate(Ns):
            p, q = paths[N], paths[2 * N]
            gaps[r, a] = max(wasserstein_distance(p[:, j], q[:, j]) for j in range(p.shape[1]))
    mean = gaps.mean(axis=0)
    sd = gaps.std(axis=0, ddof=1) if sc.replicates > 1 else np.zeros(len(Ns))
    slope = fit_exponent(Ns, mean)
    rows = [(N, m, s) for N, m, s in zip(Ns, mean, sd)] + [("slope", slope, float("nan"))]
    emit_table(rows, ["N", "mean_gap", "sd_gap"], sc.out)
    return slope


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--experiment", default="meanfield-ou")
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--level", type=int, default=6)
    ap.add_argument("--out", default="out/n_sweep.csv")
    a = ap.parse_args()
    s = sweep(SweepConfig(a.experiment, a.level, replicates=a.replicates, out=a.out))
    print(f"slope={s:.4f}")
