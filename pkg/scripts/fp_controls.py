"""Fokker-Planck defect exponents with and without the negative controls."""

import argparse

from roughmckv import corpus
from roughmckv.corpus import ExperimentConfig
from roughmckv.drivers import FieldRoughPath
from roughmckv.fokker_planck import corrupt_area, fp_defect, nonlocal_fp_check, urd_from_rough_path
from roughmckv.io import emit_table
from roughmckv.measures import ControlledMeasure, ParticleNoise, mckv_fixed_point
from roughmckv.rde import davie_loop


def flow_rows(cfg, probes, shift):
    d, _ = corpus.flow_driver(cfg)
    a, b = d.step_coefficients()
    paths = davie_loop(d.basis, corpus.initial_particles(cfg), a, b)
    out = []
    for label, coef in (("clean", d.coef), (f"area+{shift}", corrupt_area(d.coef, shift))):
        r = fp_defect(paths, None, urd_from_rough_path(FieldRoughPath(d.basis, coef)), probes, cfg.fp_levels, alpha=cfg.alpha)
        out.append(("flow", label, r.exponent, r.verdict))
    return out


def nonlocal_rows(cfg, probes, shift):
    k = corpus.kernel_for(cfg)
    z = corpus.smooth_z(cfg.grid)
    x0 = corpus.initial_particles(cfg)
    noise = ParticleNoise.for_particles(cfg.N, cfg.seed, k.noise_dim)
    res = mckv_fixed_point(ControlledMeasure.constant(x0, k.basis, z), k, z, noise, tol=cfg.tol, window_beta=cfg.window_beta)
    dw = noise.increments(z.grid)
    variants = [("clean", {}), (f"area+{shift}", {"area_shift": shift})]
    if corpus.resolve_sigma(cfg) > 0:
        variants.append(("sigma/2", {"sigma_scale": 0.5}))
    out = []
    for label, kw in variants:
        r = nonlocal_fp_check(res, k, z, probes, dw, cfg.fp_levels, **kw)
        out.append((cfg.experiment, label, r.exponent, r.verdict))
    return out


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=4096)
    ap.add_argument("--shift", type=float, default=1.0)
    ap.add_argument("--out", default="out/fp_controls.csv")
    a = ap.parse_args()
    probes = corpus.probe_set(ExperimentConfig())
    rows = flow_rows(ExperimentConfig(experiment="flow", N=10_000), probes, a.shift)
    for exp in ("meanfield-linear", "meanfield-ou"):
        rows += nonlocal_rows(ExperimentConfig(experiment=exp, N=a.N), probes, a.shift)
    emit_table(rows, ["corpus", "variant", "exponent", "verdict"], a.out)
    for r in rows:
        print(*r)
