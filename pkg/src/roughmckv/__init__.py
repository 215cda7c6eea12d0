"""Rough paths, rough drivers and McKean-Vlasov equations with common rough noise."""

from .core import (
    ControlFn,
    DefectReport,
    GreedyPartition,
    Path,
    RoughPath,
    TimeGrid,
    TwoParamIncrement,
    chen_defect,
    geometricity_defect,
    greedy_partition,
    holder_seminorm,
    lift_smooth_path,
    p_variation,
)
from .sewing import Germ, SewResult, sew
from .controlled import ControlledPath, integral_lift, rough_integral
from .fields import GaussianBasis, ScalarFn, SmoothField
from .drivers import FieldRoughPath, RoughDriver, driver_from_quadrature, driver_from_rough_path, driver_from_smooth_path
from .rde import DriverTooRough, PicardNotConverged, RdeSolution, SolverConfig, solve_davie, solve_picard
from .stochastic import (
    BrownianPath,
    KernelFamily,
    accumulation_statistics,
    brownian_lift,
    build_mixed_driver,
    build_w_sigma,
    build_z_beta,
    sample_brownian,
)
from .measures import (
    ControlledMeasure,
    EmpiricalPathMeasure,
    ParticleNoise,
    controlled_measure_norm,
    mckv_fixed_point,
    mean_field_step,
    wasserstein_rho,
)
from .fokker_planck import (
    FpDefectReport,
    UnboundedRoughDriver,
    average_ito_residual,
    fp_defect,
    nonlocal_fp_check,
    urd_from_rough_path,
)
from .io import emit_table

__version__ = "0.1.0"
