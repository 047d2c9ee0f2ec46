"""Simulation of slow-fast systems driven by mixed fractional Brownian noise.

Level-2 rough-path lifts of mixed fBm/BM drivers, a third-order RDE solver,
coupled slow-fast integration with averaging experiments, Cameron-Martin
rate-function optimization and importance-sampled rare-event probes, plus a
reproducible CLI harness.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DivergenceError,
    InfeasibleError,
    ParameterError,
    ResourceError,
    RoughflowError,
)
from .grids import HurstParam, TimeGrid
from .drivers import (
    CameronMartinControl,
    MixedDriverPath,
    cm_norm,
    cm_to_path,
    read_control_csv,
    read_path_csv,
    sample_bm,
    sample_fbm,
    sample_mixed,
    volterra_kernel,
    volterra_matrix,
    write_control_csv,
    write_path_csv,
    zero_control,
)
from .lift import (
    HolderReport,
    Level2RoughPath,
    dilate,
    holder_norms,
    lift_cm,
    lift_mixed,
    rough_distance,
    translate,
)
from .rde import (
    ControlledPath,
    LipschitzReport,
    VectorField,
    controlled_distance,
    davie_step,
    lipschitz_probe,
    path_holder_norm,
    solve_rde,
)
from .slowfast import (
    InvariantMeasureEstimate,
    ScaleParams,
    SlowFastModel,
    auxiliary_fast,
    averaged_drift,
    averaging_experiment,
    builtin_model,
    check_assumptions,
    estimate_invariant_measure,
    frozen_fast,
    integrate_effective,
    integrate_slowfast,
    mc_slow_paths,
    slow_driver_lift,
    tabulate_fbar,
)
from .ldp import (
    LdpProbe,
    RateProblem,
    RateResult,
    lqr_rate_oracle,
    mc_probability,
    rate_along_path,
    skeleton_values,
    solve_rate,
    weak_convergence_probe,
)

__all__ = [name for name in dir() if not name.startswith("_")]
