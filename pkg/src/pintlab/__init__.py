"""Time-parallel ODE/PDE integration with learned correction models.

The package splits an integration horizon into intervals, propagates them
concurrently with an expensive fine solver, and stitches the boundaries
with a cheap coarse solver plus a corrector that predicts the fine-coarse
discrepancy: the classic lookup rule, a nearest-neighbor average, a GP on
all collected evaluations, or a GP on a local neighborhood. See engine.run
for the main entry point and the pint-lab script for the benchmark CLI.
"""

from .dataset import SUBSET_STRATEGIES, CorrectionStore
from .engine import (
    CORRECTORS,
    GpSettings,
    PintConfig,
    RunReport,
    normalized_setup,
    run,
    run_serial,
)
from .gp import (
    DEFAULT_NUGGET_GRID,
    GpHyperparams,
    GpModel,
    build_model,
    fit_coordinate_models,
    fit_hyperparams,
    gram_matrix,
    kernel_eval,
    log_marginal_likelihood,
)
from .integrators import SUPPORTED_ORDERS, SolverSpec, integrate, integrate_interval, rk_step
from .perf import (
    SpeedupEstimate,
    TimingBreakdown,
    empirical_speedup,
    speedup,
    theoretical_runtime,
    upper_bound_speedup,
)
from .systems import (
    SYSTEM_BUILDERS,
    NormalizationMap,
    SystemDefinition,
    bounds_from_states,
    make_system,
    normalize_system,
)

__version__ = "0.1.0"

__all__ = [
    "CORRECTORS",
    "CorrectionStore",
    "DEFAULT_NUGGET_GRID",
    "GpHyperparams",
    "GpModel",
    "GpSettings",
    "NormalizationMap",
    "PintConfig",
    "RunReport",
    "SUBSET_STRATEGIES",
    "SUPPORTED_ORDERS",
    "SYSTEM_BUILDERS",
    "SolverSpec",
    "SpeedupEstimate",
    "SystemDefinition",
    "TimingBreakdown",
    "bounds_from_states",
    "build_model",
    "empirical_speedup",
    "fit_coordinate_models",
    "fit_hyperparams",
    "gram_matrix",
    "integrate",
    "integrate_interval",
    "kernel_eval",
    "log_marginal_likelihood",
    "make_system",
    "normalize_system",
    "normalized_setup",
    "rk_step",
    "run",
    "run_serial",
    "speedup",
    "theoretical_runtime",
    "upper_bound_speedup",
]
