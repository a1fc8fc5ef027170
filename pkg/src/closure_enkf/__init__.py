"""Closure-term estimation for PDEs with an augmented-state ensemble Kalman filter."""

from .basis import BasisSet, build_basis, project_field, synthesize_field
from .config import ExperimentConfig, desk_scale, preset
from .dynamics import solve_truth, step_augmented
from .enkf import AugmentedEnsemble, CoefficientPrior, FilterResult, analysis_update, run_filter
from .errors import (
    ClosureEnKFError, ConfigurationError, DimensionError, DivergenceError, SingularityError, UndefinedMetricError,
)
from .estimate import grid_search, negative_log_marginal_likelihood, standardized_l2_error
from .experiment import run_experiment
from .grid import BoundaryCondition, SpatialGrid

__version__ = "0.1.0"

__all__ = [
    "AugmentedEnsemble", "BasisSet", "BoundaryCondition", "ClosureEnKFError", "CoefficientPrior",
    "ConfigurationError", "DimensionError", "DivergenceError", "ExperimentConfig", "FilterResult",
    "SingularityError", "SpatialGrid", "UndefinedMetricError", "analysis_update", "build_basis", "desk_scale",
    "grid_search", "negative_log_marginal_likelihood", "preset", "project_field", "run_experiment", "run_filter",
    "solve_truth", "standardized_l2_error", "step_augmented", "synthesize_field",
]
