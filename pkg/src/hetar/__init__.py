"""Adaptive and broken adaptive ridge estimation for regression with log-linear variance."""

__version__ = "0.1.0"

from .errors import (
    AllPointsFailed,
    ConfigError,
    ConstantVarianceColumn,
    ConvergenceFailure,
    DataError,
    DimensionMismatch,
    HetarError,
    IllConditionedWarning,
    InvalidFolds,
    MissingValue,
    NonFiniteWeights,
    NotPositiveDefinite,
    ParseError,
    QuadratureFailure,
    SchemaMismatch,
)
from .estimator import (
    BAR,
    Dataset,
    EstimatorState,
    FitOptions,
    FitResult,
    TuningSchedule,
    ar_alpha_step,
    ar_beta_step,
    ar_fit,
    assumption_diagnostics,
    bar_fit,
    fit,
    predict,
    ridge_alpha_init,
    ridge_beta_init,
    support,
)
from .io import DataFileSchema, ModelArtifact, ingest
from .numerics import condition_estimate, eigen_extremes, solve_spd, weighted_gram
from .preprocessing import Standardization
from .simulation import NoiseKind, SimulationSpec, compute_c0, gen_dataset, run_trials, summarize
from .tuning import CvPlan, Grid, grid_search, kfold_split, staged_search

__all__ = [name for name in dir() if not name.startswith("_")]
