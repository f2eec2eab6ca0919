"""Bayesian multiple-changepoint regression with dependence between
adjacent segments: linear-time forward filtering with mixture collapsing
and rejection-control resampling, backward posterior simulation, and the
surrounding simulation-study machinery."""

from .conjugate import (
    batch_update,
    design_matrix,
    design_row,
    design_rows,
    posterior_update,
    predictive_density,
)
from .evaluation import (
    FitResult,
    accuracy_study,
    calibration_study,
    coverage,
    curve_draws,
    default_fit_prior,
    discontinuity_probability,
    empirical_bayes,
    fit_series,
    ks_uniform,
    mse,
    posterior_quantiles,
    power_study,
    thread_count,
)
from .filtering import (
    FilterHistory,
    FilterState,
    collapse_intercept,
    collapse_sigma,
    filter_init,
    filter_step,
    run_filter,
)
from .io import (
    RunConfig,
    UserInputError,
    atomic_write_text,
    format_config,
    parse_config,
    read_curve_csv,
    read_series_csv,
    write_series_csv,
)
from .model import (
    Hyperparams,
    ModelKind,
    NIGParams,
    NumericalError,
    Particle,
    SegmentationDraw,
    SegmentLengthPrior,
    TimeSeries,
)
from .resampling import ResampleConfig, resample
from .smoothing import (
    backward_log_weights,
    resimulate_parameters,
    sample_params_given_next,
    sample_posterior,
    sample_segmentation,
    transition_density,
)
from .synthesis import SyntheticSpec, inject_jump, simulate_from_prior, simulate_jump_series

__all__ = [
    "FilterHistory",
    "FilterState",
    "FitResult",
    "Hyperparams",
    "ModelKind",
    "NIGParams",
    "NumericalError",
    "Particle",
    "ResampleConfig",
    "RunConfig",
    "SegmentLengthPrior",
    "SegmentationDraw",
    "SyntheticSpec",
    "TimeSeries",
    "UserInputError",
    "accuracy_study",
    "atomic_write_text",
    "backward_log_weights",
    "batch_update",
    "calibration_study",
    "collapse_intercept",
    "collapse_sigma",
    "coverage",
    "curve_draws",
    "default_fit_prior",
    "design_matrix",
    "design_row",
    "design_rows",
    "discontinuity_probability",
    "empirical_bayes",
    "filter_init",
    "filter_step",
    "fit_series",
    "format_config",
    "inject_jump",
    "ks_uniform",
    "mse",
    "parse_config",
    "posterior_quantiles",
    "posterior_update",
    "power_study",
    "predictive_density",
    "read_curve_csv",
    "read_series_csv",
    "resample",
    "resimulate_parameters",
    "run_filter",
    "sample_params_given_next",
    "sample_posterior",
    "sample_segmentation",
    "simulate_from_prior",
    "simulate_jump_series",
    "thread_count",
    "transition_density",
    "write_series_csv",
]
