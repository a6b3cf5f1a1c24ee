"""Selective state-space forecaster with an information-bottleneck minimality
regularizer, plus the experiment harness around it."""

from .config import ExperimentConfig, parse_config
from .data import NoiseSpec, SeriesFrame, SyntheticSpec, gen_synthetic, inject_impulse_noise, load_csv
from .estimators import LinearForecaster, PersistenceForecaster, SsmForecaster
from .exceptions import (
    ConfigurationError,
    DataError,
    IbssmError,
    NumericOverflowError,
    StabilityError,
    TrainingDivergedError,
)
from .harness import MetricsRecord, SweepResult, evaluate, lambda_sweep, robustness_eval
from .losses import LossBreakdown, prediction_loss, rate_term, state_invariance_kl, total_loss
from .ssm import DiscreteDynamics, ForwardTrace, GateOutput, SsmConfig, forward

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DataError",
    "ExperimentConfig",
    "DiscreteDynamics",
    "ForwardTrace",
    "GateOutput",
    "IbssmError",
    "LinearForecaster",
    "LossBreakdown",
    "MetricsRecord",
    "NoiseSpec",
    "NumericOverflowError",
    "PersistenceForecaster",
    "SeriesFrame",
    "SsmConfig",
    "SsmForecaster",
    "StabilityError",
    "SweepResult",
    "SyntheticSpec",
    "TrainingDivergedError",
    "evaluate",
    "forward",
    "gen_synthetic",
    "inject_impulse_noise",
    "lambda_sweep",
    "load_csv",
    "parse_config",
    "prediction_loss",
    "rate_term",
    "robustness_eval",
    "state_invariance_kl",
    "total_loss",
    "__version__",
]
