"""Continual retraining with neuron consolidation and bandit-driven replay and weight updates."""

from .bandits import Bandit, BanditPolicy
from .data import Dataset, DriftSpec, generate_sea, load_csv, load_idx
from .errors import (ConfigError, DimensionError, FormatError, InvalidInputError, NumericError,
                     RetrainError)
from .harness import ExperimentSpec, MethodSpec, SplitPlan, evaluate, run_experiment, split
from .nn import NetworkParams, backward, forward, mlp_specs
from .regularizers import Regularizer, RegularizerConfig, estimate_importance

__version__ = "0.1.0"

__all__ = [
    "Bandit", "BanditPolicy", "ConfigError", "Dataset", "DimensionError", "DriftSpec",
    "ExperimentSpec", "FormatError", "InvalidInputError", "MethodSpec", "NetworkParams",
    "NumericError", "Regularizer", "RegularizerConfig", "RetrainError", "SplitPlan", "backward",
    "estimate_importance", "evaluate", "forward", "generate_sea", "load_csv", "load_idx",
    "mlp_specs", "run_experiment", "split",
]
