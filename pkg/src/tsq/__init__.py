"""Continuous-time q-learning for jump-diffusion control under Tsallis entropy."""

from .entropy import EntropyParams, tsallis, tsallis_deriv
from .experiment import (
    ExperimentConfig,
    TraceRecord,
    load_config,
    preset_path,
    read_traces,
    run_experiment,
    write_summary,
    write_traces,
)
from .policy import QGaussian2D, entropy_integral, make_normalized, normalize_level
from .qlearn import (
    MartingaleQLearner,
    PenalizedPolicyQLearner,
    PenaltyWeights,
    Problem,
    Schedule,
    algorithm1_run,
    algorithm2_run,
    darkpool_problem,
    repo_problem,
    value_error,
)

__version__ = "0.1.0"

__all__ = [
    "EntropyParams",
    "ExperimentConfig",
    "MartingaleQLearner",
    "PenalizedPolicyQLearner",
    "PenaltyWeights",
    "Problem",
    "QGaussian2D",
    "Schedule",
    "TraceRecord",
    "algorithm1_run",
    "algorithm2_run",
    "darkpool_problem",
    "entropy_integral",
    "load_config",
    "make_normalized",
    "normalize_level",
    "preset_path",
    "read_traces",
    "repo_problem",
    "run_experiment",
    "tsallis",
    "tsallis_deriv",
    "value_error",
    "write_summary",
    "write_traces",
    "__version__",
]
