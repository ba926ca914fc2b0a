"""NR time/frequency-domain scheduling simulator with a learned selection-sort TD scheduler."""

from .config import ConfigError, ExperimentConfig
from .experiments import RunSummary, percentiles, run_eval, starvation_sweep
from .simcore import ResourceGridConfig, Simulator, TrafficConfig, fd_schedule
from .training import run_training

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResourceGridConfig",
    "RunSummary",
    "Simulator",
    "TrafficConfig",
    "fd_schedule",
    "percentiles",
    "run_eval",
    "run_training",
    "starvation_sweep",
]

__version__ = "0.1.0"
