"""Configuration, seeding, experiment orchestration and result persistence."""

from .config import Config, ConfigError, ExperimentConfig, seed_sequence
from .experiments import Check, RunOutcome, output_root, run_experiment

__all__ = [
    "Check",
    "Config",
    "ConfigError",
    "ExperimentConfig",
    "RunOutcome",
    "output_root",
    "run_experiment",
    "seed_sequence",
]
