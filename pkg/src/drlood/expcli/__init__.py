"""Configuration-driven experiments and the ``drlood`` command line."""
from drlood.expcli.config import ExperimentConfig, default_config, from_text, load, to_text
from drlood.expcli.experiments import (
    RunRecord,
    run_ablation,
    run_compare,
    run_ensemble_compare,
    run_epsilon_sweep,
    run_sigma_study,
)

__all__ = [
    "ExperimentConfig", "RunRecord", "default_config", "from_text", "load", "run_ablation",
    "run_compare", "run_ensemble_compare", "run_epsilon_sweep", "run_sigma_study", "to_text",
]
