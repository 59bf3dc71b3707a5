"""spikelab: a desk-scale lab for training spiking and conventional
networks, converting ANNs to SNNs, and auditing membership privacy."""

from .errors import DivergenceError, FormatError, SpikelabError, ValidationError
from .rng import Rng
from .harness import (ExperimentConfig, ExperimentReport, balanced_accuracy,
                      emit_report, gap_trend, run_experiment, spearman_rank)
from .estimators import AnnClassifier, SpikingClassifier, ThresholdMembershipAttack

__version__ = "0.1.0"

__all__ = [
    "AnnClassifier", "DivergenceError", "ExperimentConfig", "ExperimentReport",
    "FormatError", "Rng", "SpikelabError", "SpikingClassifier",
    "ThresholdMembershipAttack", "ValidationError", "balanced_accuracy",
    "emit_report", "gap_trend", "run_experiment", "spearman_rank",
]
