"""Differentiable F-beta training for class-imbalanced classification."""

from .errors import ConfigurationError, DataError, NonFiniteError, StateError
from .nn import AdamState, DenseLayer, Network, adam_step, init_network
from .losses import DeepFSpec, SoftCounts, deepf_loss, normalize_activations, soft_counts, xent_loss
from .metrics import ConfusionStats, MetricsReport, confusion, evaluate_predictions

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ConfigurationError",
    "ConfusionStats",
    "DataError",
    "DeepFSpec",
    "DenseLayer",
    "MetricsReport",
    "Network",
    "NonFiniteError",
    "SoftCounts",
    "StateError",
    "adam_step",
    "confusion",
    "deepf_loss",
    "evaluate_predictions",
    "init_network",
    "normalize_activations",
    "soft_counts",
    "xent_loss",
]
