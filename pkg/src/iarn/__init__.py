"""Attention-gated recurrent networks for temporal recommendation.

The package trains and evaluates a pair of interacting recurrent networks
that score each time step of a user's and an item's history with attention
gates, plus the simpler backbones used for ablation (plain RNN, LSTM, and
own-side-only attention gating).
"""

from .data import (EntitySequence, FeatureTaxonomy, Interaction,
                   InteractionLog, build_sequences, filter_min_ratings,
                   load_taxonomy, min_length_filter, parse_interactions,
                   temporal_split)
from .evaluation import (AucProtocol, EvalReport, auc, evaluate_rmse,
                         export_attention, rmse, sweep_min_length)
from .model import (AttentionTrace, BiSummary, ColdStartError, ModelConfig,
                    ModelParameters, Recommender, attention_trace, predict)
from .numerics import ContractError, GradientTape, ShapeError, Tensor
from .training import TrainConfig, TrainingDivergedError, train

__version__ = "0.1.0"

__all__ = [
    "AttentionTrace", "AucProtocol", "BiSummary", "ColdStartError",
    "ContractError", "EntitySequence", "EvalReport", "FeatureTaxonomy",
    "GradientTape", "Interaction", "InteractionLog", "ModelConfig",
    "ModelParameters", "Recommender", "ShapeError", "Tensor", "TrainConfig",
    "TrainingDivergedError", "attention_trace", "auc", "build_sequences",
    "evaluate_rmse", "export_attention", "filter_min_ratings",
    "load_taxonomy", "min_length_filter", "parse_interactions", "predict",
    "rmse", "sweep_min_length", "temporal_split", "train",
]
