"""Find one common object per bag across a handful of feature collections.

Selections minimise a pairwise-plus-unary energy built from a learned gated
relation scorer; inference is a join-and-prune beam search with exhaustive,
loopy min-sum BP and ICM baselines alongside.
"""
from .core import BACKGROUND, Bag, Episode, UnlabeledError, energy, relation_label, relation_to_bag, success_rate
from .inference import (
    ExhaustiveCapError,
    InferenceResult,
    exhaustive_infer,
    greedy_infer,
    icm_infer,
    loopy_bp_infer,
    unary_only_infer,
)
from .potentials import (
    CosineRelation,
    Potentials,
    RelationModel,
    RelationProvider,
    TableProvider,
    UnaryMode,
    aggregate_unary,
    cosine_baseline_provider,
)
from .synth import GeneratorConfig, generate_episode, generate_episodes, load_dataset, save_dataset
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND", "Bag", "Episode", "UnlabeledError", "energy", "relation_label", "relation_to_bag",
    "success_rate", "ExhaustiveCapError", "InferenceResult", "exhaustive_infer", "greedy_infer",
    "icm_infer", "loopy_bp_infer", "unary_only_infer", "CosineRelation", "Potentials", "RelationModel",
    "RelationProvider", "TableProvider", "UnaryMode", "aggregate_unary", "cosine_baseline_provider",
    "GeneratorConfig", "generate_episode", "generate_episodes", "load_dataset", "save_dataset",
    "TrainConfig", "train",
]
