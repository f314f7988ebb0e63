"""SSE regularization: random embedding-index replacement for MF and BPR recommenders."""

from sse_rec._accel import USE_NUMBA
from sse_rec.dataset import IdMap, InteractionDataset, Split, gen_synthetic, load_tsv, split_holdout
from sse_rec.embedding import EmbeddingTable, ModelParams, apply_dropout, init_table
from sse_rec.graph import (
    KnowledgeGraph,
    TransitionModel,
    build_item_graph,
    sample_joint,
    sample_replacement,
    transition_prob,
)
from sse_rec.models import TrainConfig, TrainReport, sse_objective_exact, train

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA",
    "EmbeddingTable",
    "IdMap",
    "InteractionDataset",
    "KnowledgeGraph",
    "ModelParams",
    "Split",
    "TrainConfig",
    "TrainReport",
    "TransitionModel",
    "apply_dropout",
    "build_item_graph",
    "gen_synthetic",
    "init_table",
    "load_tsv",
    "sample_joint",
    "sample_replacement",
    "split_holdout",
    "sse_objective_exact",
    "train",
    "transition_prob",
]
