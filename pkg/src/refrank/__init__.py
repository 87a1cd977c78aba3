"""refrank: rank a paper corpus by citation relevance to long talk transcripts."""

__version__ = "0.1.0"

from .aggregate import ScorerParams, Strategy, aggregate, aggregate_backward
from .corpus import Corpus, PaperRecord, TalkRecord, compute_stats, filter_split, load_corpus
from .embed import EmbedderSpec, EmbeddingStore, HashingEmbedder, load_store, save_store
from .evaluation import (
    MetricsReport,
    average_precision_at_k,
    evaluate_run,
    frequency_baseline,
    map_at_k,
    precision_at_k,
    r_precision,
    recall_at_k,
)
from .model import DualEncoderHeads, encode_key, encode_query, score, score_batch
from .retrieve import PaperIndex, RankedList, batch_search, build_index, search
from .train import TrainConfig, adam_step, bce_loss_and_grads, build_batch, finite_diff_check, softmax_da_loss_and_grads, train

__all__ = [
    "__version__",
    "Corpus",
    "DualEncoderHeads",
    "EmbedderSpec",
    "EmbeddingStore",
    "HashingEmbedder",
    "MetricsReport",
    "PaperIndex",
    "PaperRecord",
    "RankedList",
    "ScorerParams",
    "Strategy",
    "TalkRecord",
    "TrainConfig",
    "adam_step",
    "aggregate",
    "aggregate_backward",
    "average_precision_at_k",
    "batch_search",
    "bce_loss_and_grads",
    "build_batch",
    "build_index",
    "compute_stats",
    "encode_key",
    "encode_query",
    "evaluate_run",
    "filter_split",
    "finite_diff_check",
    "frequency_baseline",
    "load_corpus",
    "load_store",
    "map_at_k",
    "precision_at_k",
    "r_precision",
    "recall_at_k",
    "save_store",
    "score",
    "score_batch",
    "search",
    "softmax_da_loss_and_grads",
    "train",
]
