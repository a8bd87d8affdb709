"""Rule learning for knowledge base completion with logical neural network operators."""

__version__ = "0.1.0"

from .backends import DensePathBackend, FrontierPathBackend, make_backend
from .estimators import ChainOfMixturesKBC, MixtureOfPathsKBC
from .evaluation import RankingReport, evaluate, hits_at_k, mrr_of, rank_query
from .kg import DatasetSplits, KnowledgeGraph, KnownTails, load_dataset, load_triples
from .kge import EdgeScorer, EmbeddingTable, load_embeddings, save_embeddings, train_embeddings
from .models import CmModel, MpModel, Rule
from .paths import PathCodec, PathCountTable, PathVocabulary, count_paths
from .training import TrainConfig, train_all, train_relation

__all__ = [
    "ChainOfMixturesKBC", "CmModel", "DatasetSplits", "DensePathBackend", "EdgeScorer", "EmbeddingTable",
    "FrontierPathBackend", "KnowledgeGraph", "KnownTails", "MixtureOfPathsKBC", "MpModel", "PathCodec",
    "PathCountTable", "PathVocabulary", "RankingReport", "Rule", "TrainConfig", "count_paths", "evaluate",
    "hits_at_k", "load_dataset", "load_embeddings", "load_triples", "make_backend", "mrr_of", "rank_query",
    "save_embeddings", "train_all", "train_embeddings", "train_relation",
]
