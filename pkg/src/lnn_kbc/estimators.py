"""scikit-learn style wrappers around per-relation rule training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .backends import make_backend
from .evaluation import evaluate
from .kg import KnownTails, augment_inverses
from .kge import EdgeScorer
from .training import TrainConfig, train_all
from .validation import check_is_fitted, check_queries, check_triples


class _PathRuleKBC(BaseEstimator):
    _kind = "mp"

    def __init__(
        self,
        max_length: int = 3,
        step_size: float = 1.0,
        margin: float = 1.0,
        batch_size: int = 8,
        max_iterations: int = 1000,
        patience: int = 10,
        eval_every: int = 20,
        alpha: float = 0.7,
        seed: int = 0,
        backend: str = "auto",
        threads: int = 1,
        step_scale: str = "relative",
    ):
        self.max_length = max_length
        self.step_size = step_size
        self.margin = margin
        self.batch_size = batch_size
        self.max_iterations = max_iterations
        self.patience = patience
        self.eval_every = eval_every
        self.alpha = alpha
        self.seed = seed
        self.backend = backend
        self.threads = threads
        self.step_scale = step_scale

    def _config(self) -> TrainConfig:
        return TrainConfig(
            step_size=self.step_size, margin=self.margin, batch_size=self.batch_size,
            max_iterations=self.max_iterations, max_length=self.max_length, seed=self.seed,
            alpha=self.alpha, patience=self.patience, eval_every=self.eval_every, model=self._kind,
            step_scale=self.step_scale,
        )

    def _edge_scorer(self):
        return None

    def fit(self, X, y=None, *, X_valid=None, num_entities: int | None = None, num_relations: int | None = None):
        """Learn one rule model per relation (inverses included) from triples ``X``.

        ``X_valid`` enables early stopping on validation MRR.
        """
        X = check_triples(X, num_entities, num_relations)
        if len(X) == 0:
            raise ValueError("cannot fit on zero triples")
        V = int(num_entities if num_entities is not None else X[:, [0, 2]].max() + 1)
        R = int(num_relations if num_relations is not None else X[:, 1].max() + 1)
        valid = None if X_valid is None else check_triples(X_valid, V, R, "X_valid")
        self.graph_ = augment_inverses(X, R, V)
        self.backend_ = make_backend(self.graph_, self.max_length, self._edge_scorer(), self.backend)
        known = KnownTails(np.concatenate([X, valid]) if valid is not None else X, R, V)
        results = train_all(self.graph_, self._config(), self.backend_, valid, known, threads=self.threads)
        self.models_ = {r: res.model for r, res in results.items() if res.model is not None}
        self.training_logs_ = {r: res.log for r, res in results.items()}
        self.n_entities_, self.n_relations_ = V, R
        return self

    def predict_scores(self, queries) -> np.ndarray:
        """Scores of every candidate tail for each ``(head, relation)`` query, shape ``(n, V)``."""
        check_is_fitted(self)
        Q = check_queries(queries, self.n_entities_, self.n_relations_)
        out = np.zeros((len(Q), self.n_entities_))
        for r in np.unique(Q[:, 1]).tolist():
            rows = np.flatnonzero(Q[:, 1] == r)
            model = self.models_.get(r)
            if model is not None:
                out[rows] = self.backend_.score_tails(Q[rows, 0], model.path_weight)
        return out

    def predict(self, queries) -> np.ndarray:
        """Highest-scoring tail per query (smallest id among ties)."""
        return np.argmax(self.predict_scores(queries), axis=1)

    def score(self, X, y=None, known=None) -> float:
        """Filtered, tie-aware MRR on triples ``X`` (inverse queries included).

        Filtering uses the training triples, ``X`` and any extra ``known`` triples.
        """
        check_is_fitted(self)
        X = check_triples(X, self.n_entities_, self.n_relations_)
        R = self.n_relations_
        parts = [self.graph_.triples[self.graph_.triples[:, 1] < R], X]
        if known is not None:
            parts.append(check_triples(known, self.n_entities_, R, "known"))
        filt = KnownTails(np.concatenate(parts), R, self.n_entities_)
        return evaluate(self.models_, self.backend_, X, filt, R).mrr

    def rules(self, relation: int, top_k: int = 10):
        check_is_fitted(self)
        model = self.models_.get(relation)
        return [] if model is None else model.extract_rules(top_k)


class MixtureOfPathsKBC(_PathRuleKBC):
    """One LNN-pred over all relation paths up to ``max_length`` per relation.

    With ``embeddings`` (an :class:`~lnn_kbc.kge.EmbeddingTable`), path counts
    are replaced by summed edge scores.
    """

    _kind = "mp"

    def __init__(
        self,
        max_length: int = 3,
        step_size: float = 1.0,
        margin: float = 1.0,
        batch_size: int = 8,
        max_iterations: int = 1000,
        patience: int = 10,
        eval_every: int = 20,
        alpha: float = 0.7,
        seed: int = 0,
        backend: str = "auto",
        threads: int = 1,
        step_scale: str = "relative",
        embeddings=None,
    ):
        super().__init__(max_length, step_size, margin, batch_size, max_iterations, patience, eval_every,
                         alpha, seed, backend, threads, step_scale)
        self.embeddings = embeddings

    def _edge_scorer(self):
        return None if self.embeddings is None else EdgeScorer(self.embeddings)


class ChainOfMixturesKBC(_PathRuleKBC):
    """Per rule length, one relation mixture per hop joined by an LNN conjunction."""

    _kind = "cm"
