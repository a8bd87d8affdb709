"""Per-relation training: minibatches, margin ranking loss, projected Adagrad."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .evaluation import mrr_of, rank_query
from .kg import KnowledgeGraph, KnownTails
from .lnn import DEFAULT_ALPHA
from .models import CmModel, MpModel
from .paths import PathCountTable, PathVocabulary, query_mask

logger = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-10
NEGATIVE_ATTEMPTS = 100

# rule length per benchmark
DEFAULT_MAX_LENGTH = {"kinship": 3, "umls": 3, "wn18rr": 5, "fb15k-237": 4}


@dataclass
class TrainConfig:
    step_size: float = 1.0
    margin: float = 1.0
    batch_size: int = 8
    max_iterations: int = 400
    max_length: int = 3
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    patience: int = 10
    eval_every: int = 20
    model: str = "mp"
    step_scale: str = "relative"

    def __post_init__(self):
        if self.step_size <= 0 or self.margin <= 0:
            raise ValueError("step_size and margin must be positive")
        if self.batch_size < 1 or self.max_length < 1 or self.max_iterations < 0:
            raise ValueError("batch_size and max_length must be >= 1")
        if self.model not in ("mp", "cm"):
            raise ValueError("model must be 'mp' or 'cm'")
        if self.step_scale not in ("relative", "absolute"):
            raise ValueError("step_scale must be 'relative' or 'absolute'")

    def to_dict(self) -> dict:
        return asdict(self)


class SkipRelation(Exception):
    """Raised when a relation cannot be trained (no positives or no paths)."""


@dataclass
class OptimizerState:
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)
    eps: float = ADAGRAD_EPS
    steps: int = 0


def relation_rng(seed: int, relation: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(relation)]))


def sample_batch(
    graph: KnowledgeGraph, relation: int, batch_size: int, rng: np.random.Generator, positives: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """``batch_size`` positives (with replacement) and as many verified non-edges.

    Negatives corrupt the tail of a random positive; after ``NEGATIVE_ATTEMPTS``
    rejections a uniform ``(h', t')`` pair is drawn instead.
    """
    if positives is None:
        positives = graph.relation_triples(relation)
    if len(positives) == 0:
        raise SkipRelation(f"relation {relation} has no training triples")
    V = graph.num_entities
    pos = positives[rng.integers(len(positives), size=batch_size)]
    neg = np.empty_like(pos)
    for i in range(batch_size):
        neg[i] = _sample_negative(graph, relation, positives, rng, V)
    return pos, neg


def _sample_negative(graph, relation, positives, rng, V) -> tuple[int, int, int]:
    for _ in range(NEGATIVE_ATTEMPTS):
        h = int(positives[rng.integers(len(positives)), 0])
        t = int(rng.integers(V))
        if not graph.has_edge(h, relation, t):
            return h, relation, t
    for _ in range(NEGATIVE_ATTEMPTS * V):
        h, t = (int(x) for x in rng.integers(V, size=2))
        if not graph.has_edge(h, relation, t):
            return h, relation, t
    raise SkipRelation(f"relation {relation} is saturated; no negatives found")


def hinge_terms(pos_scores: np.ndarray, neg_scores: np.ndarray, margin: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss ``sum_ij max(0, s-_j - s+_i + margin)`` and d loss / d score per example.

    A term at exactly 0 counts as inactive.
    """
    terms = neg_scores[None, :] - pos_scores[:, None] + margin
    active = terms > 0
    loss = float(terms[active].sum())
    return loss, -active.sum(axis=1).astype(float), active.sum(axis=0).astype(float)


def batch_loss(model, pos_tables, neg_tables, margin: float):
    """Margin ranking loss of a batch and its parameter gradients."""
    s_pos = np.array([model.score(t) for t in pos_tables])
    s_neg = np.array([model.score(t) for t in neg_tables])
    loss, c_pos, c_neg = hinge_terms(s_pos, s_neg, margin)
    tables = list(pos_tables) + list(neg_tables)
    coeffs = np.concatenate([c_pos, c_neg])
    live = [(t, c) for t, c in zip(tables, coeffs) if c != 0 and len(t)]
    if live:
        codes = np.concatenate([t.codes for t, _ in live])
        upstream = np.concatenate([t.values * c for t, c in live])
    else:
        codes, upstream = np.zeros(0, dtype=np.int64), np.zeros(0)
    return loss, model.gradients_from_codes(codes, upstream)


def adagrad_step(
    model, grads: dict[str, np.ndarray], state: OptimizerState, step_size: float, relative: bool = False
) -> None:
    """``acc += g**2; p -= step * g / sqrt(acc + eps)``, then project back to feasibility.

    With ``relative``, each parameter group's step is multiplied by its natural
    size (``model.step_scales()``), e.g. ``1/n`` for an n-way simplex.
    """
    params = model.parameters()
    scales = model.step_scales() if relative else {}
    new = {}
    for name, p in params.items():
        g = np.asarray(grads.get(name, np.zeros_like(p)), dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}: {np.count_nonzero(~np.isfinite(g))} bad entries")
        acc = state.accumulators.setdefault(name, np.zeros_like(p, dtype=np.float64))
        acc += g * g
        new[name] = p - step_size * scales.get(name, 1.0) * g / np.sqrt(acc + state.eps)
    model.set_parameters(new)
    state.steps += 1


@dataclass
class TrainResult:
    model: object | None
    log: list[dict]
    best_valid_mrr: float | None = None
    skipped: str | None = None


def positive_tables(backend, positives: np.ndarray, num_relations: int) -> list[PathCountTable]:
    """Tables of training triples with the triple and its inverse masked out."""
    masks = [query_mask(h, r, t, num_relations) for h, r, t in positives.tolist()]
    return backend.pair_tables(positives[:, [0, 2]], masks)


def validation_mrr(model, backend, queries: np.ndarray, known: KnownTails) -> float:
    heads = np.unique(queries[:, 0])
    scores = backend.score_tails(heads, model.path_weight)
    row = {h: i for i, h in enumerate(heads.tolist())}
    return float(np.mean([
        mrr_of(rank_query(scores[row[h]], t, known.filtered_out(h, r, t))) for h, r, t in queries.tolist()
    ]))


def init_model(config: TrainConfig, relation: int, num_relations: int, pos_tables, codec, weighted: bool = False):
    if config.model == "mp":
        vocab = PathVocabulary.from_tables(codec, pos_tables)
        if len(vocab) == 0:
            raise SkipRelation(f"relation {relation}: no paths connect any training pair")
        return MpModel(relation, vocab, weighted=weighted)
    return CmModel(relation, num_relations, config.max_length, config.alpha)


def train_relation(
    graph: KnowledgeGraph,
    relation: int,
    config: TrainConfig,
    backend,
    valid_queries: np.ndarray | None = None,
    known: KnownTails | None = None,
) -> TrainResult:
    """Train one relation's model.

    ``valid_queries`` are ``(h, relation, t)`` triples; when given (with
    ``known``), training stops after ``patience`` evaluations without a
    validation-MRR improvement and the best parameters are kept.
    """
    rng = relation_rng(config.seed, relation)
    positives = graph.relation_triples(relation)
    if len(positives) == 0:
        logger.info("relation %d: no training triples, skipped", relation)
        return TrainResult(None, [], skipped="no positives")
    started = time.perf_counter()
    pos_tables = positive_tables(backend, positives, graph.num_relations)
    try:
        model = init_model(config, relation, graph.num_augmented_relations, pos_tables, backend.codec,
                           weighted=getattr(backend, "weighted", False))
    except SkipRelation as exc:
        logger.info("%s", exc)
        return TrainResult(None, [], skipped=str(exc))
    vocab = getattr(model, "vocabulary", None)
    if vocab is not None:
        vocab.enable_fast_lookup()
    try:
        return _optimize(graph, relation, config, backend, model, positives, pos_tables, valid_queries, known,
                         rng, started)
    finally:
        if vocab is not None:
            vocab.disable_fast_lookup()


def _optimize(graph, relation, config, backend, model, positives, pos_tables, valid_queries, known, rng, started):
    state = OptimizerState()
    use_valid = valid_queries is not None and len(valid_queries) > 0 and known is not None
    log: list[dict] = []
    best_mrr, best_params, stale = -1.0, None, 0

    def checkpoint(it: int, loss: float) -> bool:
        nonlocal best_mrr, best_params, stale
        mrr = validation_mrr(model, backend, valid_queries, known) if use_valid else float("nan")
        log.append({"iteration": it, "loss": loss, "valid_mrr": mrr,
                    "wall_time": time.perf_counter() - started})
        if not use_valid:
            return False
        if mrr > best_mrr:
            best_mrr, best_params, stale = mrr, {k: v.copy() for k, v in model.parameters().items()}, 0
        else:
            stale += 1
        return stale >= config.patience

    if checkpoint(0, float("nan")):
        return TrainResult(model, log, best_mrr)
    for it in range(1, config.max_iterations + 1):
        idx_pos = rng.integers(len(positives), size=config.batch_size)
        neg = np.array([_sample_negative(graph, relation, positives, rng, graph.num_entities)
                        for _ in range(config.batch_size)])
        loss, grads = batch_loss(model, [pos_tables[i] for i in idx_pos], backend.pair_tables(neg[:, [0, 2]]),
                                 config.margin)
        adagrad_step(model, grads, state, config.step_size, config.step_scale == "relative")
        if it % config.eval_every == 0 or it == config.max_iterations:
            if checkpoint(it, loss):
                break
        else:
            log.append({"iteration": it, "loss": loss, "valid_mrr": float("nan"),
                        "wall_time": time.perf_counter() - started})
    if use_valid and best_params is not None:
        model.set_parameters(best_params)
    return TrainResult(model, log, best_mrr if use_valid else None)


def train_all(
    graph: KnowledgeGraph,
    config: TrainConfig,
    backend,
    valid_triples: np.ndarray | None = None,
    known: KnownTails | None = None,
    relations: list[int] | None = None,
    threads: int = 1,
    on_done=None,
) -> dict[int, TrainResult]:
    """Train every augmented relation (or ``relations``) independently.

    Validation queries for relation ``r`` are the triples of ``valid_triples``
    with relation ``r`` plus the inverses of those with relation ``r^-1``.
    ``on_done(relation, result)`` is called as each relation finishes.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .evaluation import build_queries

    if relations is None:
        relations = list(range(graph.num_augmented_relations))
    queries = None
    if valid_triples is not None and len(valid_triples):
        queries = build_queries(valid_triples, graph.num_relations, "with-inverses")

    def run(r: int) -> tuple[int, TrainResult]:
        vq = queries[queries[:, 1] == r] if queries is not None else None
        res = train_relation(graph, r, config, backend, vq, known)
        if on_done is not None:
            on_done(r, res)
        return r, res

    if threads <= 1:
        return dict(run(r) for r in relations)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return dict(pool.map(run, relations))
