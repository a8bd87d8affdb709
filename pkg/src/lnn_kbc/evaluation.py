"""Filtered, tie-aware ranking metrics.

When ``m`` candidates (the target included) share the target's score and
``n`` candidates score strictly higher, the target is credited with the
average over ranks ``n+1 .. n+m``:

    MRR    = (1/m) * sum_{k=n+1}^{n+m} 1/k
    Hits@K = (1/m) * #{k in n+1..n+m : k <= K}

Ties use exact floating-point equality. Unreachable candidates score 0, so
the all-zero block is always an exact tie.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .kg import KnownTails, inverse_triples

logger = logging.getLogger(__name__)

HITS_AT = (1, 3, 10)
MODES = ("with-inverses", "direct-only")


@dataclass(frozen=True)
class QueryResult:
    n_higher: int
    n_tied: int

    def __post_init__(self):
        if self.n_higher < 0 or self.n_tied < 1:
            raise ValueError("need n_higher >= 0 and n_tied >= 1")


def rank_query(scores, target: int, filtered_out=(), num_entities: int | None = None) -> QueryResult:
    """Rank ``target`` among all candidates not in ``filtered_out``.

    ``scores`` is a dense array over vertices or a mapping vertex -> score.
    For a mapping, vertices ``0..num_entities-1`` missing from it score 0; without
    ``num_entities`` the pool is the mapping keys plus the target.
    """
    if isinstance(scores, Mapping) and num_entities is not None:
        dense = np.zeros(num_entities)
        for v, s in scores.items():
            dense[v] = s
        scores = dense
    if isinstance(scores, Mapping):
        cand = {v: s for v, s in scores.items()}
        cand.setdefault(target, 0.0)
        for v in filtered_out:
            if v != target:
                cand.pop(v, None)
        s_t = cand[target]
        vals = np.fromiter(cand.values(), dtype=np.float64, count=len(cand))
    else:
        vals = np.asarray(scores, dtype=np.float64)
        s_t = vals[target]
        filt = np.asarray(list(filtered_out), dtype=np.int64)
        if len(filt):
            if np.any(filt == target):
                raise ValueError("target cannot be filtered out")
            keep = np.ones(len(vals), dtype=bool)
            keep[filt] = False
            vals = vals[keep]
    return QueryResult(int(np.sum(vals > s_t)), int(np.sum(vals == s_t)))


def mrr_of(result: QueryResult) -> float:
    n, m = result.n_higher, result.n_tied
    return float(np.sum(1.0 / np.arange(n + 1, n + m + 1, dtype=np.float64)) / m)


def hits_at_k(result: QueryResult, k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    n, m = result.n_higher, result.n_tied
    return max(0, min(k, n + m) - n) / m


@dataclass
class RankingReport:
    mrr: float
    hits: dict[int, float]
    n_queries: int
    mode: str
    per_relation: dict[int, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"mrr": self.mrr}
        out.update({f"hits{k}": v for k, v in self.hits.items()})
        out.update({"n_queries": self.n_queries, "mode": self.mode})
        return out

    def write(self, json_path: str | Path, csv_path: str | Path | None = None, relation_labels=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
        if csv_path is None:
            return
        with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["relation", "label", "n_queries", "mrr", *(f"hits{k}" for k in HITS_AT)])
            for r in sorted(self.per_relation):
                row = self.per_relation[r]
                label = _relation_label(r, relation_labels) if relation_labels is not None else ""
                w.writerow([r, label, row["n_queries"], f"{row['mrr']:.6f}",
                            *(f"{row[f'hits{k}']:.6f}" for k in HITS_AT)])


def _relation_label(r: int, labels) -> str:
    n = len(labels)
    return labels[r] if r < n else f"{labels[r - n]}^-1"


def aggregate(results: list[QueryResult], mode: str, per_relation=None) -> RankingReport:
    if not results:
        raise ValueError("no queries to evaluate")
    mrr = float(np.mean([mrr_of(q) for q in results]))
    hits = {k: float(np.mean([hits_at_k(q, k) for q in results])) for k in HITS_AT}
    return RankingReport(mrr, hits, len(results), mode, per_relation or {})


def build_queries(triples: np.ndarray, num_relations: int, mode: str = "with-inverses") -> np.ndarray:
    """Tail-prediction queries ``(h, r, t)``; with inverses, ``(t, r^-1, h)`` is added per triple."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if mode == "direct-only":
        return triples
    return np.concatenate([triples, inverse_triples(triples, num_relations)])


def score_queries(models: Mapping, backend, queries: np.ndarray, num_entities: int) -> dict[tuple[int, int], np.ndarray]:
    """Score vectors over all vertices for each distinct ``(h, r)`` in ``queries``."""
    out = {}
    for r in np.unique(queries[:, 1]).tolist():
        heads = np.unique(queries[queries[:, 1] == r, 0])
        model = models.get(r)
        if model is None:
            logger.warning("no model for relation %d; its queries score 0 everywhere", r)
            scores = np.zeros((len(heads), num_entities))
        else:
            scores = backend.score_tails(heads, model.path_weight)
        for h, row in zip(heads.tolist(), scores):
            out[(h, r)] = row
    return out


def evaluate(
    models: Mapping,
    backend,
    eval_triples: np.ndarray,
    known: KnownTails,
    num_relations: int,
    mode: str = "with-inverses",
) -> RankingReport:
    """Filtered ranking report for ``eval_triples``.

    ``backend`` scores over the training graph without masks. Queries whose
    relation has no model rank the target inside an all-zero tie block.
    """
    queries = build_queries(eval_triples, num_relations, mode)
    if len(queries) == 0:
        raise ValueError("empty evaluation split")
    scored = score_queries(models, backend, queries, known.num_entities)
    results, by_rel = [], {}
    for h, r, t in queries.tolist():
        q = rank_query(scored[(h, r)], t, known.filtered_out(h, r, t))
        results.append(q)
        by_rel.setdefault(r, []).append(q)
    per_relation = {}
    for r, qs in by_rel.items():
        per_relation[r] = {"n_queries": len(qs), "mrr": float(np.mean([mrr_of(q) for q in qs]))}
        per_relation[r].update({f"hits{k}": float(np.mean([hits_at_k(q, k) for q in qs])) for k in HITS_AT})
    return aggregate(results, mode, per_relation)
