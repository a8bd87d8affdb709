"""Knowledge-graph embeddings used to weight relation paths.

Two families are built in:

* ``similarity``: trilinear product ``sum(e_head[h] * rel[r] * e_tail[t])``
  with separate head- and tail-role entity vectors; an edge scores
  ``sigmoid(sim)``.
* ``distance``: translation distance ``||e[h] + rel[r] - e[t]||_2``; an edge
  scores ``tanh(margin - d)``.

Inverse relations are ordinary relations here: relation ``r + R`` has its own
vector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .kg import KnowledgeGraph, KnownTails

logger = logging.getLogger(__name__)

FAMILIES = ("similarity", "distance")
DEFAULT_DISTANCE_MARGIN = 9.0
FORMAT_TAG = "KGE v1"


class EmbeddingFormatError(ValueError):
    pass


class MissingEmbeddingError(KeyError):
    pass


@dataclass(frozen=True)
class EmbeddingTable:
    family: str
    entities: np.ndarray  # head-role vectors for the similarity family
    relations: np.ndarray
    entities_tail: np.ndarray | None = None
    margin: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown embedding family {self.family!r}")
        ent = np.asarray(self.entities, dtype=np.float64)
        rel = np.asarray(self.relations, dtype=np.float64)
        if ent.ndim != 2 or rel.ndim != 2 or ent.shape[1] != rel.shape[1]:
            raise ValueError("entity and relation matrices must be 2-D with one shared dimension")
        arrays = [ent, rel]
        if self.family == "similarity":
            if self.entities_tail is None:
                raise ValueError("similarity family needs tail-role entity vectors")
            tail = np.asarray(self.entities_tail, dtype=np.float64)
            if tail.shape != ent.shape:
                raise ValueError("head and tail entity matrices differ in shape")
            arrays.append(tail)
            object.__setattr__(self, "entities_tail", tail)
        else:
            margin = DEFAULT_DISTANCE_MARGIN if self.margin is None else float(self.margin)
            if not margin > 0:
                raise ValueError("distance margin must be positive")
            object.__setattr__(self, "margin", margin)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("embedding contains non-finite values")
        for a in arrays:
            a.setflags(write=False)
        object.__setattr__(self, "entities", ent)
        object.__setattr__(self, "relations", rel)

    @property
    def dim(self) -> int:
        return self.entities.shape[1]

    @property
    def num_entities(self) -> int:
        return self.entities.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relations.shape[0]

    def raw_scores(self, h, r, t) -> np.ndarray:
        """Trilinear similarity or translation distance, before the squashing transform."""
        h, r, t = (np.atleast_1d(np.asarray(x, dtype=np.int64)) for x in (h, r, t))
        self._check_ids(h, self.num_entities, "entity")
        self._check_ids(t, self.num_entities, "entity")
        self._check_ids(r, self.num_relations, "relation")
        if self.family == "similarity":
            return np.einsum("nd,nd,nd->n", self.entities[h], self.relations[r], self.entities_tail[t])
        return np.linalg.norm(self.entities[h] + self.relations[r] - self.entities[t], axis=1)

    @staticmethod
    def _check_ids(ids: np.ndarray, n: int, kind: str) -> None:
        bad = ids[(ids < 0) | (ids >= n)]
        if len(bad):
            raise MissingEmbeddingError(f"no embedding for {kind} id {int(bad[0])} (table has {n})")

    def tail_scores(self, h: int, r: int) -> np.ndarray:
        """Raw score of ``(h, r, v)`` for every vertex ``v``; higher is better."""
        if self.family == "similarity":
            return self.entities_tail @ (self.entities[h] * self.relations[r])
        return -np.linalg.norm(self.entities[h] + self.relations[r] - self.entities, axis=1)


class EdgeScorer:
    """Maps edges to ``sigmoid(sim)`` (similarity) or ``tanh(margin - d)`` (distance)."""

    def __init__(self, table: EmbeddingTable):
        self.table = table

    def __call__(self, h, r, t) -> np.ndarray:
        raw = self.table.raw_scores(h, r, t)
        if self.table.family == "similarity":
            return _sigmoid(raw)
        return np.tanh(self.table.margin - raw)

    def edge_score(self, h: int, r: int, t: int) -> float:
        return float(self(h, r, t)[0])

    def path_score(self, path: Sequence[tuple[int, int, int]]) -> float:
        """Sum of edge scores over a walk given as consecutive ``(h, r, t)`` edges."""
        if len(path) == 0:
            raise ValueError("path has no edges")
        for (_, _, t), (h, _, _) in zip(path[:-1], path[1:]):
            if t != h:
                raise ValueError(f"broken path: edge ends at {t} but next edge starts at {h}")
        e = np.asarray(path, dtype=np.int64).reshape(-1, 3)
        return float(self(e[:, 0], e[:, 1], e[:, 2]).sum())


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- file format ----------------------------------------------------------


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    margin = "none" if table.family == "similarity" else repr(table.margin)
    lines = [f"{FORMAT_TAG} {table.family} entities={table.num_entities} relations={table.num_relations} "
             f"dim={table.dim} margin={margin}"]

    def rows(tag, mat):
        for i, v in enumerate(mat):
            lines.append(f"{tag} {i} " + " ".join(repr(float(x)) for x in v))

    if table.family == "similarity":
        rows("E_HEAD", table.entities)
        rows("E_TAIL", table.entities_tail)
    else:
        rows("E", table.entities)
    rows("R", table.relations)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    data = Path(path).read_bytes()
    offset = 0
    lines = []
    for raw in data.split(b"\n"):
        if raw.strip():
            lines.append((offset, raw.decode("utf-8")))
        offset += len(raw) + 1
    if not lines:
        raise EmbeddingFormatError("empty embedding file (byte 0)")
    off, header = lines[0]
    fields = header.split()
    if " ".join(fields[:2]) != FORMAT_TAG or len(fields) < 3:
        raise EmbeddingFormatError(f"bad header at byte {off}: expected '{FORMAT_TAG} <family> ...'")
    family = fields[2]
    if family not in FAMILIES:
        raise EmbeddingFormatError(f"unknown family tag {family!r} at byte {off}")
    meta = dict(f.split("=", 1) for f in fields[3:] if "=" in f)
    try:
        n_ent, n_rel, dim = int(meta["entities"]), int(meta["relations"]), int(meta["dim"])
    except (KeyError, ValueError) as exc:
        raise EmbeddingFormatError(f"header at byte {off} lacks entities/relations/dim") from exc
    margin = None
    if family == "distance":
        if meta.get("margin", "none") == "none":
            logger.warning("no margin in embedding header; using %.1f", DEFAULT_DISTANCE_MARGIN)
        else:
            margin = float(meta["margin"])

    tags = {"E_HEAD": n_ent, "E_TAIL": n_ent, "R": n_rel} if family == "similarity" else {"E": n_ent, "R": n_rel}
    mats = {tag: np.full((n, dim), np.nan) for tag, n in tags.items()}
    seen = {tag: np.zeros(n, dtype=bool) for tag, n in tags.items()}
    for off, line in lines[1:]:
        parts = line.split()
        tag = parts[0]
        if tag not in mats:
            raise EmbeddingFormatError(f"unexpected record {tag!r} at byte {off}")
        if len(parts) != dim + 2:
            raise EmbeddingFormatError(f"record at byte {off} has {len(parts) - 2} values, expected {dim}")
        try:
            idx = int(parts[1])
            vec = np.array([float(x) for x in parts[2:]])
        except ValueError as exc:
            raise EmbeddingFormatError(f"unparsable number at byte {off}") from exc
        if not 0 <= idx < tags[tag]:
            raise EmbeddingFormatError(f"{tag} id {idx} out of range at byte {off}")
        if not np.all(np.isfinite(vec)):
            raise EmbeddingFormatError(f"non-finite value at byte {off}")
        mats[tag][idx] = vec
        seen[tag][idx] = True
    for tag, mask in seen.items():
        if not mask.all():
            raise EmbeddingFormatError(
                f"payload ends at byte {len(data)} with {int((~mask).sum())} {tag} records missing"
            )
    if family == "similarity":
        return EmbeddingTable(family, mats["E_HEAD"], mats["R"], mats["E_TAIL"])
    return EmbeddingTable(family, mats["E"], mats["R"], margin=margin)


# -- desk-scale trainer ---------------------------------------------------


@dataclass
class EmbeddingConfig:
    family: str = "similarity"
    dim: int = 256
    epochs: int = 10
    step_size: float = 0.1
    negatives: int = 64
    regularization: float = 0.01
    batch_size: int = 256
    init_scale: float = 1e-3
    margin: float = DEFAULT_DISTANCE_MARGIN
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown embedding family {self.family!r}")
        if min(self.dim, self.epochs, self.negatives, self.batch_size) < 1 or self.step_size <= 0:
            raise ValueError("dim, epochs, negatives, batch_size and step_size must be positive")


def train_embeddings(graph: KnowledgeGraph, config: EmbeddingConfig = EmbeddingConfig()) -> EmbeddingTable:
    """Fit embeddings on every edge of ``graph`` (inverse edges included).

    Each positive is contrasted with ``negatives`` uniformly corrupted tails
    under a softmax cross-entropy; the similarity family adds a weighted sum of
    cubed absolute entries of the factors involved. Optimised with Adagrad.
    """
    rng = np.random.default_rng(config.seed)
    V, R, d = graph.num_entities, graph.num_augmented_relations, config.dim
    sim = config.family == "similarity"
    params = {
        "E": config.init_scale * rng.standard_normal((V, d)),
        "R": config.init_scale * rng.standard_normal((R, d)),
    }
    if sim:
        params["T"] = config.init_scale * rng.standard_normal((V, d))
    else:
        # translation models need non-vanishing vectors to separate entities
        params["E"] = rng.uniform(-1, 1, (V, d)) / math.sqrt(d)
        params["R"] = rng.uniform(-1, 1, (R, d)) / math.sqrt(d)
    acc = {k: np.zeros_like(v) for k, v in params.items()}
    edges = graph.triples
    k = config.negatives
    for epoch in range(config.epochs):
        order = rng.permutation(len(edges))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            batch = edges[order[s:s + config.batch_size]]
            negs = rng.integers(V, size=(len(batch), k))
            # overflow surfaces as a non-finite loss, reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = _batch_gradients(params, batch, negs, sim, config)
            if not math.isfinite(loss):
                raise FloatingPointError(f"embedding training diverged in epoch {epoch} (loss={loss})")
            total += loss
            for name, (rows, g) in grads.items():
                np.add.at(acc[name], rows, g * g)
                upd = np.zeros_like(params[name])
                np.add.at(upd, rows, g)
                touched = np.unique(rows)
                params[name][touched] -= config.step_size * upd[touched] / np.sqrt(acc[name][touched] + 1e-10)
        logger.debug("epoch %d loss %.4f", epoch, total / len(edges))
    if sim:
        return EmbeddingTable("similarity", params["E"], params["R"], params["T"])
    return EmbeddingTable("distance", params["E"], params["R"], margin=config.margin)


def _batch_gradients(params, batch, negs, sim: bool, config: EmbeddingConfig):
    h, r, t = batch[:, 0], batch[:, 1], batch[:, 2]
    cand = np.concatenate([t[:, None], negs], axis=1)  # column 0 is the positive
    E, Rm = params["E"], params["R"]
    if sim:
        T = params["T"]
        hr = E[h] * Rm[r]
        logits = np.einsum("bd,bkd->bk", hr, T[cand])
    else:
        q = E[h] + Rm[r]
        diff = q[:, None, :] - E[cand]
        dist = np.sqrt(np.sum(diff * diff, axis=2) + 1e-12)
        logits = -dist
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    loss = float(-np.log(p[:, 0] + 1e-300).sum())
    dlog = p.copy()
    dlog[:, 0] -= 1.0  # d loss / d logits
    grads = {}
    if sim:
        d_hr = np.einsum("bk,bkd->bd", dlog, T[cand])
        d_T = dlog[:, :, None] * hr[:, None, :]
        lam = config.regularization
        e_h, r_r, t_t = E[h], Rm[r], T[t]
        loss += lam * float(np.sum(np.abs(e_h) ** 3) + np.sum(np.abs(r_r) ** 3) + np.sum(np.abs(t_t) ** 3))
        grads["E"] = (h, d_hr * r_r + 3 * lam * np.abs(e_h) * e_h)
        grads["R"] = (r, d_hr * e_h + 3 * lam * np.abs(r_r) * r_r)
        t_rows = np.concatenate([cand.ravel(), t])
        t_grad = np.concatenate([d_T.reshape(-1, d_T.shape[2]), 3 * lam * np.abs(t_t) * t_t])
        grads["T"] = (t_rows, t_grad)
    else:
        # d(-dist)/d q = -diff / dist
        unit = diff / dist[:, :, None]
        d_q = -np.einsum("bk,bkd->bd", dlog, unit)
        d_c = (dlog[:, :, None] * unit).reshape(-1, unit.shape[2])
        grads["E"] = (np.concatenate([h, cand.ravel()]), np.concatenate([d_q, d_c]))
        grads["R"] = (r, d_q)
    return loss, grads


def embedding_mrr(table: EmbeddingTable, triples: np.ndarray, known: KnownTails, num_relations: int) -> float:
    """Filtered MRR of pure-embedding tail ranking, inverse queries included."""
    from .evaluation import build_queries, mrr_of, rank_query

    queries = build_queries(triples, num_relations, "with-inverses")
    return float(np.mean([
        mrr_of(rank_query(table.tail_scores(h, r), t, known.filtered_out(h, r, t))) for h, r, t in queries.tolist()
    ]))
