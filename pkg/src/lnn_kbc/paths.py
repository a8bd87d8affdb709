"""Relation-path counting over an inverse-augmented knowledge graph.

Paths are walks: vertices may repeat, only the depth bound stops traversal.
A relation path of length ``l`` over ``R`` relations is identified by a flat
integer code ``offset(l) + sum_i r_i * R**(l-1-i)`` where ``offset(l)`` is the
number of shorter paths, so codes of one length are in lexicographic order.

Traversal is level-synchronous: the frontier holds aggregated
``(vertex, relation-prefix)`` states with the number of walks reaching each
state and the sum of their edge scores, so shared prefixes are expanded once.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .kg import KnowledgeGraph

EdgeScorer = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

DEFAULT_MATRIX_CAP = 10_000_000


class PathCodec:
    """Bijection between relation-path tuples and flat integer codes."""

    def __init__(self, num_relations: int, max_length: int):
        if max_length < 1:
            raise ValueError("max_length must be >= 1")
        self.num_relations = int(num_relations)
        self.max_length = int(max_length)
        R = self.num_relations
        self.offsets = np.zeros(max_length + 2, dtype=np.int64)
        for l in range(1, max_length + 1):
            self.offsets[l + 1] = self.offsets[l] + R**l
        if self.offsets[-1] > np.iinfo(np.int64).max // max(R, 1):
            raise OverflowError("path code space does not fit in int64")

    @property
    def size(self) -> int:
        return int(self.offsets[self.max_length + 1])

    def encode(self, path: Sequence[int]) -> int:
        l = len(path)
        if not 1 <= l <= self.max_length:
            raise ValueError(f"path length {l} outside 1..{self.max_length}")
        code = 0
        for r in path:
            if not 0 <= r < self.num_relations:
                raise ValueError(f"relation id {r} out of range")
            code = code * self.num_relations + int(r)
        return int(self.offsets[l]) + code

    def length_of(self, codes):
        codes = np.asarray(codes, dtype=np.int64)
        return np.searchsorted(self.offsets, codes, side="right") - 1

    def decode(self, code: int) -> tuple[int, ...]:
        l = int(self.length_of(code))
        rest = int(code) - int(self.offsets[l])
        out = []
        for _ in range(l):
            rest, r = divmod(rest, self.num_relations)
            out.append(r)
        return tuple(reversed(out))

    def decode_length(self, codes: np.ndarray, length: int) -> np.ndarray:
        """Relation ids ``(n, length)`` for codes that all have ``length``."""
        rest = np.asarray(codes, dtype=np.int64) - self.offsets[length]
        out = np.empty((len(rest), length), dtype=np.int64)
        for i in range(length - 1, -1, -1):
            rest, out[:, i] = np.divmod(rest, self.num_relations)
        return out

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, PathCodec)
            and other.num_relations == self.num_relations
            and other.max_length == self.max_length
        )

    def __repr__(self) -> str:
        return f"PathCodec(num_relations={self.num_relations}, max_length={self.max_length})"


@dataclass
class PathCountTable:
    """Sparse map from path code to a non-negative count or weighted mass.

    ``codes`` is sorted and unique; absent codes mean 0.
    """

    codes: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls) -> "PathCountTable":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_dict(cls, mapping: dict, codec: PathCodec) -> "PathCountTable":
        if not mapping:
            return cls.empty()
        codes = np.array([codec.encode(p) for p in mapping], dtype=np.int64)
        values = np.array(list(mapping.values()), dtype=np.float64)
        order = np.argsort(codes)
        return cls(codes[order], values[order])

    def to_dict(self, codec: PathCodec) -> dict[tuple[int, ...], float]:
        return {codec.decode(c): float(v) for c, v in zip(self.codes.tolist(), self.values)}

    def get(self, code: int) -> float:
        i = np.searchsorted(self.codes, code)
        if i < len(self.codes) and self.codes[i] == code:
            return float(self.values[i])
        return 0.0

    def total(self) -> float:
        return float(self.values.sum())

    def __len__(self) -> int:
        return len(self.codes)


def query_mask(h: int, r: int, t: int, num_relations: int) -> frozenset:
    """The two edges removed when scoring a training triple: itself and its inverse."""
    r_inv = r + num_relations if r < num_relations else r - num_relations
    return frozenset({(int(h), int(r), int(t)), (int(t), int(r_inv), int(h))})


def _allowed_edges(graph: KnowledgeGraph, mask: Iterable | None) -> np.ndarray | None:
    if not mask:
        return None
    ids = graph.edge_ids(mask)
    if len(ids) == 0:
        return None
    allowed = np.ones(graph.num_edges, dtype=bool)
    allowed[ids] = False
    return allowed


def _gather_out_edges(graph: KnowledgeGraph, verts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(state index, edge index) for every out-edge of every frontier vertex."""
    starts = graph.out_offsets[verts]
    deg = graph.out_offsets[verts + 1] - starts
    state = np.repeat(np.arange(len(verts)), deg)
    first = np.repeat(np.cumsum(deg) - deg, deg)
    edge = np.repeat(starts, deg) + (np.arange(len(state)) - first)
    return state, edge


def _frontier_levels(
    graph: KnowledgeGraph,
    sources: np.ndarray,
    max_length: int,
    allowed: np.ndarray | None,
    edge_scores: np.ndarray | None,
    keep_source: bool,
) -> Iterator[tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Yield ``(length, source, vertex, prefix, walk_count, score_sum)`` per level.

    With ``keep_source=False`` walks from different sources are merged, which
    gives graph-wide counts.
    """
    V = graph.num_entities
    R = graph.num_augmented_relations
    src = np.asarray(sources, dtype=np.int64)
    verts = src.copy()
    prefix = np.zeros(len(src), dtype=np.int64)
    count = np.ones(len(src))
    ssum = np.zeros(len(src))
    if not keep_source:
        src = np.zeros(len(src), dtype=np.int64)
    for length in range(1, max_length + 1):
        state, edge = _gather_out_edges(graph, verts)
        if allowed is not None:
            keep = allowed[edge]
            state, edge = state[keep], edge[keep]
        if len(edge) == 0:
            return
        new_v = graph.out_tails[edge]
        new_p = prefix[state] * R + graph.out_relations[edge]
        new_c = count[state]
        new_s = ssum[state] + new_c * edge_scores[edge] if edge_scores is not None else None
        key = (src[state] * R**length + new_p) * V + new_v
        uniq, inv = np.unique(key, return_inverse=True)
        count = np.bincount(inv, weights=new_c, minlength=len(uniq))
        ssum = (
            np.bincount(inv, weights=new_s, minlength=len(uniq))
            if new_s is not None
            else np.zeros(len(uniq))
        )
        verts = uniq % V
        rest = uniq // V
        prefix = rest % R**length
        src = rest // R**length
        yield length, src, verts, prefix, count, ssum


def _edge_scores(graph: KnowledgeGraph, edge_scorer: EdgeScorer | None) -> np.ndarray | None:
    if edge_scorer is None:
        return None
    t = graph.triples
    scores = np.asarray(edge_scorer(t[:, 0], t[:, 1], t[:, 2]), dtype=np.float64)
    if scores.shape != (graph.num_edges,) or not np.all(np.isfinite(scores)):
        raise ValueError("edge scorer must return one finite value per edge")
    return scores


def _tables_by_destination(
    graph: KnowledgeGraph,
    u: int,
    max_length: int,
    mask,
    edge_scores: np.ndarray | None,
) -> dict[int, PathCountTable]:
    codec = PathCodec(graph.num_augmented_relations, max_length)
    allowed = _allowed_edges(graph, mask)
    dests, codes, vals = [], [], []
    for length, _, verts, prefix, count, ssum in _frontier_levels(
        graph, np.array([u]), max_length, allowed, edge_scores, keep_source=True
    ):
        dests.append(verts)
        codes.append(prefix + codec.offsets[length])
        vals.append(ssum if edge_scores is not None else count)
    if not dests:
        return {}
    dests = np.concatenate(dests)
    codes = np.concatenate(codes)
    vals = np.concatenate(vals)
    order = np.lexsort((codes, dests))
    dests, codes, vals = dests[order], codes[order], vals[order]
    bounds = np.flatnonzero(np.diff(dests)) + 1
    out = {}
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(dests)]):
        out[int(dests[lo])] = PathCountTable(codes[lo:hi], vals[lo:hi])
    return out


def count_paths_all_destinations(
    graph: KnowledgeGraph, u: int, max_length: int, mask=None
) -> dict[int, PathCountTable]:
    """Walk counts per relation path from ``u`` to every reachable vertex."""
    return _tables_by_destination(graph, u, max_length, mask, None)


def weighted_paths_all_destinations(
    graph: KnowledgeGraph, u: int, max_length: int, mask, edge_scorer: EdgeScorer
) -> dict[int, PathCountTable]:
    """Like :func:`count_paths_all_destinations` but each walk contributes the
    sum of its edge scores instead of 1."""
    return _tables_by_destination(graph, u, max_length, mask, _edge_scores(graph, edge_scorer))


def count_paths(graph: KnowledgeGraph, u: int, v: int, max_length: int, mask=None) -> PathCountTable:
    if max_length < 1:
        raise ValueError("max_length must be >= 1")
    return count_paths_all_destinations(graph, u, max_length, mask).get(int(v), PathCountTable.empty())


class PathVocabulary:
    """Dense ids for the relation paths observed in training.

    Ids follow lexicographic order of the relation-id sequence, so a path
    precedes its extensions: ``(p,) < (p, q) < (q,)``.
    """

    def __init__(self, codec: PathCodec, codes: Iterable[int] = ()):
        self.codec = codec
        codes = np.unique(np.asarray(list(codes) if not isinstance(codes, np.ndarray) else codes, dtype=np.int64))
        paths = [codec.decode(c) for c in codes.tolist()]
        order = sorted(range(len(paths)), key=paths.__getitem__)
        self.codes = codes[order] if len(codes) else codes
        self.paths = [paths[i] for i in order]
        self._sorted_codes = codes
        self._sorted_to_id = np.empty(len(codes), dtype=np.int64)
        self._sorted_to_id[order] = np.arange(len(codes))
        self._dense = None

    def __len__(self) -> int:
        return len(self.codes)

    def path(self, idx: int) -> tuple[int, ...]:
        return self.paths[idx]

    def id_of(self, path: Sequence[int]) -> int:
        ids = self.ids_of_codes(np.array([self.codec.encode(path)]))
        if ids[0] < 0:
            raise KeyError(path)
        return int(ids[0])

    def enable_fast_lookup(self) -> None:
        """Trade ``codec.size`` ints of memory for O(1) code lookups (used while training)."""
        table = np.full(self.codec.size, -1, dtype=np.int32)
        table[self._sorted_codes] = self._sorted_to_id
        self._dense = table

    def disable_fast_lookup(self) -> None:
        self._dense = None

    def ids_of_codes(self, codes: np.ndarray) -> np.ndarray:
        """Vocabulary ids for ``codes``; -1 where a code is not in the vocabulary."""
        codes = np.asarray(codes, dtype=np.int64)
        if self._dense is not None:
            return self._dense[codes].astype(np.int64)
        if len(self._sorted_codes) == 0:
            return np.full(len(codes), -1, dtype=np.int64)
        pos = np.searchsorted(self._sorted_codes, codes)
        pos_c = np.minimum(pos, len(self._sorted_codes) - 1)
        hit = self._sorted_codes[pos_c] == codes
        return np.where(hit, self._sorted_to_id[pos_c], -1)

    @classmethod
    def from_tables(cls, codec: PathCodec, tables: Iterable[PathCountTable]) -> "PathVocabulary":
        parts = [t.codes for t in tables if len(t)]
        return cls(codec, np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64))


def build_path_vocabulary(
    graph: KnowledgeGraph, training_pairs: Iterable[tuple[int, int, object]], max_length: int
) -> PathVocabulary:
    """Vocabulary of every relation path seen between the given (u, v, mask) pairs."""
    codec = PathCodec(graph.num_augmented_relations, max_length)
    return PathVocabulary.from_tables(
        codec, (count_paths(graph, u, v, max_length, mask) for u, v, mask in training_pairs)
    )


def global_path_counts(
    graph: KnowledgeGraph, length: int, edge_scorer: EdgeScorer | None = None
) -> PathCountTable:
    """Graph-wide walk counts (or summed walk scores) per length-``length`` relation path."""
    codec = PathCodec(graph.num_augmented_relations, length)
    scores = _edge_scores(graph, edge_scorer)
    for l, _, _, prefix, count, ssum in _frontier_levels(
        graph, np.arange(graph.num_entities), length, None, scores, keep_source=False
    ):
        if l == length:
            vals = ssum if scores is not None else count
            uniq, inv = np.unique(prefix, return_inverse=True)
            return PathCountTable(uniq + codec.offsets[length], np.bincount(inv, weights=vals))
    return PathCountTable.empty()


def path_count_matrix(
    graph: KnowledgeGraph,
    length: int,
    edge_scorer: EdgeScorer | None = None,
    cap: int = DEFAULT_MATRIX_CAP,
) -> np.ndarray:
    """Dense ``(2R,) * length`` array of graph-wide path counts."""
    R = graph.num_augmented_relations
    if R**length > cap:
        raise ValueError(
            f"{R}**{length} cells exceeds the cap of {cap}; use global_path_counts for sparse output"
        )
    codec = PathCodec(R, length)
    table = global_path_counts(graph, length, edge_scorer)
    out = np.zeros(R**length)
    out[table.codes - codec.offsets[length]] = table.values
    return out.reshape((R,) * length)


def reachability_fraction(graph: KnowledgeGraph, queries: np.ndarray, max_length: int) -> np.ndarray:
    """Fraction of queries whose tail is reachable from the head within 1..max_length hops.

    ``queries`` holds ``(h, r, t)`` triples; the query edge and its inverse are
    masked during the search. ``(h, t)`` pairs are accepted and searched unmasked.
    """
    queries = np.asarray(queries, dtype=np.int64)
    fractions = np.zeros(max_length)
    if len(queries) == 0 or graph.num_edges == 0:
        return fractions
    hits = np.zeros(max_length)
    for q in queries:
        if len(q) == 3:
            h, r, t = q
            allowed = _allowed_edges(graph, query_mask(h, r, t, graph.num_relations))
        else:
            (h, t), allowed = q, None
        depth = _hop_distance(graph, int(h), int(t), max_length, allowed)
        if depth is not None:
            hits[depth - 1:] += 1
    return hits / len(queries)


def _hop_distance(graph, h, t, max_length, allowed) -> int | None:
    seen = np.zeros(graph.num_entities, dtype=bool)
    seen[h] = True
    frontier = np.array([h])
    for depth in range(1, max_length + 1):
        _, edge = _gather_out_edges(graph, frontier)
        if allowed is not None:
            edge = edge[allowed[edge]]
        nxt = np.unique(graph.out_tails[edge])
        if np.any(nxt == t):
            return depth
        nxt = nxt[~seen[nxt]]
        if len(nxt) == 0:
            return None
        seen[nxt] = True
        frontier = nxt
    return None


def write_matrix_csv(path: str | Path, matrix: np.ndarray, labels: Sequence[str]) -> None:
    """Length-2 matrices as a grid (rows: first relation, header: second);
    other lengths in long form ``path,value``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if matrix.ndim == 2:
            w.writerow(["first\\second", *labels])
            for label, row in zip(labels, matrix):
                w.writerow([label, *(_fmt(x) for x in row)])
        else:
            w.writerow(["path", "value"])
            for idx in zip(*np.nonzero(matrix)):
                w.writerow([" ".join(labels[i] for i in idx), _fmt(matrix[idx])])


def write_reachability_csv(path: str | Path, fractions: np.ndarray) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["depth", "fraction"])
        for d, f in enumerate(fractions, start=1):
            w.writerow([d, f"{f:.6f}"])


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:.6g}"
