"""Path-feature backends used by training and evaluation.

Both backends answer the same two questions:

* ``pair_tables(pairs, masks)``: the relation-path table of each (u, v) pair,
  with a per-pair edge mask.
* ``score_tails(sources, path_weight)``: for each source ``u`` and every
  vertex ``v``, ``sum_p path_weight(p) * table(u, v)[p]`` without masking.

:class:`DensePathBackend` works on a dense ``(2R, V, V)`` adjacency tensor and
contracts path weights through it, which is fast for small, dense graphs
(Kinship, UMLS) and limited to paths of length 3. :class:`FrontierPathBackend`
reuses the sparse frontier traversal and works for any graph and depth.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .kg import KnowledgeGraph
from .paths import (
    EdgeScorer,
    PathCodec,
    PathCountTable,
    _edge_scores,
    _tables_by_destination,
)

PathWeight = Callable[[np.ndarray], np.ndarray]

DENSE_MAX_CELLS = 20_000_000
DENSE_MAX_LENGTH = 3


class DensePathBackend:
    """Dense-tensor backend; unmasked tables of a source are built for all
    destinations at once and kept in a byte-bounded LRU cache."""

    def __init__(
        self,
        graph: KnowledgeGraph,
        max_length: int,
        edge_scorer: EdgeScorer | None = None,
        cache_bytes: int = 1_500_000_000,
    ):
        if not 1 <= max_length <= DENSE_MAX_LENGTH:
            raise ValueError(f"dense backend supports max_length 1..{DENSE_MAX_LENGTH}")
        R, V = graph.num_augmented_relations, graph.num_entities
        if R * V * V > DENSE_MAX_CELLS:
            raise ValueError("graph too large for the dense backend")
        self.graph = graph
        self.max_length = max_length
        self.codec = PathCodec(R, max_length)
        self.weighted = edge_scorer is not None
        self.A = graph.adjacency_tensor()
        if self.weighted:
            scores = _edge_scores(graph, edge_scorer)
            self.S = np.zeros_like(self.A)
            t = graph.triples
            self.S[t[:, 1], t[:, 0], t[:, 2]] = scores
        else:
            self.S = None
        # H[x, (r, y)] = H[r, x, y]: one row per walk position
        self._rows = {id(H): np.ascontiguousarray(H.transpose(1, 0, 2)).reshape(V, R * V)
                      for H in (self.A, self.S) if H is not None}
        self._cache: OrderedDict[int, sp.csr_matrix] = OrderedDict()
        self._cache_bytes = cache_bytes
        self._cached_bytes = 0
        self._lock = threading.Lock()

    def _hop_chains(self, length: int) -> list[tuple[np.ndarray, ...]]:
        """Hop tensors per chain; weighted mass is the sum over which hop carries scores."""
        A, S = self.A, self.S
        if not self.weighted:
            return [(A,) * length]
        return [tuple(S if i == k else A for i in range(length)) for k in range(length)]

    # -- per-pair tables -------------------------------------------------

    def pair_flat(self, u: int, v: int, mask: Sequence | None = None) -> np.ndarray:
        """Dense flat vector of the pair's path table, indexed by path code."""
        R = self.codec.num_relations
        mask = [m for m in (mask or ()) if self.graph.has_edge(*m)]
        out = np.zeros(self.codec.size)
        for length in range(1, self.max_length + 1):
            lo, hi = self.codec.offsets[length], self.codec.offsets[length + 1]
            block = np.zeros((R,) * length)
            for hops in self._hop_chains(length):
                block += self._chain_pair(hops, u, v, mask)
            out[lo:hi] = block.ravel()
        return out

    def _chain_pair(self, hops, u, v, mask) -> np.ndarray:
        first, last = hops[0], hops[-1]
        if len(hops) == 1:
            c = first[:, u, v].copy()
            for x, r, y in mask:
                if x == u and y == v:
                    c[r] = 0.0
            return c
        F = first[:, u, :].copy()
        B = last[:, :, v].copy()
        for x, r, y in mask:
            if x == u:
                F[r, y] = 0.0
            if y == v:
                B[r, x] = 0.0
        if len(hops) == 2:
            return F @ B.T
        mid = hops[1]
        R, V = F.shape
        na = np.flatnonzero(F.any(axis=0))
        nb = np.flatnonzero(B.any(axis=0))
        if len(na) == 0 or len(nb) == 0:
            return np.zeros((R, R, R))
        G = (F[:, na] @ self._rows[id(mid)][na]).reshape(R * R, V)
        C = (G[:, nb] @ B[:, nb].T).reshape(R, R, R)
        for x, r, y in mask:
            # walks whose middle hop is a masked edge
            C[:, r, :] -= mid[r, x, y] * np.outer(F[:, x], B[:, y])
        return C

    def source_matrix(self, u: int) -> sp.csr_matrix:
        """Unmasked tables of every pair ``(u, v)`` as a ``(V, codec.size)`` CSR matrix."""
        with self._lock:
            hit = self._cache.get(u)
            if hit is not None:
                self._cache.move_to_end(u)
                return hit
        M = self._build_source_matrix(u)
        size = M.data.nbytes + M.indices.nbytes + M.indptr.nbytes
        with self._lock:
            if u not in self._cache:
                self._cache[u] = M
                self._cached_bytes += size
                while self._cached_bytes > self._cache_bytes and len(self._cache) > 1:
                    _, old = self._cache.popitem(last=False)
                    self._cached_bytes -= old.data.nbytes + old.indices.nbytes + old.indptr.nbytes
        return M

    def _build_source_matrix(self, u: int) -> sp.csr_matrix:
        R, V = self.codec.num_relations, self.graph.num_entities
        rows, cols, vals = [], [], []
        for length in range(1, self.max_length + 1):
            for hops in self._hop_chains(length):
                # X[prefix, (r, v)]: mass of walks u -> v whose last relation is r
                if length == 1:
                    X, prefixes = hops[0][:, u, :].reshape(1, R * V), np.zeros(1, dtype=np.int64)
                else:
                    X, prefixes = hops[0][:, u, :], np.arange(R)
                    for i, H in enumerate(hops[1:], start=2):
                        keep = np.flatnonzero(X.any(axis=1))
                        X, prefixes = X[keep] @ self._rows[id(H)], prefixes[keep]  # (P, R*V)
                        if i < length:
                            X = X.reshape(-1, V)
                            prefixes = (prefixes[:, None] * R + np.arange(R)).ravel()
                p, rv = np.nonzero(X)
                r, v = np.divmod(rv, V)
                rows.append(v)
                cols.append(self.codec.offsets[length] + prefixes[p] * R + r)
                vals.append(X[p, rv])
        M = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(V, self.codec.size),
        )
        M.sum_duplicates()
        M.sort_indices()
        return M

    def pair_tables(self, pairs: np.ndarray, masks: Sequence | None = None) -> list[PathCountTable]:
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        masks = masks if masks is not None else [None] * len(pairs)
        out = []
        for (u, v), mask in zip(pairs.tolist(), masks):
            if mask:
                flat = self.pair_flat(u, v, mask)
                nz = np.flatnonzero(flat)
                out.append(PathCountTable(nz.astype(np.int64), flat[nz]))
            else:
                M = self.source_matrix(u)
                lo, hi = M.indptr[v], M.indptr[v + 1]
                out.append(PathCountTable(M.indices[lo:hi].astype(np.int64), M.data[lo:hi].copy()))
        return out

    # -- batched scoring -------------------------------------------------

    def score_tails(self, sources: np.ndarray, path_weight: PathWeight, chunk: int = 8) -> np.ndarray:
        sources = np.asarray(sources, dtype=np.int64)
        flat = np.asarray(path_weight(np.arange(self.codec.size, dtype=np.int64)), dtype=np.float64)
        return self.score_tails_flat(sources, flat, chunk)

    def score_tails_flat(self, sources: np.ndarray, flat: np.ndarray, chunk: int = 8) -> np.ndarray:
        R, V = self.codec.num_relations, self.graph.num_entities
        out = np.zeros((len(sources), V))
        for length in range(1, self.max_length + 1):
            lo, hi = self.codec.offsets[length], self.codec.offsets[length + 1]
            T = flat[lo:hi]
            if not T.any():
                continue
            T = T.reshape(R, -1)
            for hops in self._hop_chains(length):
                for s in range(0, len(sources), chunk):
                    out[s:s + chunk] += self._chain_scores(hops, sources[s:s + chunk], T)
        return out

    @staticmethod
    def _chain_scores(hops, sources, T) -> np.ndarray:
        R, V = hops[0].shape[0], hops[0].shape[1]
        n = len(sources)
        F = hops[0][:, sources, :].transpose(1, 2, 0)  # (n, V, R)
        X = (F @ T).transpose(0, 2, 1)  # (n, R**(l-1), V)
        for H in hops[1:]:
            rest = X.shape[1] // R
            X = X.reshape(n, R, rest, V).transpose(0, 2, 1, 3).reshape(n * rest, R * V)
            X = (X @ H.reshape(R * V, V)).reshape(n, rest, V)
        return X.reshape(n, V)


class FrontierPathBackend:
    """Sparse traversal backend; unmasked per-source tables are cached."""

    def __init__(
        self,
        graph: KnowledgeGraph,
        max_length: int,
        edge_scorer: EdgeScorer | None = None,
        cache_size: int = 4096,
    ):
        self.graph = graph
        self.max_length = max_length
        self.codec = PathCodec(graph.num_augmented_relations, max_length)
        self.weighted = edge_scorer is not None
        self._scores = _edge_scores(graph, edge_scorer)
        self._cache: dict[int, dict[int, PathCountTable]] = {}
        self._cache_size = cache_size
        self._lock = threading.Lock()

    def source_tables(self, u: int) -> dict[int, PathCountTable]:
        with self._lock:
            hit = self._cache.get(u)
        if hit is not None:
            return hit
        tables = _tables_by_destination(self.graph, u, self.max_length, None, self._scores)
        with self._lock:
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache.setdefault(u, tables)
        return tables

    def pair_tables(self, pairs: np.ndarray, masks: Sequence | None = None) -> list[PathCountTable]:
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        masks = masks if masks is not None else [None] * len(pairs)
        out = []
        for (u, v), mask in zip(pairs.tolist(), masks):
            if mask:
                tables = _tables_by_destination(self.graph, u, self.max_length, mask, self._scores)
            else:
                tables = self.source_tables(u)
            out.append(tables.get(v, PathCountTable.empty()))
        return out

    def score_tails(self, sources: np.ndarray, path_weight: PathWeight, chunk: int = 8) -> np.ndarray:
        V = self.graph.num_entities
        out = np.zeros((len(sources), V))
        for i, u in enumerate(np.asarray(sources).tolist()):
            tables = self.source_tables(u)
            if not tables:
                continue
            dests = np.fromiter(tables.keys(), dtype=np.int64, count=len(tables))
            codes = np.concatenate([t.codes for t in tables.values()])
            vals = np.concatenate([t.values for t in tables.values()])
            lens = np.fromiter((len(t) for t in tables.values()), dtype=np.int64, count=len(tables))
            contrib = vals * path_weight(codes)
            out[i, dests] = np.add.reduceat(contrib, np.r_[0, np.cumsum(lens)[:-1]])
        return out


def make_backend(
    graph: KnowledgeGraph,
    max_length: int,
    edge_scorer: EdgeScorer | None = None,
    kind: str = "auto",
):
    if kind == "auto":
        R, V = graph.num_augmented_relations, graph.num_entities
        kind = "dense" if max_length <= DENSE_MAX_LENGTH and R * V * V <= DENSE_MAX_CELLS else "frontier"
    if kind == "dense":
        return DensePathBackend(graph, max_length, edge_scorer)
    if kind == "frontier":
        return FrontierPathBackend(graph, max_length, edge_scorer)
    raise ValueError(f"unknown backend {kind!r}")
