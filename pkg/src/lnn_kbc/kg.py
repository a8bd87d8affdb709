"""Knowledge graph ingestion, indexing and inverse augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "valid", "test")


class TripleParseError(ValueError):
    """Raised for malformed triple files."""


class Vocabulary:
    """Dense integer ids for string labels, assigned in first-seen order."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        self._index: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self._index.get(label)
        if idx is None:
            idx = len(self._labels)
            self._labels.append(label)
            self._index[label] = idx
        return idx

    def id(self, label: str) -> int:
        return self._index[label]

    def label(self, idx: int) -> str:
        return self._labels[idx]

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self._labels)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._labels == other._labels

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"


@dataclass
class LoadedTriples:
    triples: np.ndarray
    entities: Vocabulary
    relations: Vocabulary
    n_duplicates: int = 0


def load_triples(
    path: str | Path,
    entities: Vocabulary | None = None,
    relations: Vocabulary | None = None,
) -> LoadedTriples:
    """Read a tab-separated ``head<TAB>relation<TAB>tail`` file.

    Vocabularies passed in are extended in place, so several splits can share
    one id space. Repeated triples are dropped (first occurrence wins) and
    counted in ``n_duplicates``.
    """
    path = Path(path)
    entities = Vocabulary() if entities is None else entities
    relations = Vocabulary() if relations is None else relations
    rows: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    n_dup = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TripleParseError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            h, r, t = parts
            triple = (entities.add(h), relations.add(r), entities.add(t))
            if triple in seen:
                n_dup += 1
                continue
            seen.add(triple)
            rows.append(triple)
    if not rows:
        raise TripleParseError(f"{path}: no triples found")
    if n_dup:
        logger.warning("%s: dropped %d duplicate triples", path, n_dup)
    triples = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    return LoadedTriples(triples, entities, relations, n_dup)


def write_triples(path: str | Path, triples: np.ndarray, entities: Vocabulary, relations: Vocabulary) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for h, r, t in np.asarray(triples):
            fh.write(f"{entities.label(h)}\t{relations.label(r)}\t{entities.label(t)}\n")


def inverse_relation(r, num_relations: int):
    """Map a relation id in the augmented space to its inverse."""
    r = np.asarray(r)
    out = np.where(r < num_relations, r + num_relations, r - num_relations)
    return out if out.ndim else int(out)


def inverse_triples(triples: np.ndarray, num_relations: int) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return np.stack(
        [triples[:, 2], inverse_relation(triples[:, 1], num_relations), triples[:, 0]], axis=1
    )


class KnowledgeGraph:
    """Immutable inverse-augmented edge set with CSR adjacency indexes.

    Relation ids ``0..R-1`` are the originals and ``R..2R-1`` their inverses.
    ``out_index`` is sorted by (head, relation, tail); ``in_index`` by
    (tail, relation, head).
    """

    def __init__(self, triples: np.ndarray, num_entities: int, num_relations: int):
        triples = np.unique(np.asarray(triples, dtype=np.int64).reshape(-1, 3), axis=0)
        self.num_entities = int(num_entities)
        self.num_relations = int(num_relations)
        if len(triples):
            if triples[:, [0, 2]].min() < 0 or triples[:, [0, 2]].max() >= num_entities:
                raise ValueError("triple references an entity id outside the vocabulary")
            if triples[:, 1].min() < 0 or triples[:, 1].max() >= 2 * num_relations:
                raise ValueError("triple references a relation id outside the augmented vocabulary")
        # np.unique sorts lexicographically by (h, r, t)
        self.triples = triples
        self.triples.flags.writeable = False
        self._edge_set = frozenset(map(tuple, triples.tolist()))

        heads, rels, tails = triples[:, 0], triples[:, 1], triples[:, 2]
        self.out_offsets = np.searchsorted(heads, np.arange(num_entities + 1))
        self.out_relations = rels
        self.out_tails = tails

        order = np.lexsort((heads, rels, tails))
        self.in_order = order
        self.in_offsets = np.searchsorted(tails[order], np.arange(num_entities + 1))
        self.in_relations = rels[order]
        self.in_heads = heads[order]

    @property
    def num_augmented_relations(self) -> int:
        return 2 * self.num_relations

    @property
    def num_edges(self) -> int:
        return len(self.triples)

    def __contains__(self, triple) -> bool:
        return tuple(int(x) for x in triple) in self._edge_set

    def has_edge(self, h: int, r: int, t: int) -> bool:
        return (int(h), int(r), int(t)) in self._edge_set

    def inverse(self, r):
        return inverse_relation(r, self.num_relations)

    def out_edges(self, h: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.out_offsets[h], self.out_offsets[h + 1]
        return self.out_relations[lo:hi], self.out_tails[lo:hi]

    def in_edges(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.in_offsets[t], self.in_offsets[t + 1]
        return self.in_relations[lo:hi], self.in_heads[lo:hi]

    def edge_ids(self, edges: Iterable[Sequence[int]]) -> np.ndarray:
        """Row positions in ``triples`` of the given edges; absent edges are skipped."""
        ids = []
        for h, r, t in edges:
            lo, hi = self.out_offsets[h], self.out_offsets[h + 1]
            block = self.triples[lo:hi]
            pos = lo + np.searchsorted(block[:, 1] * self.num_entities + block[:, 2], r * self.num_entities + t)
            if pos < hi and self.triples[pos, 1] == r and self.triples[pos, 2] == t:
                ids.append(int(pos))
        return np.asarray(ids, dtype=np.int64)

    def relation_triples(self, r: int) -> np.ndarray:
        return self.triples[self.triples[:, 1] == r]

    def adjacency_tensor(self, dtype=np.float64) -> np.ndarray:
        """Dense ``(2R, V, V)`` 0/1 tensor. Only sensible for small graphs."""
        A = np.zeros((self.num_augmented_relations, self.num_entities, self.num_entities), dtype=dtype)
        A[self.triples[:, 1], self.triples[:, 0], self.triples[:, 2]] = 1
        return A

    def relation_matrices(self) -> list:
        """Sparse CSR adjacency matrix per augmented relation."""
        import scipy.sparse as sp

        V = self.num_entities
        mats = []
        for r in range(self.num_augmented_relations):
            sel = self.triples[:, 1] == r
            mats.append(
                sp.csr_matrix(
                    (np.ones(sel.sum()), (self.triples[sel, 0], self.triples[sel, 2])), shape=(V, V)
                )
            )
        return mats

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(entities={self.num_entities}, relations={self.num_relations}, "
            f"edges={self.num_edges})"
        )


def augment_inverses(triples: np.ndarray, num_relations: int, num_entities: int | None = None) -> KnowledgeGraph:
    """Add ``<t, r^-1, h>`` for every ``<h, r, t>`` and index the result."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) and triples[:, 1].max() >= num_relations:
        raise ValueError("relation id exceeds num_relations; input must use original relation ids")
    if num_entities is None:
        num_entities = int(triples[:, [0, 2]].max()) + 1 if len(triples) else 0
    both = np.concatenate([triples, inverse_triples(triples, num_relations)])
    return KnowledgeGraph(both, num_entities, num_relations)


@dataclass
class DatasetSplits:
    """Train/valid/test triples over one shared pair of vocabularies."""

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    entities: Vocabulary
    relations: Vocabulary
    name: str = ""
    n_duplicates: dict = field(default_factory=dict)

    def __post_init__(self):
        sets = {n: set(map(tuple, getattr(self, n).tolist())) for n in SPLIT_NAMES}
        for i, a in enumerate(SPLIT_NAMES):
            for b in SPLIT_NAMES[i + 1:]:
                overlap = sets[a] & sets[b]
                if overlap:
                    raise ValueError(f"splits {a} and {b} share {len(overlap)} triples")

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def train_graph(self) -> KnowledgeGraph:
        return augment_inverses(self.train, self.num_relations, self.num_entities)

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])

    def known_tails(self) -> "KnownTails":
        return KnownTails(self.all_triples(), self.num_relations, self.num_entities)


def load_dataset(
    directory: str | Path | None = None,
    train: str | Path | None = None,
    valid: str | Path | None = None,
    test: str | Path | None = None,
) -> DatasetSplits:
    """Load ``train.txt``/``valid.txt``/``test.txt`` from ``directory``.

    Explicit paths override the conventional filenames. Vocabularies are built
    over train, then valid, then test.
    """
    explicit = {"train": train, "valid": valid, "test": test}
    entities, relations = Vocabulary(), Vocabulary()
    out, dups = {}, {}
    for name in SPLIT_NAMES:
        path = explicit[name]
        if path is None:
            if directory is None:
                raise ValueError(f"no path for split {name!r}")
            path = Path(directory) / f"{name}.txt"
        loaded = load_triples(path, entities, relations)
        out[name] = loaded.triples
        dups[name] = loaded.n_duplicates
    name = Path(directory).name if directory is not None else ""
    return DatasetSplits(out["train"], out["valid"], out["test"], entities, relations, name, dups)


class KnownTails:
    """Index ``(h, r) -> {t}`` over all splits, both directions."""

    def __init__(self, triples: np.ndarray, num_relations: int, num_entities: int):
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        both = np.concatenate([triples, inverse_triples(triples, num_relations)])
        self.num_entities = num_entities
        self._tails: dict[tuple[int, int], set[int]] = {}
        for h, r, t in both.tolist():
            self._tails.setdefault((h, r), set()).add(t)

    def tails(self, h: int, r: int) -> set[int]:
        return self._tails.get((int(h), int(r)), set())

    def filtered_out(self, h: int, r: int, t: int) -> np.ndarray:
        """Known tails other than ``t`` for the query ``<h, r, ?>``."""
        return np.fromiter((x for x in self.tails(h, r) if x != t), dtype=np.int64)


def filter_candidates(h: int, r: int, t: int, known: KnownTails) -> np.ndarray:
    """Candidate destinations for ``<h, r, ?>`` with target ``t`` (filtered setting)."""
    keep = np.ones(known.num_entities, dtype=bool)
    keep[known.filtered_out(h, r, t)] = False
    keep[t] = True
    return np.flatnonzero(keep)
