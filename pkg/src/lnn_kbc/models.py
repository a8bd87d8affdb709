"""Per-relation triple scorers built from LNN operators.

Both models score a pair ``(u, v)`` from its relation-path table ``C``:

* chain of mixtures: ``sum_p C[p] * and(w1[p_1], ..., wl[p_l])`` with one
  relation mixture per hop and one conjunction per rule length;
* mixture of paths: ``sum_p C[p] * w[p]`` with one simplex over all observed
  relation paths.

A model is therefore fully described by its per-path weight function
(:meth:`path_weight`), which is what the path backends contract against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lnn import (
    DEFAULT_ALPHA,
    LnnConjunctionParams,
    LnnPredParams,
    conj_backward,
    conj_forward,
    initial_conjunction,
    min_feasible_alpha,
    project_conjunction,
    project_simplex,
)
from .paths import PathCodec, PathCountTable, PathVocabulary


@dataclass
class Rule:
    head: int
    body: tuple[int, ...]
    weight: float
    path_id: int = -1

    @property
    def recursive(self) -> bool:
        return self.head in self.body

    def render(self, relation_labels: Sequence[str], num_relations: int) -> str:
        m = len(self.body)
        head = _atom(self.head, "X0", f"X{m}", relation_labels, num_relations)
        body = " ^ ".join(
            _atom(r, f"X{i}", f"X{i + 1}", relation_labels, num_relations) for i, r in enumerate(self.body)
        )
        tag = " [recursive]" if self.recursive else ""
        return f"{head} <- {body} # weight={self.weight:.6g}{tag}"

    def to_json(self, relation_labels: Sequence[str] | None = None) -> dict:
        out = {"head": self.head, "body": list(self.body), "weight": self.weight,
               "path_id": self.path_id, "recursive": self.recursive}
        if relation_labels is not None:
            out["head_label"] = _label(self.head, relation_labels)
            out["body_labels"] = [_label(r, relation_labels) for r in self.body]
        return out


def _label(r: int, labels: Sequence[str]) -> str:
    n = len(labels)
    return labels[r] if r < n else f"{labels[r - n]}^-1"


def _atom(r: int, a: str, b: str, labels: Sequence[str], num_relations: int) -> str:
    if r < num_relations:
        return f"{labels[r]}({a},{b})"
    return f"{labels[r - num_relations]}({b},{a})"


class MpModel:
    """Mixture of paths: one LNN-pred over every relation path in the vocabulary."""

    kind = "mp"

    def __init__(self, relation: int, vocabulary: PathVocabulary, pred: LnnPredParams | None = None,
                 weighted: bool = False):
        if len(vocabulary) == 0:
            raise ValueError("mixture of paths needs a non-empty path vocabulary")
        self.relation = int(relation)
        self.vocabulary = vocabulary
        self.codec = vocabulary.codec
        self.pred = pred if pred is not None else LnnPredParams.uniform(len(vocabulary))
        if len(self.pred.weights) != len(vocabulary):
            raise ValueError("weight vector does not match the vocabulary")
        self.weighted = weighted
        self.n_unknown_paths = 0

    @property
    def weights(self) -> np.ndarray:
        return self.pred.weights

    def path_weight(self, codes: np.ndarray) -> np.ndarray:
        ids = self.vocabulary.ids_of_codes(codes)
        return np.where(ids >= 0, self.pred.weights[np.maximum(ids, 0)], 0.0)

    def score(self, table: PathCountTable) -> float:
        """Sparse dot product; paths outside the vocabulary contribute 0."""
        ids = self.vocabulary.ids_of_codes(table.codes)
        known = ids >= 0
        self.n_unknown_paths += int((~known).sum())
        return float(table.values[known] @ self.pred.weights[ids[known]])

    def score_weighted(self, table: PathCountTable) -> float:
        return self.score(table)

    def score_gradients(self, table: PathCountTable, upstream: float = 1.0) -> dict[str, np.ndarray]:
        return self.gradients_from_codes(table.codes, table.values * upstream)

    def gradients_from_codes(self, codes: np.ndarray, upstream: np.ndarray) -> dict[str, np.ndarray]:
        ids = self.vocabulary.ids_of_codes(codes)
        known = ids >= 0
        grad = np.bincount(ids[known], weights=upstream[known], minlength=len(self.vocabulary))
        return {"w": grad}

    # optimizer interface
    def parameters(self) -> dict[str, np.ndarray]:
        return {"w": self.pred.weights}

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        self.pred = LnnPredParams(project_simplex(params["w"]))

    def step_scales(self) -> dict[str, float]:
        """Natural size of each parameter group: a simplex entry is about 1/n."""
        return {"w": 1.0 / len(self.vocabulary)}

    def is_feasible(self, tol: float = 1e-8) -> bool:
        return self.pred.is_feasible(tol)

    def extract_rules(self, top_k: int) -> list[Rule]:
        """Top ``top_k`` paths by weight; ties go to the smaller vocabulary id."""
        if top_k <= 0:
            raise ValueError("top_k must be positive")
        order = np.lexsort((np.arange(len(self.vocabulary)), -self.pred.weights))[:top_k]
        return [Rule(self.relation, self.vocabulary.path(i), float(self.pred.weights[i]), int(i)) for i in order]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "relation": self.relation,
            "num_relations": self.codec.num_relations,
            "max_length": self.codec.max_length,
            "weighted": self.weighted,
            "paths": [list(p) for p in self.vocabulary.paths],
            "pred": self.pred.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MpModel":
        codec = PathCodec(obj["num_relations"], obj["max_length"])
        vocab = PathVocabulary(codec, np.array([codec.encode(p) for p in obj["paths"]], dtype=np.int64))
        if [list(p) for p in vocab.paths] != [list(p) for p in obj["paths"]]:
            raise ValueError("checkpoint path listing is not in vocabulary order")
        return cls(obj["relation"], vocab, LnnPredParams.from_json(obj["pred"]), obj.get("weighted", False))


def conjunction_alpha(alpha: float, arity: int) -> float:
    """``alpha`` if an ``arity``-ary conjunction is feasible under it, else the
    midpoint between the feasibility bound and 1."""
    bound = min_feasible_alpha(arity)
    return alpha if alpha == 1.0 or alpha > bound else 0.5 * (bound + 1.0)


class CmModel:
    """Chain of mixtures, one sub-model per rule length 1..max_length; scores are summed."""

    kind = "cm"

    def __init__(self, relation: int, num_relations: int, max_length: int, alpha: float = DEFAULT_ALPHA,
                 preds: list[list[LnnPredParams]] | None = None,
                 conjs: list[LnnConjunctionParams] | None = None):
        self.relation = int(relation)
        self.codec = PathCodec(num_relations, max_length)
        self.alpha = alpha
        if preds is None:
            preds = [[LnnPredParams.uniform(num_relations) for _ in range(l)] for l in range(1, max_length + 1)]
        if conjs is None:
            conjs = [initial_conjunction(l, conjunction_alpha(alpha, l)) for l in range(1, max_length + 1)]
        if len(preds) != max_length or len(conjs) != max_length:
            raise ValueError("need one sub-model per length")
        for l, (ps, c) in enumerate(zip(preds, conjs), start=1):
            if len(ps) != l or c.arity != l:
                raise ValueError(f"length-{l} sub-model must have {l} mixtures and an {l}-ary conjunction")
            if any(len(p.weights) != num_relations for p in ps):
                raise ValueError("mixture dimension must equal the number of relations")
        self.preds = preds
        self.conjs = conjs
        self.weighted = False

    @property
    def max_length(self) -> int:
        return self.codec.max_length

    def _inputs(self, codes: np.ndarray, length: int) -> tuple[np.ndarray, np.ndarray]:
        rels = self.codec.decode_length(codes, length)
        x = np.stack([self.preds[length - 1][i].weights[rels[:, i]] for i in range(length)], axis=1)
        return rels, x

    def _check_codes(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        if len(codes) and (codes.min() < 0 or codes.max() >= self.codec.size):
            raise ValueError("path code references an unknown relation or length")
        return codes

    def path_weight(self, codes: np.ndarray) -> np.ndarray:
        codes = self._check_codes(codes)
        lengths = self.codec.length_of(codes)
        out = np.zeros(len(codes))
        for l in range(1, self.max_length + 1):
            sel = lengths == l
            if sel.any():
                _, x = self._inputs(codes[sel], l)
                out[sel] = conj_forward(self.conjs[l - 1], x)
        return out

    def score(self, table: PathCountTable) -> float:
        return float(table.values @ self.path_weight(table.codes))

    def score_gradients(self, table: PathCountTable, upstream: float = 1.0) -> dict[str, np.ndarray]:
        return self.gradients_from_codes(table.codes, table.values * upstream)

    def gradients_from_codes(self, codes: np.ndarray, upstream: np.ndarray) -> dict[str, np.ndarray]:
        codes = self._check_codes(codes)
        lengths = self.codec.length_of(codes)
        R = self.codec.num_relations
        grads: dict[str, np.ndarray] = {}
        for l in range(1, self.max_length + 1):
            sel = lengths == l
            g_pred = np.zeros((l, R))
            g_beta, g_w = 0.0, np.zeros(l)
            if sel.any():
                rels, x = self._inputs(codes[sel], l)
                g_beta, g_w, g_x = conj_backward(self.conjs[l - 1], x, upstream[sel])
                for i in range(l):
                    g_pred[i] = np.bincount(rels[:, i], weights=g_x[:, i], minlength=R)
            grads[f"pred{l}"] = g_pred
            grads[f"beta{l}"] = np.array([g_beta])
            grads[f"conj{l}"] = g_w
        return grads

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for l in range(1, self.max_length + 1):
            out[f"pred{l}"] = np.stack([p.weights for p in self.preds[l - 1]])
            out[f"beta{l}"] = np.array([self.conjs[l - 1].beta])
            out[f"conj{l}"] = self.conjs[l - 1].weights
        return out

    def step_scales(self) -> dict[str, float]:
        out = {}
        for l in range(1, self.max_length + 1):
            out[f"pred{l}"] = 1.0 / self.codec.num_relations
            out[f"beta{l}"] = out[f"conj{l}"] = 1.0
        return out

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        for l in range(1, self.max_length + 1):
            self.preds[l - 1] = [LnnPredParams(project_simplex(row)) for row in params[f"pred{l}"]]
            c = self.conjs[l - 1]
            self.conjs[l - 1] = project_conjunction(
                LnnConjunctionParams(float(params[f"beta{l}"][0]), params[f"conj{l}"], c.alpha)
            )

    def is_feasible(self, tol: float = 1e-8) -> bool:
        return all(p.is_feasible(tol) for ps in self.preds for p in ps) and all(
            c.is_feasible(tol) for c in self.conjs
        )

    def extract_rules(self, top_k: int) -> list[Rule]:
        """Per length, the rule formed by each hop's highest-weight relation, ranked by its conjunction value."""
        if top_k <= 0:
            raise ValueError("top_k must be positive")
        rules = []
        for l in range(1, self.max_length + 1):
            body = tuple(int(np.argmax(p.weights)) for p in self.preds[l - 1])
            code = self.codec.encode(body)
            rules.append(Rule(self.relation, body, float(self.path_weight(np.array([code]))[0])))
        rules.sort(key=lambda r: -r.weight)
        return rules[:top_k]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "relation": self.relation,
            "num_relations": self.codec.num_relations,
            "max_length": self.max_length,
            "alpha": self.alpha,
            "preds": [[p.to_json() for p in ps] for ps in self.preds],
            "conjs": [c.to_json() for c in self.conjs],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CmModel":
        return cls(
            obj["relation"], obj["num_relations"], obj["max_length"], obj["alpha"],
            [[LnnPredParams.from_json(p) for p in ps] for ps in obj["preds"]],
            [LnnConjunctionParams.from_json(c) for c in obj["conjs"]],
        )


def model_from_json(obj: dict):
    kind = obj.get("kind")
    if kind == "mp":
        return MpModel.from_json(obj)
    if kind == "cm":
        return CmModel.from_json(obj)
    raise ValueError(f"unknown model kind {kind!r}")


def cm_score(model: CmModel, table: PathCountTable) -> float:
    return model.score(table)


def mp_score(model: MpModel, table: PathCountTable) -> float:
    return model.score(table)


def mp_score_weighted(model: MpModel, table: PathCountTable) -> float:
    return model.score(table)
