"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np


def check_triples(X, num_entities: int | None = None, num_relations: int | None = None, name: str = "X") -> np.ndarray:
    """Return ``X`` as an ``(n, 3)`` int64 array of ``(head, relation, tail)`` ids."""
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError(f"{name} must hold integer ids")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError(f"{name} holds negative ids")
    if num_entities is not None and arr.size and max(arr[:, 0].max(), arr[:, 2].max()) >= num_entities:
        raise ValueError(f"{name} references an entity id >= {num_entities}")
    if num_relations is not None and arr.size and arr[:, 1].max() >= num_relations:
        raise ValueError(f"{name} references a relation id >= {num_relations}")
    return arr


def check_queries(Q, num_entities: int, num_relations: int) -> np.ndarray:
    """``(n, 2)`` array of ``(head, relation)`` queries; relations may be inverses."""
    arr = np.asarray(Q)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"queries must have shape (n, 2), got {arr.shape}")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr[:, 0].max() >= num_entities or arr[:, 1].max() >= 2 * num_relations):
        raise ValueError("query ids out of range")
    return arr


def check_is_fitted(estimator, attribute: str = "models_") -> None:
    if not hasattr(estimator, attribute):
        from sklearn.exceptions import NotFittedError

        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
