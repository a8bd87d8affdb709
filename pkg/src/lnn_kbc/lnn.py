"""Parameterized real-valued logic operators.

LNN-and is a clipped affine function ``max(0, min(1, beta - w.(1 - x)))``
whose parameters are kept inside the polyhedron that preserves conjunctive
semantics under threshold ``alpha``:

* ``w >= 0``
* ``beta - alpha * w_i <= 1 - alpha`` for every i (any low input gives a low output)
* ``beta - (1 - alpha) * sum(w) >= alpha`` (all-high inputs give a high output)

The polyhedron is non-empty only when ``alpha > n / (n + 1)`` for arity ``n``
(or ``alpha == 1``); :func:`min_feasible_alpha` gives the bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_ALPHA = 0.7
PROJECTION_TOL = 1e-9
PROJECTION_MAX_CYCLES = 10_000


class InfeasibleConstraintsError(ValueError):
    pass


@dataclass
class LnnConjunctionParams:
    beta: float
    weights: np.ndarray
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        self.beta = float(self.beta)
        if not 0.5 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (1/2, 1]")

    @property
    def arity(self) -> int:
        return len(self.weights)

    def violation(self) -> float:
        """Largest constraint violation (0 when feasible)."""
        return float(max(0.0, *constraint_residuals(self.beta, self.weights, self.alpha)))

    def is_feasible(self, tol: float = 1e-8) -> bool:
        return self.violation() <= tol

    def copy(self) -> "LnnConjunctionParams":
        return LnnConjunctionParams(self.beta, self.weights.copy(), self.alpha)

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "LnnConjunctionParams":
        return cls(obj["beta"], obj["weights"], obj["alpha"])


@dataclass
class LnnPredParams:
    weights: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()

    @classmethod
    def uniform(cls, k: int) -> "LnnPredParams":
        if k < 1:
            raise ValueError("need at least one input")
        return cls(np.full(k, 1.0 / k))

    def is_feasible(self, tol: float = 1e-8) -> bool:
        w = self.weights
        return bool(np.all(w >= -tol) and abs(w.sum() - 1.0) <= tol)

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "LnnPredParams":
        return cls(obj["weights"])


def min_feasible_alpha(arity: int) -> float:
    """Infimum of alphas for which an ``arity``-ary LNN-and is feasible (exclusive)."""
    return arity / (arity + 1.0)


def constraint_residuals(beta: float, weights: np.ndarray, alpha: float) -> np.ndarray:
    """Positive entries are violations: ``-w``, per-input low constraint, high constraint."""
    w = np.asarray(weights, dtype=np.float64)
    low = beta - alpha * w - (1.0 - alpha)
    high = alpha - beta + (1.0 - alpha) * w.sum()
    return np.concatenate([-w, low, [high]])


def _check_dims(w: np.ndarray, x: np.ndarray) -> None:
    if w.shape[-1] != x.shape[-1]:
        raise ValueError(f"expected {w.shape[-1]} inputs, got {x.shape[-1]}")


def conj_preactivation(params: LnnConjunctionParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_dims(params.weights, x)
    return params.beta - (1.0 - x) @ params.weights


def conj_forward(params: LnnConjunctionParams, x) -> np.ndarray | float:
    """LNN-and of ``x``; the last axis of ``x`` holds the operator inputs."""
    z = np.clip(conj_preactivation(params, x), 0.0, 1.0)
    return float(z) if np.ndim(z) == 0 else z


def conj_backward(params: LnnConjunctionParams, x, upstream=1.0) -> tuple:
    """Subgradients ``(d_beta, d_weights, d_x)``.

    Gradients pass where the pre-activation lies in ``[0, 1]`` (boundaries
    count as interior) and are zero where the clip is active.
    """
    x = np.asarray(x, dtype=np.float64)
    z = conj_preactivation(params, x)
    g = np.where((z >= 0.0) & (z <= 1.0), upstream, 0.0)
    d_beta = np.sum(g)
    d_w = -(np.asarray(g)[..., None] * (1.0 - x)).reshape(-1, x.shape[-1]).sum(axis=0)
    d_x = np.asarray(g)[..., None] * params.weights
    return float(d_beta), d_w, d_x


def disj_forward(params: LnnConjunctionParams, x) -> np.ndarray | float:
    """LNN-or via De Morgan: ``1 - and(1 - x)``."""
    x = np.asarray(x, dtype=np.float64)
    out = 1.0 - np.clip(conj_preactivation(params, 1.0 - x), 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def pred_forward(params: LnnPredParams, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    _check_dims(params.weights, x)
    out = x @ params.weights
    return float(out) if np.ndim(out) == 0 else out


def pred_backward(params: LnnPredParams, x, upstream=1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients ``(d_weights, d_x)`` of ``w.x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    d_w = (g[..., None] * x).reshape(-1, x.shape[-1]).sum(axis=0)
    d_x = g[..., None] * params.weights
    return d_w, d_x


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _project_box_budget(w0: np.ndarray, lower: float, budget: float) -> np.ndarray:
    """Projection of ``w0`` onto ``{w >= lower, sum(w) <= budget}`` (assumed non-empty)."""
    w = np.maximum(w0, lower)
    if w.sum() <= budget:
        return w
    # w = max(w0 - theta, lower) with theta > 0 chosen so that sum(w) = budget
    gaps = np.sort(w0 - lower)[::-1]
    n = len(gaps)
    css = np.cumsum(gaps)
    for k in range(1, n + 1):
        theta = (css[k - 1] - (budget - n * lower)) / k
        if theta > 0 and (k == n or gaps[k] <= theta) and gaps[k - 1] > theta:
            break
    return np.maximum(w0 - theta, lower)


# rounding slack under which input counts as already feasible
FEASIBLE_SLACK = 1e-12


def project_conjunction(
    params: LnnConjunctionParams,
    alpha: float | None = None,
    tol: float = PROJECTION_TOL,
    max_cycles: int = PROJECTION_MAX_CYCLES,
) -> LnnConjunctionParams:
    """Euclidean projection of ``(beta, w)`` onto the feasible polyhedron.

    For a fixed beta the constraints reduce to ``w_i >= lower(beta)`` and
    ``sum(w) <= budget(beta)``, whose projection has a closed form; the
    remaining objective is convex in beta and is minimised by golden-section
    search. Feasible input is returned unchanged.
    """
    alpha = params.alpha if alpha is None else alpha
    n = params.arity
    if n < 1:
        raise ValueError("conjunction needs at least one input")
    if alpha < 1.0 and alpha <= min_feasible_alpha(n):
        raise InfeasibleConstraintsError(
            f"no feasible {n}-ary conjunction for alpha={alpha}; need alpha > {min_feasible_alpha(n):.4f}"
        )
    beta0, w0 = float(params.beta), params.weights.astype(np.float64)
    if not (np.isfinite(beta0) and np.all(np.isfinite(w0))):
        raise ValueError("non-finite conjunction parameters")
    if np.max(constraint_residuals(beta0, w0, alpha)) <= FEASIBLE_SLACK:
        return LnnConjunctionParams(beta0, w0.copy(), alpha)

    def lower(b):
        return max(0.0, (b - 1.0 + alpha) / alpha)

    def budget(b):
        return np.inf if alpha == 1.0 else (b - alpha) / (1.0 - alpha)

    if alpha == 1.0:
        b_min = 1.0
    else:
        slope = 1.0 / (1.0 - alpha) - n / alpha
        b_min = max(alpha, (alpha / (1.0 - alpha) - n * (1.0 - alpha) / alpha) / slope)

    def solve(b):
        w = _project_box_budget(w0, lower(b), budget(b))
        return (b - beta0) ** 2 + np.sum((w - w0) ** 2), w

    lo = b_min
    start = max(beta0, b_min)
    hi = start + np.sqrt(solve(start)[0]) + 1.0
    ratio = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = hi - ratio * (hi - lo), lo + ratio * (hi - lo)
    fc, fd = solve(c)[0], solve(d)[0]
    for _ in range(max_cycles):
        if hi - lo <= tol * 1e-3 * max(1.0, abs(hi)):
            break
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - ratio * (hi - lo)
            fc = solve(c)[0]
        else:
            lo, c, fc = c, d, fd
            d = lo + ratio * (hi - lo)
            fd = solve(d)[0]
    else:
        raise RuntimeError("conjunction projection did not converge")
    beta = 0.5 * (lo + hi)
    beta = max(beta, b_min)
    return LnnConjunctionParams(beta, solve(beta)[1], alpha)


def initial_conjunction(arity: int, alpha: float = DEFAULT_ALPHA) -> LnnConjunctionParams:
    """Projection of the Lukasiewicz point ``beta = 1, w = 1`` into the feasible set."""
    return project_conjunction(LnnConjunctionParams(1.0, np.ones(arity), alpha))
