"""Slow, obviously-correct reference implementations used by the tests.

Nothing here imports the package under test except plain data containers.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize


def augmented_edges(triples, num_relations: int) -> list[tuple[int, int, int]]:
    out = set()
    for h, r, t in triples:
        out.add((int(h), int(r), int(t)))
        out.add((int(t), int(r) + num_relations, int(h)))
    return sorted(out)


def dfs_paths(edges, u: int, v: int, max_length: int, mask=(), edge_score=None) -> dict:
    """Walk-by-walk enumeration: relation path -> number of walks (or summed walk scores)."""
    mask = set(mask)
    adj: dict[int, list[tuple[int, int, int]]] = {}
    for e in edges:
        if e not in mask:
            adj.setdefault(e[0], []).append(e)
    out: dict[tuple[int, ...], float] = {}

    def walk(x, rels, score):
        if rels and x == v:
            out[tuple(rels)] = out.get(tuple(rels), 0) + (score if edge_score else 1)
        if len(rels) == max_length:
            return
        for e in adj.get(x, ()):
            walk(e[2], rels + [e[1]], score + (edge_score(e) if edge_score else 0))

    walk(u, [], 0.0)
    return out


def matrix_chain_total(edges, num_vertices: int, relation_path) -> int:
    """Grand sum of the product of per-relation adjacency matrices along the path."""
    mats = {}
    for h, r, t in edges:
        mats.setdefault(r, np.zeros((num_vertices, num_vertices), dtype=np.int64))[h, t] = 1
    P = np.eye(num_vertices, dtype=np.int64)
    for r in relation_path:
        P = P @ mats.get(r, np.zeros((num_vertices, num_vertices), dtype=np.int64))
    return int(P.sum())


def tie_metrics_brute_force(n: int, m: int, ks=(1, 3, 10)) -> tuple[Fraction, dict]:
    """Average reciprocal rank and hits of the target over every ordering of its tie block."""
    rr = Fraction(0)
    hits = {k: Fraction(0) for k in ks}
    perms = list(itertools.permutations(range(m)))
    for perm in perms:
        rank = n + 1 + perm.index(0)  # item 0 is the target
        rr += Fraction(1, rank)
        for k in ks:
            hits[k] += 1 if rank <= k else 0
    return rr / len(perms), {k: h / len(perms) for k, h in hits.items()}


def simplex_projection_bisection(v, iters: int = 200) -> np.ndarray:
    """Solve sum(max(v - theta, 0)) = 1 for theta by bisection."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(v - mid, 0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - 0.5 * (lo + hi), 0)


def conjunction_projection_qp(beta: float, w, alpha: float, margin: float = 1e-7) -> tuple[float, np.ndarray]:
    """Generic solver for min ||(b, x) - (beta, w)||^2 under the conjunction constraints.

    Constraints are tightened by ``margin`` so the solver's small violations
    never let it beat the true optimum.
    """
    w = np.asarray(w, dtype=np.float64)
    n = len(w)
    z0 = np.r_[beta, w]
    cons = [{"type": "ineq", "fun": lambda z, i=i: (1 - alpha) - (z[0] - alpha * z[1 + i]) - margin} for i in range(n)]
    cons.append({"type": "ineq", "fun": lambda z: z[0] - (1 - alpha) * z[1:].sum() - alpha - margin})
    bounds = [(None, None)] + [(0, None)] * n
    best = None
    for start in (z0, np.r_[1.0 + n, np.full(n, 2.0)]):
        res = minimize(lambda z: np.sum((z - z0) ** 2), start, jac=lambda z: 2 * (z - z0), bounds=bounds,
                       constraints=cons, method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000})
        if best is None or res.fun < best.fun:
            best = res
    return float(best.x[0]), best.x[1:]


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def lnn_and(beta: float, w, x) -> float:
    """Scalar reference: clip(beta - sum_i w_i (1 - x_i), 0, 1)."""
    z = beta - sum(wi * (1 - xi) for wi, xi in zip(w, x))
    return min(1.0, max(0.0, z))


def random_graph(rng: np.random.Generator, max_vertices: int = 12, max_relations: int = 4, max_edges: int = 30):
    V = int(rng.integers(2, max_vertices + 1))
    R = int(rng.integers(1, max_relations + 1))
    n = int(rng.integers(1, max_edges + 1))
    triples = np.unique(np.c_[rng.integers(V, size=n), rng.integers(R, size=n), rng.integers(V, size=n)], axis=0)
    return V, R, triples
