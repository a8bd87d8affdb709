import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lnn_kbc.lnn import (
    InfeasibleConstraintsError,
    LnnConjunctionParams,
    LnnPredParams,
    conj_backward,
    conj_forward,
    constraint_residuals,
    disj_forward,
    initial_conjunction,
    min_feasible_alpha,
    pred_backward,
    pred_forward,
    project_conjunction,
    project_simplex,
)

from oracles import central_difference, conjunction_projection_qp, lnn_and, simplex_projection_bisection


def conj(beta, w, alpha=0.7):
    return LnnConjunctionParams(beta, np.asarray(w, dtype=float), alpha)


# -- forward examples -------------------------------------------------------


@pytest.mark.parametrize("beta,w,x,want", [
    (1.0, (1, 1), (1, 1), 1.0),
    (1.0, (1, 1), (1, 0), 0.0),
    (3.1, (4, 4), (0.7, 0.7), 0.7),
])
def test_conj_forward_examples(beta, w, x, want):
    assert conj_forward(conj(beta, w), x) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("beta,w,x,want", [
    (1.0, (1, 1), (0, 0), 0.0),
    (1.0, (1, 1), (0, 1), 1.0),
    (3.1, (4, 4), (0.3, 0.3), 0.3),
])
def test_disj_forward_examples(beta, w, x, want):
    assert disj_forward(conj(beta, w), x) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("w,x,want", [
    ((1, 0, 0), (0.2, 0.9, 0.4), 0.2),
    ((0.5, 0.5), (0, 1), 0.5),
    ((0.2, 0.3, 0.5), (1, 2, 3), 2.3),
])
def test_pred_forward_examples(w, x, want):
    assert pred_forward(LnnPredParams(w), x) == pytest.approx(want, abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        conj_forward(conj(1, (1, 1)), (1, 1, 1))
    with pytest.raises(ValueError):
        pred_forward(LnnPredParams((0.5, 0.5)), (1,))


def test_conj_forward_matches_scalar_reference():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 5))
        beta, w, x = rng.uniform(0, 4), rng.uniform(0, 3, n), rng.random(n)
        assert conj_forward(conj(beta, w), x) == pytest.approx(lnn_and(beta, w, x), abs=1e-12)


def test_batched_forward():
    p = conj(3.1, (4, 4))
    X = np.array([[0.7, 0.7], [1, 1], [0, 1]])
    np.testing.assert_allclose(conj_forward(p, X), [0.7, 1.0, 0.0], atol=1e-12)


# -- gradients --------------------------------------------------------------


def test_conj_backward_example():
    p = conj(1.7, (4, 4))
    x = np.array([0.8, 0.9])
    z = 1.7 - 4 * 0.2 - 4 * 0.1
    assert 0 < z < 1
    d_beta, d_w, d_x = conj_backward(p, x, 1.0)
    assert d_beta == 1.0
    np.testing.assert_allclose(d_w, [-0.2, -0.1], atol=1e-12)
    np.testing.assert_allclose(d_x, [4, 4])


def test_conj_backward_clipped_and_boundary():
    p = conj(0.5, (4, 4))
    d_beta, d_w, d_x = conj_backward(p, np.array([0.9, 0.9]), 1.0)  # z = -0.3
    assert d_beta == 0 and not d_w.any() and not d_x.any()
    p = conj(0.8, (4, 4))
    d_beta, _, _ = conj_backward(p, np.array([0.9, 0.9]), 1.0)  # z = 0 exactly
    assert d_beta == 1.0


def test_gradient_check_conjunction_100_points():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 100:
        n = int(rng.integers(1, 4))
        alpha = max(0.7, min_feasible_alpha(n) + 0.05)
        p = project_conjunction(conj(rng.uniform(1, 6), rng.uniform(0, 5, n), alpha))
        x = rng.random(n)
        z = p.beta - p.weights @ (1 - x)
        if not 0.01 < z < 0.99:
            continue
        up = rng.uniform(0.5, 2)
        d_beta, d_w, d_x = conj_backward(p, x, up)
        h = 1e-5
        fd_beta = (conj_forward(conj(p.beta + h, p.weights, alpha), x)
                   - conj_forward(conj(p.beta - h, p.weights, alpha), x)) / (2 * h) * up
        fd_w = central_difference(lambda w: conj_forward(conj(p.beta, w, alpha), x) * up, p.weights, h)
        fd_x = central_difference(lambda xx: conj_forward(p, xx) * up, x, h)
        assert d_beta == pytest.approx(fd_beta, abs=1e-5)
        np.testing.assert_allclose(d_w, fd_w, atol=1e-5)
        np.testing.assert_allclose(d_x, fd_x, atol=1e-5)
        checked += 1


def test_gradient_check_pred_100_points():
    rng = np.random.default_rng(3)
    for _ in range(100):
        k = int(rng.integers(1, 8))
        w, x, up = project_simplex(rng.normal(size=k)), rng.normal(size=k), rng.normal()
        d_w, d_x = pred_backward(LnnPredParams(w), x, up)
        np.testing.assert_allclose(d_w, central_difference(lambda ww: pred_forward(LnnPredParams(ww), x) * up, w),
                                   atol=1e-5)
        np.testing.assert_allclose(d_x, central_difference(lambda xx: pred_forward(LnnPredParams(w), xx) * up, x),
                                   atol=1e-5)


# -- simplex projection ----------------------------------------------------


@pytest.mark.parametrize("v,want", [((0.3, 0.7), (0.3, 0.7)), ((2, 0), (1, 0)), ((-1, -1), (0.5, 0.5))])
def test_simplex_examples(v, want):
    np.testing.assert_allclose(project_simplex(v), want, atol=1e-12)


def test_simplex_errors():
    with pytest.raises(ValueError):
        project_simplex([])
    with pytest.raises(ValueError):
        project_simplex([np.nan, 1])


def _grid_projection(v, coarse=200, fine_steps=200):
    # brute force over the 2-simplex: coarse grid, then a fine grid around the best point
    best = None
    for step, center, span in ((1.0 / coarse, None, None), (None, None, None)):
        if center is None and best is not None:
            center, span = best, 2.0 / coarse
        if center is None:
            a = np.arange(0, 1 + 1e-12, step)
            A, B = np.meshgrid(a, a, indexing="ij")
        else:
            g = np.linspace(-span, span, fine_steps + 1)
            A, B = np.meshgrid(center[0] + g, center[1] + g, indexing="ij")
        C = 1 - A - B
        ok = (A >= 0) & (B >= 0) & (C >= -1e-15)
        d = (A - v[0]) ** 2 + (B - v[1]) ** 2 + (C - v[2]) ** 2
        d[~ok] = np.inf
        i = np.unravel_index(np.argmin(d), d.shape)
        best = np.array([A[i], B[i], max(C[i], 0.0)])
        if center is not None:
            break
    return best


def test_simplex_projection_matches_grid_search():
    rng = np.random.default_rng(17)
    for _ in range(30):
        v = rng.normal(size=3) * 2
        np.testing.assert_allclose(project_simplex(v), _grid_projection(v), atol=1e-4)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=20))
def test_simplex_properties(v):
    p = project_simplex(v)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(project_simplex(p), p, atol=1e-12)
    np.testing.assert_allclose(p, simplex_projection_bisection(v), atol=1e-9)


# -- conjunction constraints ---------------------------------------------


def test_feasible_input_is_fixed_point():
    p = conj(3.1, (4, 4))
    assert p.is_feasible()
    q = project_conjunction(p)
    assert q.beta == p.beta and np.array_equal(q.weights, p.weights)


def test_lukasiewicz_point_violates_high_constraint_and_projects():
    p = conj(1, (1, 1))
    res = constraint_residuals(p.beta, p.weights, 0.7)
    assert res[-1] == pytest.approx(0.7 - 0.4)
    q = project_conjunction(p)
    assert q.violation() <= 1e-9


def test_negative_weight_clamped():
    q = project_conjunction(conj(2.0, (-1.0, 3.0), alpha=0.8))
    assert np.all(q.weights >= 0) and q.is_feasible(1e-9)


def test_initial_conjunction_binary():
    q = initial_conjunction(2, 0.7)
    assert q.beta == pytest.approx(3.1, abs=1e-6)
    np.testing.assert_allclose(q.weights, [4, 4], atol=1e-6)


def test_infeasible_alpha_reported():
    assert min_feasible_alpha(3) == 0.75
    with pytest.raises(InfeasibleConstraintsError):
        project_conjunction(conj(1, (1, 1, 1), alpha=0.7))
    q = project_conjunction(conj(1, (1, 1, 1), alpha=1.0))
    assert q.is_feasible(1e-9)


def test_projection_matches_generic_solver():
    rng = np.random.default_rng(23)
    for _ in range(40):
        n = int(rng.integers(1, 4))
        alpha = float(rng.uniform(min_feasible_alpha(n) + 0.02, 0.99))
        beta, w = rng.uniform(-2, 6), rng.uniform(-2, 6, n)
        q = project_conjunction(conj(beta, w, alpha))
        b_ref, w_ref = conjunction_projection_qp(beta, w, alpha)
        dist = (q.beta - beta) ** 2 + np.sum((q.weights - w) ** 2)
        dist_ref = (b_ref - beta) ** 2 + np.sum((w_ref - w) ** 2)
        assert q.violation() <= 1e-9
        assert dist <= dist_ref + 1e-9
        assert q.beta == pytest.approx(b_ref, abs=1e-4)
        np.testing.assert_allclose(q.weights, w_ref, atol=1e-4)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 4),
    st.floats(-10, 10),
    st.lists(st.floats(-10, 10), min_size=4, max_size=4),
    st.floats(0.0, 1.0),
)
def test_projection_feasible_idempotent_and_semantic(n, beta, w, t):
    alpha = min_feasible_alpha(n) + 0.01 + t * (0.99 - min_feasible_alpha(n) - 0.01)
    q = project_conjunction(conj(beta, w[:n], alpha))
    assert q.violation() <= 1e-9
    q2 = project_conjunction(q)
    assert abs(q2.beta - q.beta) <= 1e-9 and np.allclose(q2.weights, q.weights, atol=1e-9)
    # all-high inputs give a high output; one low input gives a low output
    assert conj_forward(q, np.full(n, alpha)) >= alpha - 1e-9
    for i in range(n):
        x = np.ones(n)
        x[i] = 1 - alpha
        assert conj_forward(q, x) <= 1 - alpha + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_and_de_morgan(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    q = project_conjunction(conj(rng.uniform(0, 5), rng.uniform(0, 5, n), 0.9))
    x = rng.random(n)
    x2 = np.minimum(1, x + rng.random(n) * 0.3)
    assert conj_forward(q, x) <= conj_forward(q, x2) + 1e-15
    assert disj_forward(q, x) == 1 - conj_forward(q, 1 - x)


def test_json_roundtrip():
    p = conj(3.1, (4, 4))
    q = LnnConjunctionParams.from_json(p.to_json())
    assert q.beta == p.beta and np.array_equal(q.weights, p.weights) and q.alpha == p.alpha
    with pytest.raises(ValueError):
        conj(1, (1,), alpha=0.5)
