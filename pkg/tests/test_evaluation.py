from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lnn_kbc.backends import DensePathBackend
from lnn_kbc.evaluation import QueryResult, build_queries, evaluate, hits_at_k, mrr_of, rank_query
from lnn_kbc.kg import KnownTails, augment_inverses

from oracles import tie_metrics_brute_force


def test_rank_query_examples():
    assert rank_query({0: 5, 1: 3, 2: 1}, 0) == QueryResult(0, 1)
    assert rank_query(np.zeros(4), 2) == QueryResult(0, 4)
    # scores {t:2, a:2, b:3, c filtered}
    assert rank_query({0: 2, 1: 2, 2: 3, 3: 9}, 0, filtered_out=[3]) == QueryResult(1, 2)


def test_rank_query_missing_vertices_score_zero():
    assert rank_query({1: 0.5}, 0, num_entities=4) == QueryResult(1, 3)


@pytest.mark.parametrize("n,m,want", [(0, 1, 1.0), (0, 2, 0.75), (1, 3, 13 / 36)])
def test_mrr_examples(n, m, want):
    assert mrr_of(QueryResult(n, m)) == pytest.approx(want, abs=1e-15)


@pytest.mark.parametrize("n,m,k,want", [(0, 1, 10, 1.0), (1, 3, 3, 2 / 3), (10, 1, 10, 0.0)])
def test_hits_examples(n, m, k, want):
    assert hits_at_k(QueryResult(n, m), k) == pytest.approx(want, abs=1e-15)


def test_tie_identity_brute_force():
    for n in range(6):
        for m in range(1, 6):
            rr, hits = tie_metrics_brute_force(n, m)
            q = QueryResult(n, m)
            assert abs(mrr_of(q) - float(rr)) <= 1e-12
            for k, h in hits.items():
                assert abs(hits_at_k(q, k) - float(h)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=12), st.data())
def test_metric_properties(scores, data):
    scores = np.array(scores, dtype=float)
    t = data.draw(st.integers(0, len(scores) - 1))
    q = rank_query(scores, t)
    assert 0 < mrr_of(q) <= 1
    assert hits_at_k(q, 1) <= hits_at_k(q, 3) <= hits_at_k(q, 10)
    assert rank_query(scores + 7.0, t) == q
    higher = np.flatnonzero(scores > scores[t])
    if len(higher):
        q2 = rank_query(scores, t, filtered_out=[int(higher[0])])
        assert mrr_of(q2) >= mrr_of(q)


class FixedModel:
    def __init__(self, fn):
        self.path_weight = fn


def test_all_zero_scorer_is_one_tie_block():
    v = 6
    g = augment_inverses(np.array([[0, 0, 1]]), 1, v)
    known = KnownTails(np.zeros((0, 3), dtype=np.int64), 1, v)
    report = evaluate({}, DensePathBackend(g, 2), np.array([[0, 0, 1]]), known, 1, mode="direct-only")
    want = sum(Fraction(1, r) for r in range(1, v + 1)) / v
    assert report.mrr == pytest.approx(float(want), abs=1e-12)


def test_perfect_model_both_modes():
    # 0 -a-> 1 -b-> 2; target relation c holds on (0, 2)
    g = augment_inverses(np.array([[0, 0, 1], [1, 1, 2]]), 3, 3)
    test = np.array([[0, 2, 2]])
    known = KnownTails(np.concatenate([g.triples[g.triples[:, 1] < 3], test]), 3, 3)
    backend = DensePathBackend(g, 2)
    from lnn_kbc.paths import PathCodec

    codec = PathCodec(6, 2)
    fwd, back = codec.encode((0, 1)), codec.encode((4, 3))
    models = {2: FixedModel(lambda c: (np.asarray(c) == fwd).astype(float)),
              5: FixedModel(lambda c: (np.asarray(c) == back).astype(float))}
    for mode in ("with-inverses", "direct-only"):
        report = evaluate(models, backend, test, known, 3, mode=mode)
        assert report.mrr == 1.0
        assert report.n_queries == (2 if mode == "with-inverses" else 1)


def test_build_queries_and_errors():
    q = build_queries(np.array([[0, 1, 2]]), 3)
    assert q.tolist() == [[0, 1, 2], [2, 4, 0]]
    with pytest.raises(ValueError):
        build_queries(np.array([[0, 1, 2]]), 3, mode="raw")
    g = augment_inverses(np.array([[0, 0, 1]]), 1, 2)
    with pytest.raises(ValueError):
        evaluate({}, DensePathBackend(g, 1), np.zeros((0, 3), dtype=np.int64), KnownTails(g.triples[:1], 1, 2), 1)


def test_report_json_and_csv(tmp_path):
    g = augment_inverses(np.array([[0, 0, 1], [1, 0, 2]]), 1, 3)
    known = KnownTails(np.array([[0, 0, 1], [1, 0, 2]]), 1, 3)
    report = evaluate({}, DensePathBackend(g, 1), np.array([[0, 0, 1]]), known, 1)
    report.write(tmp_path / "r.json", tmp_path / "r.csv", ["rel"])
    import json

    obj = json.loads((tmp_path / "r.json").read_text())
    assert set(obj) == {"mrr", "hits1", "hits3", "hits10", "n_queries", "mode"}
    assert (tmp_path / "r.csv").read_text().splitlines()[0].startswith("relation,label,n_queries,mrr")
