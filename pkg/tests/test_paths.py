import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lnn_kbc.kg import augment_inverses
from lnn_kbc.paths import (
    PathCodec,
    PathCountTable,
    PathVocabulary,
    build_path_vocabulary,
    count_paths,
    count_paths_all_destinations,
    global_path_counts,
    path_count_matrix,
    query_mask,
    reachability_fraction,
    weighted_paths_all_destinations,
    write_matrix_csv,
)

from oracles import augmented_edges, dfs_paths, matrix_chain_total, random_graph


def toy_graph():
    # 0 -a-> 1 -b-> 2, 0 -c-> 2
    return augment_inverses(np.array([[0, 0, 1], [1, 1, 2], [0, 2, 2]]), 3, 3)


def test_codec_roundtrip_and_order():
    codec = PathCodec(3, 3)
    assert codec.size == 3 + 9 + 27
    codes = [codec.encode(p) for p in [(0,), (2,), (0, 0), (2, 2), (0, 0, 0), (2, 2, 2)]]
    assert codes == [0, 2, 3, 11, 12, 38]
    for c in range(codec.size):
        assert codec.encode(codec.decode(c)) == c
    with pytest.raises(ValueError):
        codec.encode((3,))
    with pytest.raises(ValueError):
        codec.encode(())


def test_toy_counts():
    g = toy_graph()
    t = count_paths(g, 0, 2, 2)
    assert t.to_dict(PathCodec(6, 2)) == {(2,): 1, (0, 1): 1}


def test_query_mask_removes_edge_and_inverse():
    g = toy_graph()
    mask = query_mask(0, 2, 2, 3)
    assert mask == frozenset({(0, 2, 2), (2, 5, 0)})
    assert count_paths(g, 0, 2, 2, mask).to_dict(PathCodec(6, 2)) == {(0, 1): 1}


def test_mask_leaves_no_path_when_edge_is_only_connection():
    g = augment_inverses(np.array([[0, 0, 1]]), 1, 2)
    assert len(count_paths(g, 0, 1, 3, query_mask(0, 0, 1, 1))) == 0


def test_walks_may_revisit_vertices():
    g = augment_inverses(np.array([[0, 0, 1]]), 1, 2)
    # 0 -r-> 1 -r^-1-> 0 -r-> 1
    assert count_paths(g, 0, 1, 3).to_dict(PathCodec(2, 3)) == {(0,): 1, (0, 1, 0): 1}


def test_oracle_equivalence_random_graphs():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        V, R, triples = random_graph(rng)
        g = augment_inverses(triples, R, V)
        edges = augmented_edges(triples, R)
        codec = PathCodec(2 * R, 3)
        for u in range(V):
            tables = count_paths_all_destinations(g, u, 3)
            for v in range(V):
                got = tables.get(v, PathCountTable.empty()).to_dict(codec)
                assert got == dfs_paths(edges, u, v, 3), (triples.tolist(), u, v)


def test_masked_oracle_equivalence_random_graphs():
    rng = np.random.default_rng(7)
    for _ in range(60):
        V, R, triples = random_graph(rng)
        g = augment_inverses(triples, R, V)
        edges = augmented_edges(triples, R)
        codec = PathCodec(2 * R, 3)
        for h, r, t in triples.tolist():
            mask = query_mask(h, r, t, R)
            assert count_paths(g, h, t, 3, mask).to_dict(codec) == dfs_paths(edges, h, t, 3, mask)


def test_weighted_oracle_equivalence():
    rng = np.random.default_rng(11)

    def scorer(h, r, t):
        return ((np.asarray(h) * 3 + np.asarray(r) * 5 + np.asarray(t)) % 7) / 7.0 + 0.05

    for _ in range(40):
        V, R, triples = random_graph(rng)
        g = augment_inverses(triples, R, V)
        edges = augmented_edges(triples, R)
        codec = PathCodec(2 * R, 3)
        for u in range(V):
            tables = weighted_paths_all_destinations(g, u, 3, None, scorer)
            for v in range(V):
                got = tables.get(v, PathCountTable.empty()).to_dict(codec)
                want = dfs_paths(edges, u, v, 3, edge_score=lambda e: float(scorer(*e)))
                assert got.keys() == want.keys()
                for k in want:
                    assert got[k] == pytest.approx(want[k], rel=1e-12)


def test_matrix_chain_cross_check():
    rng = np.random.default_rng(99)
    for _ in range(200):
        V, R, triples = random_graph(rng)
        g = augment_inverses(triples, R, V)
        edges = augmented_edges(triples, R)
        for length in (1, 2, 3):
            table = global_path_counts(g, length)
            codec = PathCodec(2 * R, length)
            got = table.to_dict(codec)
            for p in np.ndindex(*(2 * R,) * length):
                assert got.get(p, 0) == matrix_chain_total(edges, V, p)


def test_path_count_matrix_cap():
    g = toy_graph()
    with pytest.raises(ValueError):
        path_count_matrix(g, 3, cap=10)
    M = path_count_matrix(g, 2)
    assert M.shape == (6, 6) and M[0, 1] == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_path_count_conservation(seed):
    # summing length-l tables over destinations equals the global count from that source
    rng = np.random.default_rng(seed)
    V, R, triples = random_graph(rng, max_vertices=8, max_relations=3, max_edges=15)
    g = augment_inverses(triples, R, V)
    total = sum(t.total() for u in range(V) for t in count_paths_all_destinations(g, u, 2).values())
    assert total == global_path_counts(g, 1).total() + global_path_counts(g, 2).total()


def test_vocabulary_lexicographic_ids():
    codec = PathCodec(3, 2)
    vocab = PathVocabulary(codec, [codec.encode(p) for p in [(1,), (0, 2), (2,), (0,), (1, 0)]])
    assert vocab.paths == [(0,), (0, 2), (1,), (1, 0), (2,)]
    assert vocab.id_of((1, 0)) == 3
    assert vocab.ids_of_codes(np.array([codec.encode((2, 2))]))[0] == -1
    vocab.enable_fast_lookup()
    assert vocab.ids_of_codes(np.array([codec.encode((1, 0)), codec.encode((2, 2))])).tolist() == [3, -1]


def test_build_path_vocabulary():
    g = toy_graph()
    vocab = build_path_vocabulary(g, [(0, 2, query_mask(0, 2, 2, 3))], 2)
    assert vocab.paths == [(0, 1)]


def test_reachability_toy():
    g = toy_graph()
    # with their own edges masked, both queries need two hops
    frac = reachability_fraction(g, np.array([[0, 2, 2], [0, 0, 1]]), 3)
    assert frac.tolist() == [0.0, 1.0, 1.0]
    assert reachability_fraction(g, np.array([[0, 1], [0, 0]]), 2).tolist() == [0.5, 1.0]


def test_matrix_csv(tmp_path):
    g = toy_graph()
    write_matrix_csv(tmp_path / "m.csv", path_count_matrix(g, 2), list("abcABC"))
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0].startswith("first\\second,a,b,c")
    assert rows[1].split(",")[:3] == ["a", "0", "1"]
