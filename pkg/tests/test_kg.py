import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lnn_kbc.kg import (
    DatasetSplits,
    KnownTails,
    TripleParseError,
    Vocabulary,
    augment_inverses,
    filter_candidates,
    inverse_triples,
    load_dataset,
    load_triples,
    write_triples,
)

from conftest import DATA_DIR


def test_single_line_file(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("a\tp\tb\n", encoding="utf-8")
    out = load_triples(p)
    assert out.triples.tolist() == [[0, 0, 1]]
    assert out.entities.labels == ["a", "b"] and out.relations.labels == ["p"]


def test_parse_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("a\tp\tb\na\tp\n", encoding="utf-8")
    with pytest.raises(TripleParseError, match=":2:"):
        load_triples(p)
    p.write_text("\n\n", encoding="utf-8")
    with pytest.raises(TripleParseError):
        load_triples(p)


def test_duplicates_dropped_and_counted(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("a\tp\tb\nb\tp\tc\na\tp\tb\n", encoding="utf-8")
    out = load_triples(p)
    assert len(out.triples) == 2 and out.n_duplicates == 1


def test_round_trip(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("x\tr\ty\ny\ts\tz\nz\tr\tx\n", encoding="utf-8")
    a = load_triples(p)
    write_triples(tmp_path / "u.txt", a.triples, a.entities, a.relations)
    b = load_triples(tmp_path / "u.txt")
    assert b.triples.tolist() == a.triples.tolist() and b.entities == a.entities


def test_augment_examples():
    g = augment_inverses(np.array([[0, 0, 1]]), 1, 2)
    assert g.triples.tolist() == [[0, 0, 1], [1, 1, 0]] and g.num_augmented_relations == 2
    g = augment_inverses(np.array([[0, 0, 0]]), 1, 1)
    assert g.num_edges == 2 and g.has_edge(0, 1, 0)
    with pytest.raises(ValueError):
        augment_inverses(np.array([[0, 1, 1]]), 1, 2)


def test_adjacency_indexes():
    g = augment_inverses(np.array([[0, 0, 1], [0, 1, 2], [2, 0, 1]]), 2, 3)
    rels, tails = g.out_edges(0)
    assert list(zip(rels.tolist(), tails.tolist())) == [(0, 1), (1, 2)]
    rels, heads = g.in_edges(1)
    assert sorted(zip(rels.tolist(), heads.tolist())) == [(0, 0), (0, 2)]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 2), st.integers(0, 6)), min_size=1, max_size=25))
def test_inverse_involution(edges):
    g = augment_inverses(np.array(edges), 3, 7)
    flipped = inverse_triples(g.triples, 3)
    assert set(map(tuple, flipped.tolist())) == set(map(tuple, g.triples.tolist()))
    assert g.num_edges == 2 * len(set(edges))


def test_filter_candidates_examples():
    known = KnownTails(np.array([[0, 0, 1], [0, 0, 2], [3, 0, 4]]), 1, 5)
    assert filter_candidates(0, 0, 2, known).tolist() == [0, 2, 3, 4]
    assert filter_candidates(1, 0, 3, known).tolist() == [0, 1, 2, 3, 4]
    # inverse direction is indexed as well
    assert filter_candidates(1, 1, 3, known).tolist() == [1, 2, 3, 4]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1), st.integers(0, 5)), min_size=1, max_size=20),
       st.integers(0, 5), st.integers(0, 3), st.integers(0, 5))
def test_filter_candidates_brute_force(edges, h, r, t):
    known = KnownTails(np.array(edges), 2, 6)
    aug = set(edges) | {(b, rr + 2, a) for a, rr, b in edges}
    removed = {x for (a, rr, x) in aug if a == h and rr == r and x != t}
    got = set(filter_candidates(h, r, t, known).tolist())
    assert t in got and got == set(range(6)) - removed


def test_splits_must_be_disjoint():
    v = Vocabulary(["a", "b"])
    with pytest.raises(ValueError):
        DatasetSplits(np.array([[0, 0, 1]]), np.array([[0, 0, 1]]), np.zeros((0, 3), int), v, Vocabulary(["p"]))


@pytest.mark.parametrize("name,triples,entities,relations", [("kinship", 8544, 104, 25), ("umls", 5216, 135, 46)])
def test_benchmark_statistics(name, triples, entities, relations):
    d = DATA_DIR / name
    if not d.exists():
        pytest.skip(f"{name} data not present")
    train = load_triples(d / "train.txt")
    assert len(train.triples) == triples and len(train.entities) == entities
    assert len(train.relations) == relations
    splits = load_dataset(d)
    g = splits.train_graph()
    # the published relation counts include inverses
    assert g.num_augmented_relations == 2 * relations
    assert g.num_edges == 2 * triples


def test_kinship_heaviest_length_two_paths():
    d = DATA_DIR / "kinship"
    if not d.exists():
        pytest.skip("kinship data not present")
    from lnn_kbc.paths import path_count_matrix

    ds = load_dataset(d)
    R = ds.num_relations
    M = path_count_matrix(ds.train_graph(), 2)[:R, :R]
    lab = ds.relations.labels
    top = np.argsort(M, axis=None)[::-1][:4]
    pairs = {(lab[i // R], lab[i % R]) for i in top}
    assert pairs == {("term16", "term7"), ("term16", "term8"), ("term16", "term16"), ("term7", "term16")}
    # every (U, W, V) walk is counted once, vertex revisits included
    assert M[lab.index("term16"), lab.index("term16")] == 8395
