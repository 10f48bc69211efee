import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riemann_free.data import (CycleError, RelationGraph, SplitSpec, TabularDataset, balanced_tree,
                               generate_rayleigh, init_point, load_csv, load_edge_list, make_rng,
                               split, standardize, synthetic_gaussian, transitive_closure)
from riemann_free.manifolds import Euclidean, Grassmann, PoincareBall, PowerManifold, Sphere


def test_load_csv_basic(tmp_path):
    f = tmp_path / "a.csv"
    f.write_text("1,2\n3,4\n5,6\n")
    ds = load_csv(f)
    assert (ds.n, ds.d) == (3, 2)
    np.testing.assert_array_equal(ds.X, [[1, 2], [3, 4], [5, 6]])
    assert ds.provenance == str(f)


def test_load_csv_header_delimiter_label(tmp_path):
    f = tmp_path / "b.csv"
    f.write_text("x;y;label\n1;2;0\n3;4;1\n")
    ds = load_csv(f, delimiter=";", has_header=True, label_column=2)
    assert ds.X.shape == (2, 2)
    np.testing.assert_array_equal(ds.y, [0, 1])


def test_load_csv_errors(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("1,2\n3,abc\n")
    with pytest.raises(ValueError, match="row 2, column 2"):
        load_csv(f)
    e = tmp_path / "e.csv"
    e.write_text("")
    with pytest.raises(ValueError, match="empty"):
        load_csv(e)
    r = tmp_path / "r.csv"
    r.write_text("1,2\n3\n")
    with pytest.raises(ValueError, match="columns"):
        load_csv(r)
    n = tmp_path / "n.csv"
    n.write_text("1,2\nnan,4\n")
    with pytest.raises(ValueError, match="NaN"):
        load_csv(n)


def test_load_csv_deterministic(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("\n".join(f"{i},{i * 0.1}" for i in range(50)))
    h = [hashlib.sha256(load_csv(f).X.tobytes()).hexdigest() for _ in range(2)]
    assert h[0] == h[1]


def test_tabular_dataset_needs_two_rows():
    with pytest.raises(ValueError):
        TabularDataset(np.ones((1, 3)))


def test_standardize_uses_reference():
    X = np.array([[1.0, 5.0], [3.0, 5.0]])
    S = standardize(X)
    np.testing.assert_allclose(S, [[-1, 0], [1, 0]])
    np.testing.assert_allclose(standardize(np.array([[2.0, 6.0]]), reference=X), [[0, 1]])


def test_split_partition_and_determinism():
    a = split(101, SplitSpec(0.8, seed=4))
    b = split(101, SplitSpec(0.8, seed=4))
    np.testing.assert_array_equal(a[0], b[0])
    assert len(a[0]) == 81
    assert set(a[0]) | set(a[1]) == set(range(101))
    assert not set(a[0]) & set(a[1])
    assert not np.array_equal(split(101, SplitSpec(0.8, seed=5))[0], a[0])
    with pytest.raises(ValueError):
        SplitSpec(1.0)


def test_make_rng_streams():
    assert make_rng(3, 1).random() == make_rng(3, 1).random()
    assert make_rng(3, 1).random() != make_rng(3, 2).random()
    assert make_rng(3).random() != make_rng(4).random()


def test_synthetic_gaussian_spectrum():
    ds = synthetic_gaussian(20_000, 5, seed=0, spectrum=[5, 4, 3, 2, 1])
    w = np.linalg.eigvalsh(np.cov(ds.X.T))
    np.testing.assert_allclose(sorted(w), [1, 2, 3, 4, 5], rtol=0.05)
    with pytest.raises(ValueError):
        synthetic_gaussian(10, 3, spectrum=[1, 2])
    mix = synthetic_gaussian(100, 3, seed=0, n_clusters=3, separation=5.0)
    assert set(mix.y) <= {0, 1, 2}


# --- graphs ----------------------------------------------------------------


def test_edge_list(tmp_path):
    f = tmp_path / "g.txt"
    f.write_text("# child parent\nb a\nc,b\n\n")
    g = load_edge_list(f)
    assert (g.n_nodes, g.n_edges) == (3, 2)
    bad = tmp_path / "bad.txt"
    bad.write_text("a b c\n")
    with pytest.raises(ValueError, match="line 1"):
        load_edge_list(bad)


def test_closure_chain():
    g = RelationGraph.from_pairs([("a", "b"), ("b", "c")])
    c = transitive_closure(g)
    assert c.n_edges == 3 and c.closed
    assert (c.index["a"], c.index["c"]) in c.edges


def test_closure_single_edge_unchanged():
    g = RelationGraph.from_pairs([("a", "b")])
    assert transitive_closure(g).edges == g.edges


def _depth_sum(depth):
    return sum(k * 2**k for k in range(depth + 1))


def test_closure_balanced_trees():
    assert balanced_tree(3).n_nodes == 15
    assert transitive_closure(balanced_tree(3)).n_edges == 34 == _depth_sum(3)
    assert balanced_tree(4).n_nodes == 31
    assert transitive_closure(balanced_tree(4)).n_edges == 98 == _depth_sum(4)


def test_closure_matches_brute_force_ancestors():
    g = balanced_tree(3, branching=3)
    c = transitive_closure(g)
    brute = set()
    for i in range(1, g.n_nodes):
        j = i
        while j:
            j = (j - 1) // 3
            brute.add((i, j))
    assert c.edges == brute


def test_closure_idempotent():
    c = transitive_closure(balanced_tree(3))
    assert transitive_closure(c).edges == c.edges


def test_cycle_rejected_with_path():
    g = RelationGraph.from_pairs([("a", "b"), ("b", "c"), ("c", "a"), ("d", "a")])
    with pytest.raises(CycleError) as info:
        transitive_closure(g)
    path = info.value.path
    assert path[0] == path[-1] and set(path) == {"a", "b", "c"}
    assert "->" in str(info.value)


def test_irreflexive():
    with pytest.raises(ValueError):
        RelationGraph.from_pairs([("a", "a")])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=25))
def test_closure_is_transitive_on_random_dags(pairs):
    dag = [(max(u, v), min(u, v)) for u, v in pairs if u != v]
    if not dag:
        return
    c = transitive_closure(RelationGraph.from_pairs(dag))
    for u, v in c.edges:
        for v2, w in c.edges:
            if v2 == v:
                assert (u, w) in c.edges


# --- generators ------------------------------------------------------------


def test_rayleigh_generator():
    p = generate_rayleigh(6, 1, seed=0)
    assert np.linalg.matrix_rank(p.A) == 1
    p = generate_rayleigh(10, 12, seed=3)
    assert np.array_equal(p.A, p.A.T)
    assert np.all(np.linalg.eigvalsh(p.A) > -1e-12)
    np.testing.assert_array_equal(generate_rayleigh(10, 12, seed=3).A, p.A)
    with pytest.raises(ValueError):
        generate_rayleigh(0, 3)


def test_rayleigh_condition_number_grows_as_q_approaches_d():
    def mean_cond(q):
        return np.mean([np.linalg.cond(generate_rayleigh(40, q, seed=s).A) for s in range(5)])

    conds = [mean_cond(q) for q in (400, 100, 55, 44)]
    assert all(a < b for a, b in zip(conds, conds[1:]))


def test_init_point_examples():
    x = init_point(Sphere(7), seed=0)
    assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-15)
    y = init_point(Grassmann(6, 2), seed=0)
    np.testing.assert_allclose(y.T @ y, np.eye(2), atol=1e-12)
    th = init_point(PowerManifold(PoincareBall(5), 31), seed=0)
    assert th.shape == (31, 5) and np.all(np.abs(th) <= 1e-3)
    assert np.all(np.abs(init_point(PoincareBall(3), seed=1, box=0.2)) <= 0.2)
    assert init_point(Euclidean(3), seed=0).shape == (3,)
    np.testing.assert_array_equal(init_point(Sphere(7), seed=5), init_point(Sphere(7), seed=5))


def test_init_point_scheme_mismatch():
    with pytest.raises(ValueError):
        init_point(Sphere(3), scheme="gaussian_qr")
    with pytest.raises(ValueError):
        init_point(Grassmann(4, 2), scheme="uniform_box")
