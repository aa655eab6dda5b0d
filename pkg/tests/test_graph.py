import numpy as np
import pandas as pd
import pytest

from compnet.graph import (GraphError, aitchison_cross, aitchison_distance, check_graph,
                           cluster_block_graph, corrupt_graph, gower_cross, gower_distance,
                           knn_graph, knn_indicator, knn_rows, numeric_ranges, read_graph,
                           restrict, write_graph)

from conftest import random_graph


def test_gower_examples():
    cov = pd.DataFrame({"sex": ["F", "F", "M"], "age": [20.0, 30.0, 20.0]})
    d = gower_distance(cov)
    assert d[0, 1] == pytest.approx(0.5)
    assert d[0, 2] == pytest.approx(0.5)
    assert d[1, 2] == pytest.approx(1.0)
    assert np.all(np.diag(d) == 0)
    same = gower_distance(pd.DataFrame({"a": [1.0, 1.0], "b": ["x", "x"]}))
    assert np.all(same == 0)


def test_gower_constant_column_contributes_zero():
    d = gower_distance(pd.DataFrame({"a": [5.0, 5.0], "b": [0.0, 1.0]}))
    assert d[0, 1] == pytest.approx(0.5)


def test_gower_errors():
    with pytest.raises(GraphError, match="no covariates for Gower"):
        gower_distance(pd.DataFrame(index=range(3)))
    with pytest.raises(GraphError):
        gower_distance(None)


def test_gower_cross_uses_reference_ranges():
    train = pd.DataFrame({"age": [20.0, 40.0]})
    new = pd.DataFrame({"age": [100.0]})
    d = gower_cross(new, train, numeric_ranges(train))
    # 100 is clamped to 40
    np.testing.assert_allclose(d, [[1.0, 0.0]])


def test_aitchison_examples(rng):
    x = np.array([[1 / 3] * 3, [0.5, 0.25, 0.25], [1 / 3] * 3])
    d = aitchison_distance(x)
    assert d[0, 1] == pytest.approx(np.sqrt(0.4621 ** 2 + 2 * 0.2310 ** 2), abs=1e-3)
    assert d[0, 2] == 0
    pts = rng.dirichlet(np.ones(5), size=30)
    dd = aitchison_distance(pts)
    for _ in range(200):
        i, j, k = rng.choice(30, 3, replace=False)
        assert dd[i, k] <= dd[i, j] + dd[j, k] + 1e-12
    np.testing.assert_allclose(aitchison_cross(pts[:4], pts), dd[:4], atol=1e-12)


def test_knn_tie_example():
    d = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    r = knn_graph(d, 1)
    assert r[0, 1] == 1 and r[1, 2] == 0.5 and r[0, 2] == 0


def test_knn_full_and_errors(rng):
    a = rng.random((6, 6))
    d = a + a.T
    np.fill_diagonal(d, 0)
    r = knn_graph(d, 5)
    assert np.all(r[~np.eye(6, dtype=bool)] == 1)
    with pytest.raises(GraphError):
        knn_graph(d, 6)
    with pytest.raises(GraphError):
        knn_graph(d, 0)
    s = knn_indicator(d, 2)
    assert np.all(s.sum(1) == 2) and np.all(np.diag(s) == 0)


def test_knn_rows():
    d = np.array([[3.0, 1.0, 1.0, 0.5]])
    np.testing.assert_array_equal(knn_rows(d, 2), [[0, 1, 0, 1]])
    with pytest.raises(GraphError):
        knn_rows(d, 5)


def test_block_graph_examples():
    np.testing.assert_array_equal(cluster_block_graph([1, 1, 2]),
                                  [[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    np.testing.assert_array_equal(cluster_block_graph([3, 3, 3]), 1 - np.eye(3))
    np.testing.assert_array_equal(cluster_block_graph([1, 2, 3]), np.zeros((3, 3)))


def test_corrupt_graph_examples():
    r = cluster_block_graph(np.repeat([0, 1, 2], 40))
    np.testing.assert_array_equal(corrupt_graph(r, 1.0, 0), r)
    off = ~np.eye(120, dtype=bool)
    np.testing.assert_array_equal(corrupt_graph(r, 0.0, 0)[off], 1 - r[off])
    np.testing.assert_array_equal(corrupt_graph(r, 0.7, 5), corrupt_graph(r, 0.7, 5))
    with pytest.raises(GraphError):
        corrupt_graph(r * 0.5, 0.9, 0)
    with pytest.raises(GraphError):
        corrupt_graph(r, 1.5, 0)


def test_corrupt_graph_flip_count():
    r = cluster_block_graph(np.repeat([0, 1, 2], 40))
    pairs = 120 * 119 // 2
    mean, sd = 0.1 * pairs, np.sqrt(pairs * 0.1 * 0.9)
    for seed in range(10):
        flips = np.triu(corrupt_graph(r, 0.9, seed) != r, 1).sum()
        assert abs(flips - mean) <= 4 * sd


def test_check_graph():
    with pytest.raises(GraphError):
        check_graph(np.array([[0, 1], [0, 0]]))
    with pytest.raises(GraphError):
        check_graph(np.array([[1.0]]))
    with pytest.raises(GraphError):
        check_graph(np.array([[0, -1], [-1, 0]]))
    with pytest.raises(GraphError):
        check_graph(np.zeros((2, 3)))


@pytest.mark.parametrize("fmt", ["dense", "triplet"])
def test_graph_round_trip(tmp_path, rng, fmt):
    r = random_graph(rng, 7, weighted=True)
    write_graph(tmp_path / "g.csv", r, fmt)
    back = read_graph(tmp_path / "g.csv", fmt, n=7)
    np.testing.assert_allclose(back, r, rtol=1e-9)
    with pytest.raises(ValueError):
        read_graph(tmp_path / "g.csv", "xml")


def test_restrict(rng):
    r = random_graph(rng, 5)
    np.testing.assert_array_equal(restrict(r, [0, 2], [1, 3, 4]), r[np.ix_([0, 2], [1, 3, 4])])
