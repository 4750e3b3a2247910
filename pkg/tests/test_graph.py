import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgprec.errors import ConfigError, GraphError
from pgprec.graph import SubGraph, build_graph, edge_dropout, neighbors


@pytest.fixture
def small():
    return build_graph([(0, 0), (0, 1), (1, 0)], n_users=2, n_items=2)


def test_degrees(small):
    assert small.user_degrees.tolist() == [2, 1]
    assert small.item_degrees.tolist() == [2, 1]


def test_empty_graph():
    g = build_graph(np.zeros((0, 2)), 3, 4)
    assert g.user_degrees.tolist() == [0, 0, 0]
    assert g.item_degrees.sum() == 0
    assert neighbors(g, 2) == []


def test_build_errors():
    with pytest.raises(GraphError):
        build_graph([(0, 0), (0, 0)], 1, 1)
    with pytest.raises(GraphError):
        build_graph([(2, 0)], 2, 1)
    with pytest.raises(GraphError):
        build_graph([(0, -1)], 2, 1)


def test_neighbors(small):
    assert neighbors(small, 0) == [0, 1]
    assert neighbors(small, 0, side="item") == [0, 1]
    assert neighbors(small, 1, side="item") == [0]
    with pytest.raises(IndexError):
        neighbors(small, 5)
    with pytest.raises(ValueError):
        neighbors(small, 0, side="prompt")


def test_masked_neighbors(small):
    # edges are stored lexsorted: (0,0), (0,1), (1,0)
    sub = SubGraph(small, [True, True, False])
    assert neighbors(sub, 1) == []
    assert neighbors(sub, 0, side="item") == [0]
    full = SubGraph(small, [True, True, True])
    for u in range(2):
        assert neighbors(full, u) == neighbors(small, u)


def test_dropout_limits(small):
    assert edge_dropout(small, 0.0, seed=1).edge_mask.all()
    assert edge_dropout(small, 1.0, seed=1).n_edges == 0
    with pytest.raises(ConfigError):
        edge_dropout(small, 1.5, seed=1)


def test_dropout_binomial_count():
    rng = np.random.default_rng(0)
    cells = rng.choice(200 * 100, size=10_000, replace=False)
    g = build_graph(np.stack([cells // 100, cells % 100], axis=1), 200, 100)
    kept = edge_dropout(g, 0.1, seed=3).n_edges
    # "within 3 sigma" is inclusive
    assert abs(kept - 9000) <= 3 * 30


def test_dropout_deterministic_and_subset(small):
    a, b = edge_dropout(small, 0.5, 7), edge_dropout(small, 0.5, 7)
    np.testing.assert_array_equal(a.edge_mask, b.edge_mask)
    assert set(map(tuple, a.edges)) <= set(map(tuple, small.edges))
    assert (a.n_users, a.n_items) == (small.n_users, small.n_items)


def test_subgraph_mask_length(small):
    with pytest.raises(GraphError):
        SubGraph(small, [True])


edge_sets = st.sets(st.tuples(st.integers(0, 7), st.integers(0, 5)), max_size=30)


@settings(max_examples=50, deadline=None)
@given(edge_sets, st.floats(0, 1), st.integers(0, 1000))
def test_handshake_and_adjacency(edges, rho, seed):
    g = build_graph(sorted(edges), 8, 6)
    for view in (g, edge_dropout(g, rho, seed)):
        assert view.user_degrees.sum() == view.item_degrees.sum() == view.n_edges
        adj = view.adjacency()
        assert adj.sum() == view.n_edges
        for u in range(8):
            assert neighbors(view, u) == np.flatnonzero(adj[u]).tolist()
        for i in range(6):
            assert neighbors(view, i, "item") == np.flatnonzero(adj[:, i]).tolist()


def test_user_item_sets(small):
    assert small.user_item_sets() == [{0, 1}, {0}]
