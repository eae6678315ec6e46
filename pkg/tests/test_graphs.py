import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossgad.graphs import (AttributedGraph, CompiledAdjacency, EdgeMask,
                             corrupt_features, drop_edges, readout_mean,
                             validate_graph)

from conftest import tiny_graph


def big_edge_graph(num_edges=1000, seed=3):
    """Graph with exactly `num_edges` distinct edges on 100 nodes."""
    rng = np.random.default_rng(seed)
    iu, iv = np.triu_indices(100, k=1)
    pick = rng.choice(iu.size, size=num_edges, replace=False)
    edges = np.stack([iu[pick], iv[pick]], axis=1)
    return AttributedGraph(num_nodes=100, edges=edges,
                           features=np.zeros((100, 2)))


class TestAttributedGraph:
    def test_edges_canonicalized(self):
        g = AttributedGraph(num_nodes=4, edges=[(2, 1), (1, 2), (3, 0)],
                            features=np.zeros((4, 2)))
        np.testing.assert_array_equal(g.edges, [[0, 3], [1, 2]])

    def test_adjacency_symmetric_binary(self):
        g = tiny_graph()
        a = g.adjacency()
        np.testing.assert_array_equal(a, a.T)
        assert set(np.unique(a)) <= {0.0, 1.0}
        for u, v in g.edges:
            assert a[u, v] == 1.0

    def test_arrays_immutable(self):
        g = tiny_graph()
        with pytest.raises(ValueError):
            g.features[0, 0] = 1.0
        with pytest.raises(ValueError):
            g.edges[0, 0] = 9


class TestDropEdges:
    def test_p_zero_keeps_everything(self):
        g = tiny_graph()
        mask = drop_edges(g, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(mask.kept, g.edges)

    def test_p_one_drops_everything(self):
        g = tiny_graph()
        mask = drop_edges(g, 1.0, np.random.default_rng(0))
        assert mask.num_kept == 0

    def test_invalid_p(self):
        g = tiny_graph()
        for p in (-0.1, 1.5):
            with pytest.raises(ValueError):
                drop_edges(g, p, np.random.default_rng(0))

    def test_subset_of_parent(self):
        g = tiny_graph()
        mask = drop_edges(g, 0.5, np.random.default_rng(5))
        parent = {tuple(e) for e in g.edges}
        assert {tuple(e) for e in mask.kept} <= parent

    def test_deterministic_under_seed(self):
        g = big_edge_graph()
        m1 = drop_edges(g, 0.3, np.random.default_rng(42))
        m2 = drop_edges(g, 0.3, np.random.default_rng(42))
        np.testing.assert_array_equal(m1.kept, m2.kept)

    def test_kept_count_within_binomial_interval(self):
        # mean of 200 Binomial(1000, 0.9) draws vs the 99% normal interval
        g = big_edge_graph(1000)
        counts = [drop_edges(g, 0.1, np.random.default_rng(s)).num_kept
                  for s in range(200)]
        sd_mean = np.sqrt(1000 * 0.9 * 0.1) / np.sqrt(200)
        assert abs(np.mean(counts) - 900.0) <= 2.5758 * sd_mean

    def test_monotone_in_drop_probability(self):
        g = big_edge_graph(500)
        mean_01 = np.mean([drop_edges(g, 0.1, np.random.default_rng(s)).num_kept
                           for s in range(200)])
        mean_05 = np.mean([drop_edges(g, 0.5, np.random.default_rng(s)).num_kept
                           for s in range(200)])
        assert mean_01 > mean_05


class TestCorruptFeatures:
    def test_single_node_identity(self):
        g = AttributedGraph(num_nodes=1, edges=[], features=[[1.0, 2.0]])
        out = corrupt_features(g, np.random.default_rng(0))
        np.testing.assert_array_equal(out, g.features)

    def test_matches_seeded_permutation_oracle(self):
        g = tiny_graph(seed=2)
        out = corrupt_features(g, np.random.default_rng(77))
        perm = np.random.default_rng(77).permutation(g.num_nodes)
        np.testing.assert_array_equal(out, np.asarray(g.features)[perm])

    @given(st.integers(min_value=1, max_value=20), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_row_multiset_preserved(self, n, seed):
        rng = np.random.default_rng(seed)
        g = AttributedGraph(num_nodes=n, edges=[],
                            features=rng.normal(size=(n, 3)))
        out = corrupt_features(g, rng)
        original = np.asarray(g.features)
        order = np.lexsort(original.T)
        order_out = np.lexsort(out.T)
        np.testing.assert_array_equal(out[order_out], original[order])


class TestReadoutMean:
    def test_constant_rows(self):
        h = np.array([1.5, -2.0, 0.25])
        out = readout_mean(np.tile(h, (7, 1)))
        np.testing.assert_allclose(out, h, atol=0)

    def test_two_row_symmetry(self):
        out = readout_mean(np.array([[0.0, 2.0], [2.0, 0.0]]))
        np.testing.assert_allclose(out, [1.0, 1.0])

    def test_matches_accumulation_oracle(self):
        rng = np.random.default_rng(9)
        h = rng.normal(size=(50, 8))
        acc = np.zeros(8)
        for row in h:
            acc += row
        np.testing.assert_allclose(readout_mean(h), acc / 50, atol=1e-12)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            readout_mean(np.zeros((0, 4)))

    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_permutation_invariant(self, n, seed):
        rng = np.random.default_rng(seed)
        h = rng.normal(size=(n, 4))
        perm = rng.permutation(n)
        np.testing.assert_allclose(readout_mean(h), readout_mean(h[perm]),
                                   atol=1e-12)


class TestValidateGraph:
    def test_well_formed(self):
        assert validate_graph(tiny_graph()) == []

    def test_out_of_range_endpoint(self):
        g = AttributedGraph(num_nodes=4, edges=[(0, 4)],
                            features=np.zeros((4, 2)))
        diags = validate_graph(g)
        assert len(diags) == 1 and "outside" in diags[0]

    def test_self_loop(self):
        g = AttributedGraph(num_nodes=4, edges=[(2, 2)],
                            features=np.zeros((4, 2)))
        assert any("self-loop" in d for d in validate_graph(g))

    def test_non_binary_labels(self):
        g = AttributedGraph(num_nodes=3, edges=[], features=np.zeros((3, 2)),
                            labels=[0, 2, 1])
        diags = validate_graph(g)
        assert len(diags) == 1 and "non-binary" in diags[0]

    def test_feature_row_mismatch(self):
        g = AttributedGraph(num_nodes=4, edges=[], features=np.zeros((3, 2)))
        assert any("rows" in d for d in validate_graph(g))


class TestCompiledAdjacency:
    def test_neighbor_mean_matches_dense_oracle(self):
        g = tiny_graph()
        adj = CompiledAdjacency.from_graph(g)
        rng = np.random.default_rng(4)
        h = rng.normal(size=(g.num_nodes, 5))
        a = g.adjacency()
        deg = a.sum(axis=1, keepdims=True)
        expected = np.divide(a @ h, deg, out=np.zeros_like(h), where=deg > 0)
        np.testing.assert_allclose(adj.neighbor_mean(h), expected, atol=1e-12)

    def test_isolated_node_aggregates_zero(self):
        g = AttributedGraph(num_nodes=3, edges=[(0, 1)],
                            features=np.zeros((3, 1)))
        adj = CompiledAdjacency.from_graph(g)
        out = adj.neighbor_mean(np.ones((3, 4)))
        assert not out[2].any()

    def test_vjp_is_adjoint(self):
        # <G, A h> == <A* G, h> for the linear neighbor-mean operator
        g = tiny_graph()
        adj = CompiledAdjacency.from_graph(g)
        rng = np.random.default_rng(8)
        h = rng.normal(size=(g.num_nodes, 3))
        G = rng.normal(size=(g.num_nodes, 3))
        lhs = (G * adj.neighbor_mean(h)).sum()
        rhs = (adj.neighbor_mean_vjp(G) * h).sum()
        assert abs(lhs - rhs) < 1e-12


def test_edge_mask_compile_roundtrip():
    g = tiny_graph()
    mask = EdgeMask(g.num_nodes, g.edges)
    adj = mask.compile()
    assert adj.src.size == 2 * g.num_edges
    deg = np.bincount(np.asarray(g.edges).ravel(), minlength=g.num_nodes)
    expected = np.divide(1.0, deg, out=np.zeros(g.num_nodes), where=deg > 0)
    np.testing.assert_allclose(adj.inv_deg, expected)
