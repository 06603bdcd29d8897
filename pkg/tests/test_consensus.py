import numpy as np
import pytest

from decac.consensus import (
    CommGraph,
    complete_graph,
    consensus_rate_bound,
    disagreement,
    erdos_graph,
    gossip,
    graph_from_edges,
    load_mixing_csv,
    measure_decay_ratio,
    metropolis_weights,
    ring_graph,
    star_graph,
    validate_mixing,
)
from decac.errors import ConfigError, DimensionError


class TestGraphs:
    def test_ring_edges(self):
        g = ring_graph(4)
        assert g.n_agents == 4
        assert set(g.edges) == {(0, 1), (1, 2), (2, 3), (0, 3)}
        assert list(g.degrees()) == [2, 2, 2, 2]
        assert g.is_connected()

    def test_ring_of_two_is_single_edge(self):
        g = ring_graph(2)
        assert set(g.edges) == {(0, 1)}

    def test_star_hub_degree(self):
        g = star_graph(5)
        assert g.degrees()[0] == 4
        assert list(g.degrees()[1:]) == [1, 1, 1, 1]

    def test_complete_graph_edge_count(self):
        g = complete_graph(5)
        assert len(g.edges) == 10
        assert g.is_connected()

    def test_single_agent_graph(self):
        g = complete_graph(1)
        assert g.edges == ()
        assert g.is_connected()

    def test_erdos_connected_and_deterministic(self):
        a = erdos_graph(6, 0.4, np.random.default_rng(11))
        b = erdos_graph(6, 0.4, np.random.default_rng(11))
        assert a.edges == b.edges
        assert a.is_connected()

    def test_erdos_p_one_is_complete(self):
        g = erdos_graph(4, 1.0, np.random.default_rng(0))
        assert len(g.edges) == 6

    def test_invalid_edges_rejected(self):
        with pytest.raises(ConfigError):
            CommGraph(3, ((0, 0),))
        with pytest.raises(ConfigError):
            CommGraph(3, ((0, 5),))
        with pytest.raises(ConfigError):
            CommGraph(3, ((1, 0),))
        with pytest.raises(ConfigError):
            CommGraph(3, ((0, 1), (0, 1)))

    def test_graph_from_edges_normalizes(self):
        g = graph_from_edges(2, [(0, 1), (1, 0)])
        assert g.edges == ((0, 1),)
        with pytest.raises(ConfigError):
            graph_from_edges(4, [(0, 1), (2, 3)])

    def test_disconnected_graph_flagged(self):
        g = CommGraph(4, ((0, 1), (2, 3)))
        assert not g.is_connected()


class TestMetropolisWeights:
    def test_ring_three_all_thirds(self):
        A = metropolis_weights(ring_graph(3))
        assert np.allclose(A, np.full((3, 3), 1.0 / 3.0), atol=1e-15)

    def test_star_four_frozen_values(self):
        A = metropolis_weights(star_graph(4))
        # hub row: 1/4 to each leaf, 1/4 kept; leaves keep 3/4
        assert A[0, 1] == A[0, 2] == A[0, 3] == pytest.approx(0.25, abs=1e-15)
        assert A[0, 0] == pytest.approx(0.25, abs=1e-15)
        for i in (1, 2, 3):
            assert A[i, i] == pytest.approx(0.75, abs=1e-15)
            assert A[i, 0] == pytest.approx(0.25, abs=1e-15)

    def test_complete_graph_uniform(self):
        A = metropolis_weights(complete_graph(4))
        assert np.allclose(A, np.full((4, 4), 0.25), atol=1e-15)

    def test_validate_returns_entry_floor(self):
        g = ring_graph(3)
        eta = validate_mixing(metropolis_weights(g), g)
        assert eta == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_validate_rejects_nonstochastic(self):
        g = ring_graph(3)
        A = metropolis_weights(g).copy()
        A[0, 0] += 1e-6
        with pytest.raises(ConfigError):
            validate_mixing(A, g)

    def test_validate_rejects_offgraph_weight(self):
        g = graph_from_edges(3, [(0, 1), (1, 2)])
        A = np.array([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]])
        with pytest.raises(ConfigError):
            validate_mixing(A, g)

    def test_validate_rejects_wrong_shape(self):
        with pytest.raises(DimensionError):
            validate_mixing(np.eye(2), ring_graph(3))

    def test_doubly_stochastic_powers(self):
        for g in (ring_graph(5), star_graph(4)):
            A = metropolis_weights(g)
            P = np.eye(g.n_agents)
            for _ in range(100):
                P = P @ A
                assert np.abs(P.sum(axis=0) - 1.0).max() < 1e-10
                assert np.abs(P.sum(axis=1) - 1.0).max() < 1e-10


class TestGossip:
    def test_two_agent_average_frozen(self):
        A = np.array([[0.5, 0.5], [0.5, 0.5]])
        out = gossip(A, np.array([[1.0], [3.0]]), 1)
        assert np.array_equal(out, np.array([[2.0], [2.0]]))

    def test_zero_rounds_is_copy(self):
        A = metropolis_weights(ring_graph(3))
        vals = np.arange(6.0).reshape(3, 2)
        out = gossip(A, vals, 0)
        assert np.array_equal(out, vals)
        assert out is not vals

    def test_preserves_column_means(self):
        A = metropolis_weights(ring_graph(5))
        vals = np.random.default_rng(3).normal(size=(5, 4))
        out = gossip(A, vals, 7)
        assert np.allclose(out.mean(axis=0), vals.mean(axis=0), atol=1e-12)

    def test_disagreement_frozen_example(self):
        assert disagreement(np.array([[1.0], [3.0]])) == pytest.approx(1.0, abs=1e-15)

    def test_disagreement_zero_at_consensus(self):
        assert disagreement(np.full((4, 3), 2.5)) == 0.0

    def test_long_gossip_reaches_column_means(self):
        A = metropolis_weights(ring_graph(4))
        vals = np.random.default_rng(8).normal(size=(4, 6))
        out = gossip(A, vals, 50)
        gap = np.abs(out - vals.mean(axis=0)).max()
        assert gap < 1e-8


class TestDecayRate:
    def test_rate_bound_formula(self):
        assert consensus_rate_bound(1.0 / 3.0, 3) == pytest.approx(1.0 - (1.0 / 3.0) ** 2)

    def test_measured_decay_within_bound(self):
        for make, n in ((ring_graph, 8), (star_graph, 8), (complete_graph, 8)):
            g = make(n)
            A = metropolis_weights(g)
            eta = validate_mixing(A, g)
            measured = measure_decay_ratio(A, np.random.default_rng(5))
            assert measured <= consensus_rate_bound(eta, n) + 0.05

    def test_complete_graph_mixes_in_one_round(self):
        A = metropolis_weights(complete_graph(6))
        vals = np.random.default_rng(1).normal(size=(6, 2))
        out = gossip(A, vals, 1)
        assert disagreement(out) < 1e-14


class TestCsvLoading:
    def test_round_trip(self, tmp_path):
        g = ring_graph(3)
        A = metropolis_weights(g)
        path = tmp_path / "mix.csv"
        np.savetxt(path, A, delimiter=",")
        B = load_mixing_csv(path, g)
        assert np.allclose(A, B, atol=1e-12)

    def test_rejects_wrong_shape(self, tmp_path):
        path = tmp_path / "mix.csv"
        np.savetxt(path, np.eye(2), delimiter=",")
        with pytest.raises(DimensionError):
            load_mixing_csv(path, ring_graph(3))
