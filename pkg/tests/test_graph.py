"""Graph normalization, graph convolution, and adjacency construction."""
import numpy as np
import pytest

from cofill.errors import ContractError, ParseError, ShapeError
from cofill.graph import (Graph, build_adjacency_from_coords, graph_conv,
                          load_edge_list, node_mix, normalize_adjacency,
                          save_edge_list)
from cofill.layers import channel_mix
from cofill.tensor import Tensor


class TestNormalizeAdjacency:
    def test_isolated_nodes_give_identity(self):
        out = normalize_adjacency(Graph(adjacency=np.zeros((2, 2))))
        assert np.array_equal(out.a_gcn, np.eye(2))

    def test_two_node_hand_case(self):
        out = normalize_adjacency(Graph(adjacency=np.array([[0.0, 1.0],
                                                            [1.0, 0.0]])))
        assert np.abs(out.a_gcn - 0.5).max() < 1e-15

    def test_symmetry_and_spectral_radius(self):
        # dense eigenvalue oracle over 50 random graphs
        for seed in range(50):
            r = np.random.default_rng(seed)
            n = int(r.integers(2, 9))
            a = (r.random((n, n)) < 0.4).astype(float)
            a = np.triu(a, 1)
            a = a + a.T
            out = normalize_adjacency(Graph(adjacency=a)).a_gcn
            assert np.abs(out - out.T).max() < 1e-12
            eig = np.linalg.eigvalsh(out)
            assert np.abs(eig).max() <= 1.0 + 1e-10

    def test_regular_graph_rows_sum_to_one(self):
        # ring of degree 2: every entry of D^-1/2 (A+I) D^-1/2 row sums to 1
        n = 6
        a = np.zeros((n, n))
        for i in range(n):
            a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1.0
        out = normalize_adjacency(Graph(adjacency=a)).a_gcn
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12
        assert np.abs(out.sum(axis=0) - 1.0).max() < 1e-12

    def test_definition_matches_formula(self):
        r = np.random.default_rng(3)
        a = r.random((5, 5))
        a = (a + a.T) / 2
        np.fill_diagonal(a, 0.0)
        out = normalize_adjacency(Graph(adjacency=a)).a_gcn
        a_hat = a + np.eye(5)
        d = np.diag(1.0 / np.sqrt(a_hat.sum(axis=1)))
        assert np.abs(out - d @ a_hat @ d).max() < 1e-12


class TestGraphConv:
    def _random_setup(self, rng, n=3, c=2, order=2):
        h = rng.standard_normal((1, c, n, 4))
        w = Tensor(rng.standard_normal((c, (order + 1) * c)))
        b = Tensor(rng.standard_normal(c))
        return h, w, b

    def test_identity_graph_duplicates_channels(self, rng):
        h, w, b = self._random_setup(rng, order=1)
        a = np.eye(3)
        out = graph_conv(Tensor(h), a, 1, w, b).data
        stacked = Tensor(np.concatenate([h, h], axis=1))
        expected = np.maximum(channel_mix(stacked, w, b).data, 0.0)
        assert np.abs(out - expected).max() < 1e-12

    def test_single_node_reduces_to_channel_mixing(self, rng):
        h = rng.standard_normal((1, 2, 1, 5))
        w = Tensor(rng.standard_normal((2, 6)))
        a = normalize_adjacency(Graph(adjacency=np.zeros((1, 1)))).a_gcn
        assert np.array_equal(a, [[1.0]])
        out = graph_conv(Tensor(h), a, 2, w).data
        stacked = Tensor(np.concatenate([h, h, h], axis=1))
        expected = np.maximum(channel_mix(stacked, w).data, 0.0)
        assert np.abs(out - expected).max() < 1e-12

    def test_order_two_matches_loop_oracle(self, rng):
        h, w, b = self._random_setup(rng)
        a = normalize_adjacency(
            Graph(adjacency=(rng.random((3, 3)) < 0.5).astype(float))).a_gcn
        out = graph_conv(Tensor(h), a, 2, w, b).data
        hop1 = np.zeros_like(h)
        hop2 = np.zeros_like(h)
        for n_out in range(3):
            for m in range(3):
                hop1[:, :, n_out, :] += h[:, :, m, :] * a[m, n_out]
        for n_out in range(3):
            for m in range(3):
                hop2[:, :, n_out, :] += hop1[:, :, m, :] * a[m, n_out]
        stacked = np.concatenate([h, hop1, hop2], axis=1)
        pre = np.einsum("oc,bcnl->bonl", w.data, stacked) + b.data[None, :, None, None]
        assert np.abs(out - np.maximum(pre, 0.0)).max() < 1e-10

    def test_identity_graph_no_cross_node_leakage(self, rng):
        h, w, b = self._random_setup(rng)
        a = np.eye(3)
        base = graph_conv(Tensor(h), a, 2, w, b).data
        h2 = h.copy()
        h2[0, :, 1, :] += 1.0
        bumped = graph_conv(Tensor(h2), a, 2, w, b).data
        delta = np.abs(bumped - base).sum(axis=(0, 1, 3))
        assert delta[0] == 0.0 and delta[2] == 0.0 and delta[1] > 0.0

    def test_node_count_mismatch(self, rng):
        h, w, b = self._random_setup(rng)
        with pytest.raises(ShapeError):
            graph_conv(Tensor(h), np.eye(4), 2, w, b)

    def test_order_zero_rejected(self, rng):
        h, w, b = self._random_setup(rng)
        with pytest.raises(ContractError):
            graph_conv(Tensor(h), np.eye(3), 0, w, b)

    def test_node_mix_matches_right_multiplication(self, rng):
        h = rng.standard_normal((2, 3, 4, 5))
        a = rng.random((4, 4))
        out = node_mix(Tensor(h), a).data
        expected = np.einsum("bcml,mn->bcnl", h, a)
        assert np.abs(out - expected).max() < 1e-12


class TestCoordAdjacency:
    def test_coincident_nodes_fully_connected(self):
        g = build_adjacency_from_coords(np.array([[1.0, 1.0], [1.0, 1.0],
                                                  [0.0, 0.0]]))
        assert g.adjacency[0, 1] == 1.0

    def test_far_nodes_cut_off(self):
        coords = np.array([[0.0, 0.0], [0.1, 0.0], [100.0, 0.0]])
        g = build_adjacency_from_coords(coords, threshold=0.1)
        assert g.adjacency[0, 2] == 0.0
        assert g.adjacency[0, 1] > 0.0

    def test_line_matches_direct_formula(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        g = build_adjacency_from_coords(coords, threshold=0.0)
        dist = np.abs(coords[:, 0][:, None] - coords[:, 0][None, :])
        s = dist[~np.eye(4, dtype=bool)].std()
        expected = np.exp(-(dist ** 2) / s ** 2)
        np.fill_diagonal(expected, 0.0)
        assert np.abs(g.adjacency - expected).max() < 1e-12

    def test_zero_diagonal_and_symmetric(self, rng):
        g = build_adjacency_from_coords(rng.random((6, 2)), threshold=0.05)
        assert np.all(np.diag(g.adjacency) == 0.0)
        assert np.abs(g.adjacency - g.adjacency.T).max() == 0.0

    def test_empty_coords_rejected(self):
        with pytest.raises(ContractError):
            build_adjacency_from_coords(np.zeros((0, 2)))


class TestEdgeListIO:
    def test_round_trip(self, tmp_path, rng):
        a = (rng.random((5, 5)) < 0.4) * rng.random((5, 5))
        a = np.triu(a, 1)
        a = a + a.T
        path = tmp_path / "edges.csv"
        save_edge_list(Graph(adjacency=a), path)
        loaded = load_edge_list(path, 5)
        assert np.abs(loaded.adjacency - a).max() < 1e-15

    def test_unweighted_edges_are_binary(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("src,dst\n0,1\n1,2\n")
        g = load_edge_list(path, 3)
        assert g.adjacency[0, 1] == 1.0
        assert g.adjacency[1, 0] == 1.0  # symmetrized
        assert set(np.unique(g.adjacency)) == {0.0, 1.0}

    def test_out_of_range_index(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("src,dst\n0,9\n")
        with pytest.raises(ParseError, match="out of range"):
            load_edge_list(path, 3)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("from,to\n0,1\n")
        with pytest.raises(ParseError):
            load_edge_list(path, 3)
