"""Adjacency normalization and the GCN/GIN forward pass."""
import numpy as np
import pytest

import gki.autodiff as ad
from gki.autodiff import Tensor
from gki.encoder import (aggregation_matrix, encoder_forward,
                         init_encoder_params, normalize_adjacency)
from gki.errors import DataError, ShapeError
from gki.gradcheck import grad_check
from gki.graphs import PatientGraph, Vocabulary, _one_hot
from gki.rng import substream


def graph_of(tokens, edges):
    vocab = Vocabulary(tokens=sorted(set(tokens)))
    return PatientGraph("g", list(tokens), _one_hot(list(tokens), vocab), edges)


class TestNormalizeAdjacency:
    def test_single_node_no_edges(self):
        a = normalize_adjacency(graph_of(["x"], []))
        np.testing.assert_array_equal(a, [[1.0]])

    def test_two_nodes_unit_edge_symmetric(self):
        a = normalize_adjacency(graph_of(["x", "y"], [(0, 1, 1.0)]))
        np.testing.assert_allclose(a, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_entries_bounded_and_finite(self):
        rng = substream(1, "adj")
        tokens = [f"t{i}" for i in range(8)]
        edges = [(int(rng.integers(0, 8)), int(rng.integers(0, 8)), float(rng.uniform(0, 50)))
                 for _ in range(20)]
        edges = [(s, d, w) for s, d, w in edges if s != d]
        a = normalize_adjacency(graph_of(tokens, edges))
        assert np.isfinite(a).all()
        assert (a >= 0).all() and (a <= 1).all()
        np.testing.assert_allclose(a, a.T, atol=1e-15)

    def test_log1p_transform(self):
        g = graph_of(["x", "y"], [(0, 1, np.e - 1)])
        a_raw = normalize_adjacency(g, transform="raw")
        a_log = normalize_adjacency(g, transform="log1p")
        # log1p(e-1) = 1, so the transformed graph matches a unit edge
        np.testing.assert_allclose(a_log, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
        assert not np.allclose(a_raw, a_log)

    def test_directed_mode_row_stochastic(self):
        a = normalize_adjacency(graph_of(["x", "y", "z"],
                                         [(0, 1, 2.0), (1, 2, 3.0)]), mode="directed")
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-15)
        # propagation follows stored direction: dst row sees src column
        assert a[1, 0] > 0 and a[0, 1] == 0

    def test_isolated_node_keeps_self_loop(self):
        a = normalize_adjacency(graph_of(["x", "y", "z"], [(0, 1, 1.0)]))
        assert a[2, 2] == 1.0

    def test_negative_weight_rejected(self):
        with pytest.raises(DataError):
            normalize_adjacency(graph_of(["x", "y"], [(0, 1, -3.0)]))

    def test_unknown_mode_or_transform(self):
        g = graph_of(["x"], [])
        with pytest.raises(DataError):
            normalize_adjacency(g, mode="banana")
        with pytest.raises(DataError):
            normalize_adjacency(g, transform="banana")

    def test_gin_aggregation_is_unnormalized(self):
        a = aggregation_matrix(graph_of(["x", "y"], [(0, 1, 3.0)]), backbone="gin")
        np.testing.assert_allclose(a, [[1.0, 3.0], [3.0, 1.0]], atol=1e-15)


class TestEncoderForward:
    def test_identity_propagation(self):
        x = np.array([[1.0, 0.0], [0.5, 2.0]])
        params = {"enc.0.W": Tensor(np.eye(2), requires_grad=True),
                  "enc.0.a": Tensor(np.asarray(0.25), requires_grad=True)}
        outs = encoder_forward(x, np.eye(2), params, n_layers=1)
        np.testing.assert_allclose(outs[0].data, x, atol=1e-15)

    def test_two_layer_shapes(self):
        rng = substream(2, "enc")
        params = init_encoder_params(seed=0, in_dim=12, hidden=8, n_layers=2)
        x = rng.normal(size=(5, 12))
        outs = encoder_forward(x, np.eye(5), params, n_layers=2)
        assert [o.data.shape for o in outs] == [(5, 8), (5, 8)]

    def test_dimension_mismatch(self):
        params = init_encoder_params(seed=0, in_dim=4, hidden=8, n_layers=1)
        with pytest.raises(ShapeError):
            encoder_forward(np.zeros((3, 5)), np.eye(3), params, n_layers=1)

    def test_gradients_pass_grad_check(self):
        rng = substream(3, "enc")
        a_hat = normalize_adjacency(graph_of(["a", "b", "c"],
                                             [(0, 1, 2.0), (1, 2, 5.0)]))
        w = rng.normal(size=(3, 4))
        readout = rng.normal(size=(3, 4))

        def f(p):
            params = {"enc.0.W": p["W"], "enc.0.a": p["a"]}
            outs = encoder_forward(p["X"], a_hat, params, n_layers=1)
            return ad.sum_all(outs[0] * readout)

        res = grad_check(f, {"W": w, "a": np.asarray(0.25),
                             "X": rng.normal(size=(3, 3))}, rtol=1e-4, h=1e-5)
        assert res.passed, str(res)

    def test_permutation_equivariance(self):
        rng = substream(4, "enc")
        n, d_in = 6, 5
        a_hat = normalize_adjacency(graph_of(
            [f"t{i}" for i in range(n)],
            [(i, (i + 2) % n, float(i + 1)) for i in range(n)]))
        x = rng.normal(size=(n, d_in))
        params = init_encoder_params(seed=1, in_dim=d_in, hidden=4, n_layers=2)
        perm = rng.permutation(n)
        p_mat = np.eye(n)[perm]
        outs = encoder_forward(x, a_hat, params, n_layers=2)
        outs_p = encoder_forward(p_mat @ x, p_mat @ a_hat @ p_mat.T, params, n_layers=2)
        for o, op in zip(outs, outs_p):
            np.testing.assert_allclose(op.data, p_mat @ o.data, atol=1e-10)

    def test_outputs_finite_on_synthetic_graphs(self):
        from gki.records import synthesize_cohort
        from gki.graphs import build_graph
        records = synthesize_cohort(11, 20)
        vocab = Vocabulary.from_records(records)
        params = init_encoder_params(seed=2, in_dim=vocab.size, hidden=16, n_layers=2)
        for r in records:
            g = build_graph(r, vocab)
            a_hat = normalize_adjacency(g)
            for o in encoder_forward(g.node_features, a_hat, params, n_layers=2):
                assert np.isfinite(o.data).all()

    def test_gin_backbone_shapes_and_grad(self):
        rng = substream(5, "enc")
        params = init_encoder_params(seed=3, in_dim=4, hidden=3, n_layers=2, backbone="gin")
        a = aggregation_matrix(graph_of(["a", "b"], [(0, 1, 2.0)]), backbone="gin")
        outs = encoder_forward(rng.normal(size=(2, 4)), a, params, n_layers=2, backbone="gin")
        assert [o.data.shape for o in outs] == [(2, 3), (2, 3)]
        readout = rng.normal(size=(2, 3))

        def f(p):
            prm = {"enc.0.W1": p["W1"], "enc.0.a1": p["a1"],
                   "enc.0.W2": p["W2"], "enc.0.a2": p["a2"]}
            outs = encoder_forward(p["X"], a, prm, n_layers=1, backbone="gin")
            return ad.sum_all(outs[0] * readout)

        res = grad_check(f, {"W1": rng.normal(size=(4, 3)), "a1": np.asarray(0.25),
                             "W2": rng.normal(size=(3, 3)), "a2": np.asarray(0.25),
                             "X": rng.normal(size=(2, 4))})
        assert res.passed, str(res)

    def test_prelu_slopes_initialized_quarter(self):
        params = init_encoder_params(seed=4, in_dim=3, hidden=2, n_layers=2)
        assert params["enc.0.a"].data == pytest.approx(0.25)
        assert params["enc.1.a"].data == pytest.approx(0.25)

    def test_xavier_bounds(self):
        params = init_encoder_params(seed=5, in_dim=100, hidden=50, n_layers=1)
        w = params["enc.0.W"].data
        bound = np.sqrt(6.0 / 150)
        assert (np.abs(w) <= bound).all()
        assert np.abs(w).max() > 0.8 * bound  # actually fills the range
