import numpy as np
import pytest

from conftest import random_tensor
from constrec.models import NCMF, EmbeddingModel, SideInfo, TowerModel, score_constrained
from constrec.nn import (
    ConfigurationError,
    ConstraintFeatureMapG,
    FeedForwardNet,
    Layer,
    NetStateError,
    nc_transform,
    tower_embed,
)
from constrec.training import TrainConfig, init_neural
from oracles import central_difference, directional_probes, manual_forward


def identity_net(p):
    return FeedForwardNet([Layer(np.eye(p), np.zeros(p), "identity")])


class TestForward:
    def test_identity_layer(self):
        x = np.array([0.3, -2.0, 5.0])
        np.testing.assert_array_equal(identity_net(3).forward(x), x)

    def test_relu_on_negative_inputs(self):
        net = FeedForwardNet([Layer(np.eye(2), np.zeros(2), "relu"),
                              Layer(np.eye(2), np.zeros(2), "identity")])
        np.testing.assert_array_equal(net.forward(np.array([-1.0, -3.0])), [0.0, 0.0])

    def test_two_layer_manual_oracle(self):
        W1, b1 = np.array([[1.0, -2.0], [0.5, 0.25], [-1.0, 1.0]]), np.array([0.1, -0.2, 0.0])
        W2, b2 = np.array([[2.0, -1.0, 0.5]]), np.array([0.3])
        net = FeedForwardNet([Layer(W1, b1, "relu"), Layer(W2, b2, "identity")])
        x = [0.7, -0.4]
        expected = manual_forward([(W1, b1, "relu"), (W2, b2, "identity")], x)
        np.testing.assert_allclose(net.forward(np.array(x)), expected, rtol=1e-14)

    def test_dimension_error(self):
        with pytest.raises(ValueError):
            identity_net(3).forward(np.ones(2))

    def test_layers_must_chain_and_end_linear(self):
        with pytest.raises(ConfigurationError):
            FeedForwardNet([Layer(np.eye(2), np.zeros(2), "relu"),
                            Layer(np.ones((1, 3)), np.zeros(1), "identity")])
        with pytest.raises(ConfigurationError):
            FeedForwardNet([Layer(np.eye(2), np.zeros(2), "relu")])


class TestBackward:
    def test_linear_map_gradient(self):
        x = np.array([1.0, -2.0, 3.0])
        net = identity_net(3)
        net.forward(x)
        grads, dx = net.backward(np.ones(3))
        np.testing.assert_array_equal(grads[0][0], np.outer(np.ones(3), x))
        np.testing.assert_array_equal(dx, np.ones(3))

    def test_inactive_relu_has_zero_incoming_gradient(self):
        W1 = np.array([[1.0, 1.0], [-1.0, -1.0]])
        net = FeedForwardNet([Layer(W1, np.zeros(2), "relu"),
                              Layer(np.ones((1, 2)), np.zeros(1), "identity")])
        net.forward(np.array([1.0, 2.0]))
        grads, _ = net.backward(np.ones(1))
        np.testing.assert_array_equal(grads[0][0][1], [0.0, 0.0])
        assert grads[0][1][1] == 0.0

    def test_backward_without_forward(self):
        with pytest.raises(NetStateError):
            identity_net(2).backward(np.ones(2))

    def test_random_net_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        net = FeedForwardNet.build([4, 6, 3], rng)
        x = rng.normal(size=(5, 4))
        up = rng.normal(size=(5, 3))
        net.forward(x)
        grads, dx = net.backward(up)
        analytic = FeedForwardNet.flatten_grads(grads)
        theta = net.get_params()

        def f(p):
            net.set_params(p)
            return float(np.sum(up * net.forward(x)))

        numeric = central_difference(f, theta)
        net.set_params(theta)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)
        numeric_x = central_difference(lambda z: float(np.sum(up * net.forward(z))), x)
        np.testing.assert_allclose(dx, numeric_x, rtol=1e-5, atol=1e-8)


class TestTransforms:
    def test_diagonal_all_ones(self):
        net = FeedForwardNet([Layer(np.zeros((3, 2)), np.ones(3), "identity")])
        np.testing.assert_array_equal(nc_transform(net, np.ones(2), 3), np.ones(3))

    def test_full_identity(self):
        net = FeedForwardNet([Layer(np.zeros((9, 2)), np.eye(3).ravel(), "identity")])
        np.testing.assert_array_equal(nc_transform(net, np.ones(2), 3, "full"), np.eye(3))

    def test_output_mismatch(self):
        with pytest.raises(ConfigurationError):
            nc_transform(identity_net(3), np.ones(3), 2)
        with pytest.raises(ConfigurationError):
            nc_transform(identity_net(3), np.ones(3), 3, "full")

    def test_ncmf_pipeline_equals_score_constrained(self):
        rng = np.random.default_rng(5)
        k, d = 3, 4
        emb = EmbeddingModel.random(2, 3, k, rng, 1.0)
        net = FeedForwardNet.build([d, 5, k], rng, output_bias=1.0)
        gmap = ConstraintFeatureMapG(d)
        model = NCMF(emb, net, gmap)
        catalog = np.array([[1, 0, 1, 0], [0, 1, 0, 0]], dtype=np.uint8)
        s = model.predict([0, 1], [2, 0], catalog, [0, 1])
        for t, (u, i, q) in enumerate([(0, 2, 0), (1, 0, 1)]):
            diag = nc_transform(net, gmap(catalog[q]), k)
            assert s[t] == pytest.approx(score_constrained(emb, diag, u, i), rel=1e-13)

    def test_full_mode_with_diagonal_output_matches_diagonal_mode(self):
        rng = np.random.default_rng(6)
        k, d = 2, 3
        emb = EmbeddingModel.random(2, 2, k, rng, 1.0)
        W = rng.normal(size=(k, d))
        full_W = np.zeros((k * k, d))
        full_W[[0, 3]] = W
        diag = NCMF(emb, FeedForwardNet([Layer(W, np.ones(k), "identity")]), ConstraintFeatureMapG(d))
        full = NCMF(emb, FeedForwardNet([Layer(full_W, np.eye(k).ravel(), "identity")]),
                    ConstraintFeatureMapG(d), "full")
        catalog = np.array([[1, 1, 0]], dtype=np.uint8)
        np.testing.assert_allclose(full.predict([0, 1], [1, 0], catalog, [0, 0]),
                                   diag.predict([0, 1], [1, 0], catalog, [0, 0]), rtol=1e-13)


class TestTowers:
    def test_identity_on_id_block(self):
        k, a = 3, 2
        W = np.hstack([np.eye(k), np.zeros((k, a))])
        net = FeedForwardNet([Layer(W, np.zeros(k), "identity")])
        e = np.array([0.4, -1.0, 2.0])
        np.testing.assert_array_equal(tower_embed(net, e, np.array([5.0, 6.0])), e)

    def test_zero_net(self):
        net = FeedForwardNet([Layer(np.zeros((3, 5)), np.zeros(3), "identity")])
        out = tower_embed(net, np.ones(3), np.ones(2))
        np.testing.assert_array_equal(out, np.zeros(3))
        assert float(out @ out) == 0.0

    def test_dimension_error(self):
        with pytest.raises(ValueError):
            tower_embed(identity_net(3), np.ones(3), np.ones(1))

    def test_nnmf_score_by_hand(self):
        rng = np.random.default_rng(8)
        k_id, k, d = 2, 2, 2
        side = SideInfo(np.array([[0.5]]), np.array([[1.0, 0.0]]))
        gmap = ConstraintFeatureMapG(d)
        ut = FeedForwardNet.build([k_id + 1 + d, 3, k], rng)
        it = FeedForwardNet.build([k_id + 2 + d, 3, k], rng)
        Eu, Ei = rng.normal(size=(1, k_id)), rng.normal(size=(1, k_id))
        model = TowerModel("NN-MF", Eu, Ei, ut, it, side, gmap)
        catalog = np.array([[0, 1]], dtype=np.uint8)
        g = gmap(catalog[0])
        layers_u = [(l.W, l.b, l.activation) for l in ut.layers]
        layers_i = [(l.W, l.b, l.activation) for l in it.layers]
        zu = manual_forward(layers_u, list(Eu[0]) + [0.5] + list(g))
        zi = manual_forward(layers_i, list(Ei[0]) + [1.0, 0.0] + list(g))
        expected = sum(a * b for a, b in zip(zu, zi))
        assert model.predict([0], [0], catalog, [0])[0] == pytest.approx(expected, rel=1e-13)

    def test_ncnnmf_reduces_to_ncmf(self):
        rng = np.random.default_rng(9)
        k, d = 3, 4
        emb = EmbeddingModel.random(3, 4, k, rng, 1.0)
        emb.B[:] = rng.normal(size=3)
        head = FeedForwardNet.build([d, 5, k], rng, output_bias=1.0)
        gmap = ConstraintFeatureMapG(d)
        side = SideInfo(np.zeros((3, 0)), np.zeros((4, 0)))
        tower = TowerModel("NC-NN-MF", emb.U.copy(), emb.P.copy(), identity_net(k), identity_net(k),
                           side, gmap, head=head.copy(), B=emb.B.copy())
        ncmf = NCMF(emb, head, gmap)
        catalog = np.array([[1, 0, 0, 1], [0, 1, 1, 0]], dtype=np.uint8)
        u, i, q = [0, 1, 2, 0], [3, 2, 1, 0], [0, 1, 1, 0]
        np.testing.assert_allclose(tower.predict(u, i, catalog, q),
                                   ncmf.predict(u, i, catalog, q), rtol=1e-13)


class TestModelGradients:
    @pytest.mark.parametrize("variant", ["NC-MF", "NN-MF", "NC-NN-MF"])
    def test_directional_probes(self, variant):
        rng = np.random.default_rng(11)
        data = random_tensor(rng, 6, 7, 4, 40, max_active=2)
        side = SideInfo(rng.random((6, 2)), rng.random((7, 3)))
        gmap = ConstraintFeatureMapG(4, copy_bits=[0, 1], continuous=[([2, 3], [0.2, 0.7])])
        cfg = TrainConfig(k=3, hidden=(5,), seed=1, init_scale=0.5)
        model = init_neural(variant, data, cfg, gmap, side, (0,))
        errors = directional_probes(model, data, np.arange(25), 0.3, 20, rng)
        assert errors.max() < 1e-5

    def test_full_mode_directional_probes(self):
        rng = np.random.default_rng(12)
        data = random_tensor(rng, 5, 5, 3, 30)
        model = init_neural("NC-MF", data, TrainConfig(k=2, hidden=(4,), transform_mode="full",
                                                       init_scale=0.5), ConstraintFeatureMapG(3))
        assert directional_probes(model, data, np.arange(30), 0.1, 20, rng).max() < 1e-5

    def test_seed_determinism(self):
        data = random_tensor(np.random.default_rng(0), 4, 4, 3, 10)
        cfg = TrainConfig(k=2, hidden=(3,), seed=7)
        a = init_neural("NC-MF", data, cfg, ConstraintFeatureMapG(3))
        b = init_neural("NC-MF", data, cfg, ConstraintFeatureMapG(3))
        np.testing.assert_array_equal(a.net.get_params(), b.net.get_params())
        np.testing.assert_array_equal(a.predict_data(data), b.predict_data(data))
