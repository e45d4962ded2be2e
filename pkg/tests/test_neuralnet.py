"""
Tests for the feed-forward network machinery.
"""

import math

import numpy as np
import pytest

from app.exceptions import DimensionError, DomainError, NumericError, StateError
from app.neuralnet import (
    AdamState,
    HiddenActivation,
    Mlp,
    OutputActivation,
    TimeEmbedding,
    adam_step,
    backward,
    forward,
    init_weights,
    sinusoidal_embed,
    softmax_cross_entropy,
    softplus,
)


def _numeric_gradients(net, x, t_embed, weights, h=1e-5):
    """Central finite differences of sum(out * weights) for every parameter."""
    params = net.parameters()
    grads = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            values = []
            for sign in (1.0, -1.0):
                shifted = [q.copy() for q in params]
                shifted[i][idx] += sign * h
                out, _ = forward(net.with_parameters(shifted), x, t_embed)
                values.append(float(np.sum(out * weights)))
            g[idx] = (values[0] - values[1]) / (2.0 * h)
        grads.append(g)
    return grads


def _relative_error(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


@pytest.mark.unit
class TestForward:

    def test_zero_parameters_give_zero_output(self):
        dims = [2, 5, 3]
        net = Mlp(
            layer_dims=dims,
            weights=[np.zeros((2, 5)), np.zeros((5, 3))],
            biases=[np.zeros(5), np.zeros(3)],
        )
        out, _ = forward(net, np.random.default_rng(0).normal(size=(4, 2)))
        assert np.array_equal(out, np.zeros((4, 3)))

    def test_softplus_at_zero(self):
        assert softplus(np.array([0.0]))[0] == pytest.approx(math.log(2.0), abs=1e-12)
        assert softplus(np.array([0.0]))[0] == pytest.approx(0.693147, abs=1e-6)

    def test_matches_per_layer_oracle(self):
        rng = np.random.default_rng(5)
        net = init_weights([2, 128, 128, 128, 2], seed=3, embed_dim=128)
        x = rng.normal(size=(16, 2))
        t_embed = rng.uniform(-1.0, 1.0, size=(16, 128))

        a = x
        for l in range(3):
            z = np.dot(a, net.weights[l]) + net.biases[l] + np.dot(t_embed, net.projections[l])
            a = np.log1p(np.exp(z))
        expected = np.dot(a, net.weights[3]) + net.biases[3]

        out, _ = forward(net, x, t_embed)
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    def test_deterministic(self, conditioned_net):
        x = np.random.default_rng(1).normal(size=(10, 2))
        t_embed = sinusoidal_embed(17, TimeEmbedding(dim=4, max_timestep=100))
        a, _ = forward(conditioned_net, x, t_embed)
        b, _ = forward(conditioned_net, x, t_embed)
        assert np.array_equal(a, b)

    def test_output_layer_superposition(self):
        rng = np.random.default_rng(2)
        layer = init_weights([8, 3], seed=4)
        layer = layer.with_parameters([layer.weights[0], rng.normal(size=3)])
        a1, a2 = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
        f = lambda a: forward(layer, a)[0]
        np.testing.assert_allclose(f(a1 + a2), f(a1) + f(a2) - f(np.zeros((5, 8))), atol=1e-12)

    def test_zero_projections_ignore_conditioning(self, conditioned_net):
        net = conditioned_net.with_parameters(
            [*conditioned_net.weights, *conditioned_net.biases,
             *[np.zeros_like(p) for p in conditioned_net.projections]]
        )
        x = np.random.default_rng(3).normal(size=(6, 2))
        emb = TimeEmbedding(dim=4, max_timestep=100)
        a, _ = forward(net, x, sinusoidal_embed(1, emb))
        b, _ = forward(net, x, sinusoidal_embed(90, emb))
        assert np.array_equal(a, b)

    def test_softmax_rows_sum_to_one(self):
        net = init_weights([3, 16, 16], seed=8, output_activation=OutputActivation.SOFTMAX)
        out, _ = forward(net, np.random.default_rng(4).normal(size=(20, 3)) * 10.0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out >= 0.0)

    def test_shape_mismatch_raises(self, conditioned_net):
        with pytest.raises(DimensionError):
            forward(conditioned_net, np.zeros((4, 3)), np.zeros((4, 4)))
        with pytest.raises(DimensionError):
            forward(conditioned_net, np.zeros((4, 2)))
        with pytest.raises(DimensionError):
            forward(conditioned_net, np.zeros((4, 2)), np.zeros((4, 6)))

    def test_non_finite_input_raises(self, conditioned_net):
        x = np.zeros((2, 2))
        x[1, 0] = np.nan
        with pytest.raises(NumericError):
            forward(conditioned_net, x, np.zeros(4))

    def test_inconsistent_shapes_rejected(self):
        with pytest.raises(DimensionError):
            Mlp(layer_dims=[2, 3], weights=[np.zeros((3, 2))], biases=[np.zeros(3)])


@pytest.mark.unit
class TestBackward:

    def test_zero_seed_gives_zero_gradients(self, conditioned_net):
        x = np.random.default_rng(0).normal(size=(5, 2))
        out, cache = forward(conditioned_net, x, np.ones(4))
        grads = backward(conditioned_net, cache, np.zeros_like(out))
        for g in grads.parameters():
            assert not np.any(g)
        assert not np.any(grads.input)

    def test_matches_finite_differences(self, conditioned_net):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(6, 2))
        t_embed = rng.uniform(-1.0, 1.0, size=(6, 4))
        out, cache = forward(conditioned_net, x, t_embed)
        weights = rng.normal(size=out.shape)

        analytic = backward(conditioned_net, cache, weights).parameters()
        numeric = _numeric_gradients(conditioned_net, x, t_embed, weights)
        for a, n in zip(analytic, numeric):
            assert _relative_error(a, n) < 1e-4

    def test_shared_embedding_row_matches_finite_differences(self, conditioned_net):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(6, 2))
        t_embed = sinusoidal_embed(40, TimeEmbedding(dim=4, max_timestep=100))
        out, cache = forward(conditioned_net, x, t_embed)
        weights = rng.normal(size=out.shape)

        analytic = backward(conditioned_net, cache, weights).parameters()
        numeric = _numeric_gradients(conditioned_net, x, t_embed, weights)
        for a, n in zip(analytic, numeric):
            assert _relative_error(a, n) < 1e-4

    def test_softmax_relu_matches_finite_differences(self):
        net = init_weights(
            [3, 8, 4],
            seed=12,
            hidden_activation=HiddenActivation.RELU,
            output_activation=OutputActivation.SOFTMAX,
        )
        rng = np.random.default_rng(11)
        x = rng.normal(size=(5, 3))
        out, cache = forward(net, x)
        weights = rng.normal(size=out.shape)

        analytic = backward(net, cache, weights).parameters()
        numeric = _numeric_gradients(net, x, None, weights)
        for a, n in zip(analytic, numeric):
            assert _relative_error(a, n) < 1e-4

    def test_input_gradient(self, conditioned_net):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(3, 2))
        t_embed = np.full(4, 0.3)
        out, cache = forward(conditioned_net, x, t_embed)
        weights = rng.normal(size=out.shape)
        analytic = backward(conditioned_net, cache, weights).input

        h = 1e-5
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            up, down = x.copy(), x.copy()
            up[idx] += h
            down[idx] -= h
            numeric[idx] = (
                np.sum(forward(conditioned_net, up, t_embed)[0] * weights)
                - np.sum(forward(conditioned_net, down, t_embed)[0] * weights)
            ) / (2.0 * h)
        assert _relative_error(analytic, numeric) < 1e-4

    def test_zero_embedding_gives_zero_projection_gradient(self, conditioned_net):
        x = np.random.default_rng(14).normal(size=(5, 2))
        out, cache = forward(conditioned_net, x, np.zeros(4))
        grads = backward(conditioned_net, cache, np.ones_like(out))
        for g in grads.projections:
            assert not np.any(g)

    def test_logit_gradient_of_cross_entropy(self):
        net = init_weights([3, 6, 4], seed=15, output_activation=OutputActivation.SOFTMAX)
        rng = np.random.default_rng(16)
        x = rng.normal(size=(7, 3))
        labels = rng.integers(0, 4, size=7)

        _, cache = forward(net, x)
        _, logit_grad = softmax_cross_entropy(cache.pre_activations[-1], labels)
        analytic = backward(net, cache, logit_grad, through_output_activation=False).parameters()

        def loss_of(candidate):
            _, c = forward(candidate, x)
            return softmax_cross_entropy(c.pre_activations[-1], labels)[0]

        params = net.parameters()
        h = 1e-5
        for i, p in enumerate(params):
            numeric = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                up = [q.copy() for q in params]
                down = [q.copy() for q in params]
                up[i][idx] += h
                down[i][idx] -= h
                numeric[idx] = (loss_of(net.with_parameters(up)) - loss_of(net.with_parameters(down))) / (2 * h)
            assert _relative_error(analytic[i], numeric) < 1e-4

    def test_cache_from_other_network_raises(self, conditioned_net):
        other = init_weights([2, 4, 2], seed=1, embed_dim=4)
        out, cache = forward(other, np.zeros((1, 2)), np.zeros(4))
        with pytest.raises(StateError):
            backward(conditioned_net, cache, np.zeros_like(out))


@pytest.mark.unit
class TestAdam:

    def test_zero_gradient_leaves_parameters(self):
        params = [np.array([1.5, -2.0]), np.array([[0.25]])]
        new, state = adam_step(params, [np.zeros(2), np.zeros((1, 1))], AdamState.fresh(params))
        for p, q in zip(params, new):
            assert np.array_equal(p, q)
        assert state.step_count == 1

    def test_first_step_moves_by_learning_rate(self):
        params = [np.array([0.0])]
        new, _ = adam_step(params, [np.array([1.0])], AdamState.fresh(params, learning_rate=0.1))
        assert new[0][0] == pytest.approx(-0.1, rel=1e-6)

    def test_two_step_moments(self):
        params = [np.array([0.0])]
        state = AdamState.fresh(params, learning_rate=0.1)
        params, state = adam_step(params, [np.array([1.0])], state)
        params, state = adam_step(params, [np.array([1.0])], state)

        assert state.step_count == 2
        assert state.first_moment[0][0] == pytest.approx(0.19, abs=1e-12)
        assert state.second_moment[0][0] == pytest.approx(0.999 * 0.001 + 0.001, abs=1e-15)
        # Constant gradient: each bias-corrected step is -lr
        assert params[0][0] == pytest.approx(-0.2, rel=1e-6)

    def test_shape_mismatch_raises(self):
        params = [np.zeros(3)]
        with pytest.raises(DimensionError):
            adam_step(params, [np.zeros(2)], AdamState.fresh(params))


@pytest.mark.unit
class TestEmbedding:

    def test_step_zero(self):
        emb = TimeEmbedding(dim=8, max_timestep=100)
        vec = sinusoidal_embed(0, emb)
        assert np.array_equal(vec[0::2], np.zeros(4))
        assert np.array_equal(vec[1::2], np.ones(4))

    def test_entries_bounded(self):
        emb = TimeEmbedding(dim=16, max_timestep=100)
        table = emb.table()
        assert table.shape == (101, 16)
        assert np.all(np.abs(table) <= 1.0)

    def test_neighbouring_steps_differ(self):
        emb = TimeEmbedding(dim=16, max_timestep=100)
        assert not np.allclose(sinusoidal_embed(1, emb), sinusoidal_embed(2, emb))

    def test_out_of_range_raises(self):
        emb = TimeEmbedding(dim=16, max_timestep=100)
        with pytest.raises(DomainError):
            sinusoidal_embed(101, emb)
        with pytest.raises(DomainError):
            sinusoidal_embed(-1, emb)

    def test_odd_dim_rejected(self):
        with pytest.raises(DomainError):
            TimeEmbedding(dim=7, max_timestep=10)


@pytest.mark.unit
class TestInitWeights:

    def test_same_seed_is_bit_identical(self):
        a = init_weights([2, 16, 16, 2], seed=42, embed_dim=8)
        b = init_weights([2, 16, 16, 2], seed=42, embed_dim=8)
        assert a.checksum() == b.checksum()

    def test_biases_zero(self):
        net = init_weights([2, 16, 16, 2], seed=1, embed_dim=8)
        for b in net.biases:
            assert not np.any(b)

    def test_fan_in_scaling(self):
        net = init_weights([128, 128], seed=0)
        expected = math.sqrt(2.0 / 128)
        assert abs(net.weights[0].std() - expected) < 0.2 * expected

    def test_invalid_dims_raise(self):
        with pytest.raises(DomainError):
            init_weights([], seed=0)
        with pytest.raises(DomainError):
            init_weights([2, 0, 2], seed=0)
