import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierppo import nn_core
from hierppo.errors import ConfigurationError, InputError
from hierppo.nn_core import (
    AdamState,
    LayerSpec,
    NetworkParameters,
    adam_step,
    backward,
    forward,
    gaussian_entropy,
    gaussian_log_prob,
    gaussian_sample,
    init_network,
    mlp_specs,
)


def random_net(rng, widths, log_std=False):
    specs = [LayerSpec(a, b, nn_core.TANH) for a, b in zip(widths[:-2], widths[1:-1])]
    specs.append(LayerSpec(widths[-2], widths[-1], nn_core.IDENTITY))
    weights = [rng.normal(size=(s.input_width, s.output_width)) for s in specs]
    biases = [rng.normal(size=s.output_width) * 0.5 for s in specs]
    ls = rng.normal(size=widths[-1]) * 0.3 if log_std else None
    return NetworkParameters(specs, weights, biases, ls)


def loop_forward(params, x):
    """Scalar-loop forward pass, independent of the matrix code."""
    h = [float(v) for v in x]
    for spec, w, b in zip(params.specs, params.weights, params.biases):
        out = []
        for j in range(spec.output_width):
            s = float(b[j])
            for i in range(spec.input_width):
                s += h[i] * float(w[i, j])
            out.append(math.tanh(s) if spec.activation == nn_core.TANH else s)
        h = out
    return np.array(h)


def finite_difference(f, params, step=1e-5):
    grads = []
    arrays = params.arrays()
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][idx] += step
            minus[k][idx] -= step
            g[idx] = (f(params.with_arrays(plus)) - f(params.with_arrays(minus))) / (2 * step)
        grads.append(g)
    return grads


def assert_rel_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n)
        assert np.all(err <= rtol * np.maximum(np.abs(a), np.abs(n)) + atol), (a, n)


class TestLayerSpec:
    def test_rejects_zero_width(self):
        with pytest.raises(ConfigurationError):
            LayerSpec(0, 3)

    def test_output_layer_must_be_linear(self):
        with pytest.raises(ConfigurationError):
            NetworkParameters([LayerSpec(2, 1, nn_core.TANH)], [np.zeros((2, 1))], [np.zeros(1)])

    def test_widths_must_chain(self):
        specs = [LayerSpec(2, 3), LayerSpec(4, 1, nn_core.IDENTITY)]
        with pytest.raises(ConfigurationError):
            NetworkParameters(specs, [np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])

    def test_mlp_specs_shape(self):
        specs = mlp_specs(3, 64, 3, 1)
        assert [(s.input_width, s.output_width) for s in specs] == [(3, 64), (64, 64), (64, 64), (64, 1)]
        assert [s.activation for s in specs] == ["tanh"] * 3 + ["identity"]


class TestForward:
    def test_zero_weights_give_bias(self):
        specs = mlp_specs(3, 4, 2, 2)
        params = init_network(specs, np.random.default_rng(0)).zeros_like()
        params.biases[-1][:] = [0.3, -1.2]
        out, _ = forward(params, np.array([5.0, -2.0, 1.0]))
        np.testing.assert_array_equal(out, [0.3, -1.2])

    def test_tanh_of_zero(self):
        specs = [LayerSpec(1, 1, nn_core.TANH), LayerSpec(1, 1, nn_core.IDENTITY)]
        params = NetworkParameters(specs, [np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
        out, tape = forward(params, np.array([0.0]))
        assert tape.activations[1][0, 0] == 0.0
        assert out[0] == 0.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(7)
        params = init_network(mlp_specs(3, 64, 3, 1), rng)
        for _ in range(5):
            x = rng.normal(size=3)
            out, _ = forward(params, x)
            np.testing.assert_allclose(out, loop_forward(params, x), rtol=0, atol=1e-12)

    def test_batch_rows_match_single(self):
        rng = np.random.default_rng(1)
        params = random_net(rng, [3, 8, 8, 2])
        xs = rng.normal(size=(6, 3))
        batch, _ = forward(params, xs)
        for i in range(6):
            np.testing.assert_allclose(batch[i], forward(params, xs[i])[0], atol=1e-15)

    def test_dimension_mismatch(self):
        params = init_network(mlp_specs(3, 4, 1, 1), np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            forward(params, np.zeros(4))

    def test_non_finite_input(self):
        params = init_network(mlp_specs(3, 4, 1, 1), np.random.default_rng(0))
        with pytest.raises(InputError):
            forward(params, np.array([0.0, np.nan, 1.0]))

    def test_replay_is_bit_identical(self):
        rng = np.random.default_rng(3)
        params = random_net(rng, [3, 8, 8, 1])
        x = rng.normal(size=(4, 3))
        _, tape1 = forward(params, x)
        _, tape2 = forward(params, tape1.activations[0])
        for a, b in zip(tape1.activations, tape2.activations):
            np.testing.assert_array_equal(a, b)


class TestBackward:
    def test_zero_output_gradient(self):
        rng = np.random.default_rng(0)
        params = random_net(rng, [3, 5, 2])
        _, tape = forward(params, rng.normal(size=(4, 3)))
        grads = backward(tape, np.zeros((4, 2)))
        assert all(np.all(g == 0) for g in grads.arrays())

    def test_single_linear_neuron(self):
        params = NetworkParameters([LayerSpec(3, 1, nn_core.IDENTITY)],
                                   [np.array([[0.5], [-1.0], [2.0]])], [np.array([0.1])])
        x = np.array([1.5, -2.0, 0.25])
        _, tape = forward(params, x)
        grads = backward(tape, np.array([1.0]))
        np.testing.assert_array_equal(grads.weights[0][:, 0], x)
        np.testing.assert_array_equal(grads.biases[0], [1.0])

    def test_shapes_mirror_parameters(self):
        rng = np.random.default_rng(0)
        params = random_net(rng, [3, 8, 8, 2], log_std=True)
        _, tape = forward(params, rng.normal(size=(5, 3)))
        grads = backward(tape, rng.normal(size=(5, 2)))
        assert [g.shape for g in grads.arrays()] == [p.shape for p in params.arrays()]

    def test_output_gradient_shape_checked(self):
        rng = np.random.default_rng(0)
        params = random_net(rng, [3, 4, 2])
        _, tape = forward(params, rng.normal(size=(5, 3)))
        with pytest.raises(ConfigurationError):
            backward(tape, np.zeros((5, 3)))

    @pytest.mark.parametrize("widths", [[3, 8, 8, 8, 1], [2, 5, 3], [4, 8, 2]])
    def test_finite_differences(self, widths):
        rng = np.random.default_rng(sum(widths))
        params = random_net(rng, widths)
        x = rng.normal(size=(6, widths[0]))
        weights = rng.normal(size=(6, widths[-1]))

        def loss(p):
            out, _ = forward(p, x)
            return float(np.sum(weights * out ** 2))

        out, tape = forward(params, x)
        grads = backward(tape, 2 * weights * out)
        assert_rel_close(grads.arrays(), finite_difference(loss, params))

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), depth=st.integers(1, 3), width=st.integers(1, 8),
           in_w=st.integers(1, 4), out_w=st.integers(1, 3))
    def test_finite_differences_property(self, seed, depth, width, in_w, out_w):
        rng = np.random.default_rng(seed)
        params = random_net(rng, [in_w] + [width] * depth + [out_w])
        x = rng.normal(size=(3, in_w))
        target = rng.normal(size=(3, out_w))

        def loss(p):
            out, _ = forward(p, x)
            return float(np.sum((out - target) ** 2))

        out, tape = forward(params, x)
        grads = backward(tape, 2 * (out - target))
        assert_rel_close(grads.arrays(), finite_difference(loss, params), atol=1e-6)


class TestAdam:
    def scalar(self, value):
        return NetworkParameters([LayerSpec(1, 1, nn_core.IDENTITY)], [np.array([[value]])], [np.array([0.0])])

    def test_zero_gradient_is_noop(self):
        params = self.scalar(0.7)
        new, state = adam_step(params, params.zeros_like(), AdamState.fresh(params), 0.1)
        np.testing.assert_array_equal(new.weights[0], params.weights[0])
        assert state.step_count == 1

    def test_first_step_is_lr_times_sign(self):
        params = self.scalar(0.0)
        grads = params.zeros_like()
        grads.weights[0][0, 0] = 1.0
        new, _ = adam_step(params, grads, AdamState.fresh(params), 0.1)
        # m_hat = 1, v_hat = 1 -> step = 0.1 / (1 + 1e-8)
        assert new.weights[0][0, 0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)

    def test_matches_hand_recurrence_over_steps(self):
        params = self.scalar(0.5)
        state = AdamState.fresh(params)
        p, m, v = 0.5, 0.0, 0.0
        for t, g in enumerate([0.3, -1.0, 2.0, 0.1], start=1):
            grads = params.zeros_like()
            grads.weights[0][0, 0] = g
            params, state = adam_step(params, grads, state, 0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            p -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            assert params.weights[0][0, 0] == pytest.approx(p, abs=1e-14)
        assert state.step_count == 4

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        params = random_net(rng, [3, 4, 1], log_std=True)
        grads = random_net(rng, [3, 4, 1], log_std=True)
        a, sa = adam_step(params, grads, AdamState.fresh(params), 1e-3)
        b, sb = adam_step(params, grads, AdamState.fresh(params), 1e-3)
        for x, y in zip(a.arrays() + sa.first_moment.arrays(), b.arrays() + sb.first_moment.arrays()):
            np.testing.assert_array_equal(x, y)

    def test_rejects_non_finite(self):
        params = self.scalar(0.0)
        grads = params.zeros_like()
        grads.weights[0][0, 0] = np.inf
        with pytest.raises(InputError):
            adam_step(params, grads, AdamState.fresh(params), 0.1)

    def test_log_std_clamped(self):
        rng = np.random.default_rng(0)
        params = random_net(rng, [2, 3, 1], log_std=True)
        params.log_std[:] = 1.99
        grads = params.zeros_like()
        grads.log_std[:] = -1.0
        new, _ = adam_step(params, grads, AdamState.fresh(params), 0.5)
        assert new.log_std[0] == nn_core.LOG_STD_MAX
        grads.log_std[:] = 1.0
        params.log_std[:] = -19.9
        new, _ = adam_step(params, grads, AdamState.fresh(params), 0.5)
        assert new.log_std[0] == nn_core.LOG_STD_MIN

    def test_shapes_preserved(self):
        rng = np.random.default_rng(0)
        params = random_net(rng, [3, 4, 4, 2], log_std=True)
        grads = random_net(rng, [3, 4, 4, 2], log_std=True)
        new, state = adam_step(params, grads, AdamState.fresh(params), 1e-3)
        assert [a.shape for a in new.arrays()] == [a.shape for a in params.arrays()]
        assert [a.shape for a in state.second_moment.arrays()] == [a.shape for a in params.arrays()]


class TestGaussian:
    def test_log_prob_at_mode(self):
        assert gaussian_log_prob([0.0], [0.0], [0.0]) == pytest.approx(-0.9189385, abs=1e-7)

    def test_log_prob_one_sigma(self):
        assert gaussian_log_prob([0.0], [0.0], [1.0]) == pytest.approx(-1.4189385, abs=1e-7)

    def test_log_prob_two_dims(self):
        assert gaussian_log_prob([0.0, 0.0], [0.0, 0.0], [0.0, 0.0]) == pytest.approx(-1.8378771, abs=1e-7)

    def test_log_prob_matches_density(self):
        mu, ls, a = 0.3, -0.4, 1.1
        sigma = math.exp(ls)
        density = math.exp(-0.5 * ((a - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
        assert gaussian_log_prob([mu], [ls], [a]) == pytest.approx(math.log(density), abs=1e-12)

    def test_log_prob_length_check(self):
        with pytest.raises(ConfigurationError):
            gaussian_log_prob([0.0, 1.0], [0.0], [0.0, 1.0])

    def test_log_prob_grads_finite_difference(self):
        rng = np.random.default_rng(0)
        mu, ls, a = rng.normal(size=3), rng.normal(size=3) * 0.3, rng.normal(size=3)
        d_mu, d_ls = nn_core.gaussian_log_prob_grads(mu, ls, a)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            num_mu = (gaussian_log_prob(mu + e, ls, a) - gaussian_log_prob(mu - e, ls, a)) / (2 * h)
            num_ls = (gaussian_log_prob(mu, ls + e, a) - gaussian_log_prob(mu, ls - e, a)) / (2 * h)
            assert d_mu[i] == pytest.approx(num_mu, rel=1e-6)
            assert d_ls[i] == pytest.approx(num_ls, rel=1e-6)

    def test_sample_vanishing_noise(self):
        mean = np.array([0.4, -1.3])
        a = gaussian_sample(mean, np.full(2, -20.0), np.random.default_rng(0))
        np.testing.assert_allclose(a, mean, atol=1e-8)

    def test_sample_deterministic(self):
        a = gaussian_sample([0.0, 1.0], [0.0, -1.0], np.random.default_rng(42))
        b = gaussian_sample([0.0, 1.0], [0.0, -1.0], np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_sample_moments(self):
        x = gaussian_sample(np.zeros(100_000), np.zeros(100_000), np.random.default_rng(0))
        assert abs(x.mean()) < 0.02
        assert abs(x.var() - 1.0) < 0.03

    def test_entropy(self):
        assert gaussian_entropy([0.0]) == pytest.approx(1.4189385, abs=1e-7)
        assert gaussian_entropy([1.0]) == pytest.approx(2.4189385, abs=1e-7)
        assert gaussian_entropy([0.0, 0.0]) == pytest.approx(2.8378771, abs=1e-7)

    def test_entropy_matches_quadrature(self):
        sigma = math.exp(0.3)
        xs = np.linspace(-12 * sigma, 12 * sigma, 200_001)
        p = np.exp(-0.5 * (xs / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
        numeric = -np.trapezoid(p * np.log(p), xs)
        assert gaussian_entropy([0.3]) == pytest.approx(numeric, abs=1e-8)


def test_init_is_orthogonal_and_small_output():
    params = init_network(mlp_specs(3, 64, 3, 1), np.random.default_rng(0), output_gain=0.01,
                          action_dim=1)
    w = params.weights[1]
    np.testing.assert_allclose(w.T @ w, 2.0 * np.eye(64), atol=1e-10)
    assert np.abs(params.weights[-1]).max() <= 0.01 + 1e-12
    assert all(np.all(b == 0) for b in params.biases)
    np.testing.assert_array_equal(params.log_std, [0.0])


def test_clip_by_global_norm():
    rng = np.random.default_rng(0)
    grads = random_net(rng, [3, 4, 1])
    clipped, norm = nn_core.clip_by_global_norm(grads, 0.5)
    assert norm == pytest.approx(nn_core.global_norm(grads))
    assert nn_core.global_norm(clipped) == pytest.approx(0.5)
