import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sblab.errors import InvalidArgument, NumericError
from sblab.nn import (
    AdamState, Mlp, adam_step, ema_update, init_mlp, mlp_forward, mse_grad, timestep_embed, zero_mlp,
)


def small_net(rng, d=2, hidden=8, n_layers=3, dtype=np.float64, embed_dim=4, activation="silu"):
    return init_mlp(d, 10, rng, hidden=hidden, n_layers=n_layers, embed_dim=embed_dim,
                    activation=activation, dtype=dtype)


class TestEmbedding:
    def test_zero_phase(self):
        np.testing.assert_array_equal(timestep_embed(0, 20, 4), [0, 0, 1, 1])

    def test_last_index_single_frequency(self):
        np.testing.assert_allclose(timestep_embed(20, 20, 2), [0.84147, 0.54030], atol=1e-5)

    def test_repeatable(self):
        a = timestep_embed(7, 20, 16)
        b = timestep_embed(7, 20, 16)
        assert a.tobytes() == b.tobytes()

    def test_vector_k_rows_match_scalar(self):
        ks = np.array([0, 3, 20])
        rows = timestep_embed(ks, 20, 8)
        for i, k in enumerate(ks):
            np.testing.assert_array_equal(rows[i], timestep_embed(k, 20, 8))

    @pytest.mark.parametrize("k,n,e", [(0, 20, 3), (0, 0, 4), (21, 20, 4), (-1, 20, 4)])
    def test_bad_arguments(self, k, n, e):
        with pytest.raises(InvalidArgument):
            timestep_embed(k, n, e)


class TestForward:
    def test_zero_weights_give_zero(self, rng):
        net = zero_mlp(small_net(rng))
        out = mlp_forward(net, 3, rng.standard_normal((5, 2)))
        assert np.all(out == 0)

    def test_identity_layer(self, rng):
        d, e = 3, 4
        w = np.zeros((d + e, d))
        w[:d] = np.eye(d)
        net = Mlp([d + e, d], [w], [np.zeros(d)], 10, e)
        x = rng.standard_normal((6, d))
        np.testing.assert_array_equal(mlp_forward(net, 5, x), x)

    def test_two_layer_matches_manual_chain(self, rng):
        net = small_net(rng, n_layers=2, activation="tanh")
        x = rng.standard_normal((4, 2))
        h = np.concatenate([x, np.tile(timestep_embed(2, 10, 4), (4, 1))], axis=1)
        W0, b0, W1, b1 = net.params
        manual = np.tanh(h @ W0 + b0) @ W1 + b1
        np.testing.assert_allclose(mlp_forward(net, 2, x), manual, rtol=1e-12)

    def test_dimension_mismatch(self, rng):
        net = small_net(rng)
        with pytest.raises(InvalidArgument):
            mlp_forward(net, 0, np.zeros((3, 5)))

    def test_inconsistent_layer_dims(self):
        with pytest.raises(InvalidArgument):
            Mlp([6, 4, 2], [np.zeros((6, 5)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)], 10, 4)

    def test_output_dim_must_match_data(self):
        with pytest.raises(InvalidArgument):
            Mlp([6, 3], [np.zeros((6, 3))], [np.zeros(3)], 10, 4)

    def test_default_architecture(self, rng):
        net = init_mlp(2, 20, rng)
        assert len(net.weights) == 10
        assert net.layer_dims[1] == 128
        assert net.dtype == np.float32
        assert net.activation == "silu"
        assert net.all_finite()

    def test_init_bounds(self, rng):
        net = init_mlp(2, 20, rng, hidden=32, n_layers=3)
        for w in net.weights:
            assert np.all(np.abs(w) <= 1.0 / np.sqrt(w.shape[0]))


class TestGradient:
    def test_zero_residual(self, rng):
        net = small_net(rng)
        x = rng.standard_normal((7, 2))
        loss, grads = mse_grad(net, 4, x, mlp_forward(net, 4, x))
        assert loss == 0
        assert all(np.all(g == 0) for g in grads)

    def test_finite_differences(self, rng):
        net = small_net(rng, n_layers=3)
        x = rng.standard_normal((9, 2))
        t = rng.standard_normal((9, 2))
        k = rng.integers(0, 11, 9)
        _, grads = mse_grad(net, k, x, t)
        h = 1e-3
        worst = 0.0
        for p, g in zip(net.params, grads):
            flat, gflat = p.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                lp, _ = mse_grad(net, k, x, t)
                flat[i] = old - h
                lm, _ = mse_grad(net, k, x, t)
                flat[i] = old
                fd = (lp - lm) / (2 * h)
                worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-6))
        assert worst < 1e-4

    def test_row_weights_match_scaled_residual(self, rng):
        net = small_net(rng)
        x = rng.standard_normal((5, 2))
        t = rng.standard_normal((5, 2))
        w = rng.uniform(0.1, 2.0, 5)
        loss_w, grads_w = mse_grad(net, 1, x, t, weights=w)
        y = mlp_forward(net, 1, x)
        assert loss_w == pytest.approx(np.mean(w[:, None] * (y - t) ** 2), rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(c=st.floats(0.1, 10.0))
    def test_quadratic_homogeneity(self, c):
        rng = np.random.default_rng(5)
        net = small_net(rng)
        x = rng.standard_normal((6, 2))
        y = mlp_forward(net, 2, x)
        r = rng.standard_normal((6, 2))
        l1, _ = mse_grad(net, 2, x, y - r)
        lc, _ = mse_grad(net, 2, x, y - c * r)
        assert lc == pytest.approx(c * c * l1, rel=1e-9)

    def test_nan_input(self, rng):
        net = small_net(rng)
        x = np.array([[np.nan, 0.0]])
        with pytest.raises(NumericError):
            mse_grad(net, 0, x, np.zeros((1, 2)))

    def test_empty_batch(self, rng):
        with pytest.raises(InvalidArgument):
            mse_grad(small_net(rng), 0, np.zeros((0, 2)), np.zeros((0, 2)))


class TestAdam:
    def test_null_gradient(self, rng):
        net = small_net(rng)
        before = [p.copy() for p in net.params]
        state = AdamState.for_params(net.params)
        adam_step(net.params, [np.zeros_like(p) for p in net.params], state, 1e-3)
        for a, b in zip(before, net.params):
            np.testing.assert_array_equal(a, b)
        assert state.step == 1

    def test_first_step_size(self):
        w = [np.array([0.5])]
        state = AdamState.for_params(w)
        adam_step(w, [np.array([1.0])], state, 1e-4)
        assert 0.5 - w[0][0] == pytest.approx(1e-4 / (1 + 1e-8), rel=1e-12)

    def test_repeated_gradient_steps_do_not_grow(self):
        w = [np.array([0.0])]
        state = AdamState.for_params(w)
        prev = 0.0
        sizes = []
        for _ in range(5):
            adam_step(w, [np.array([0.7])], state, 1e-2)
            sizes.append(prev - w[0][0])
            prev = w[0][0]
        assert all(b <= a + 1e-15 for a, b in zip(sizes, sizes[1:]))

    def test_non_finite_gradient_leaves_weights(self, rng):
        net = small_net(rng)
        before = [p.copy() for p in net.params]
        state = AdamState.for_params(net.params)
        grads = [np.zeros_like(p) for p in net.params]
        grads[-1][0] = np.inf
        with pytest.raises(NumericError):
            adam_step(net.params, grads, state, 1e-3)
        assert state.step == 0
        for a, b in zip(before, net.params):
            np.testing.assert_array_equal(a, b)

    def test_ema(self, rng):
        net = small_net(rng)
        ema = zero_mlp(net)
        ema_update(ema, net, 0.9)
        np.testing.assert_allclose(ema.weights[0], 0.1 * net.weights[0])
