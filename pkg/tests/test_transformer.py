import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merge_planner.errors import ConfigError, DomainError
from merge_planner.trajectory import DT
from merge_planner.transformer.data import TABLE_WINDOWS_S, WindowDataset, build_windows, seconds_to_steps, split_episodes
from merge_planner.transformer.model import ModelConfig, TransformerModel, backward, forward
from merge_planner.transformer.ops import (
    AttentionWeights,
    multi_head_attention,
    positional_encoding,
    scaled_dot_product_attention,
    softmax,
)
from merge_planner.transformer.training import (
    RMSPropState,
    loss_and_grads,
    mse_loss,
    predict_batch,
    rmsprop_step,
    rollout_predict,
    train,
)

TINY = ModelConfig(d_model=8, window=4, n_heads=2, ffn_width=8, n_layers=1, dense_width=8,
                   dropout=0.0, residual=False)


def dense_multi_head(X, wq, wk, wv, wo, h):
    """Scalar-loop reference: per-head projections, softmax by hand, concat, output map."""
    T, d = X.shape
    dk = d // h
    heads = []
    for i in range(h):
        cols = slice(i * dk, (i + 1) * dk)
        Q, K, V = X @ wq[:, cols], X @ wk[:, cols], X @ wv[:, cols]
        out = np.zeros((T, dk))
        for a in range(T):
            scores = [sum(Q[a, c] * K[b, c] for c in range(dk)) / math.sqrt(dk) for b in range(T)]
            top = max(scores)
            e = [math.exp(s - top) for s in scores]
            z = sum(e)
            for b in range(T):
                out[a] += e[b] / z * V[b]
        heads.append(out)
    return np.hstack(heads) @ wo


class TestPositionalEncoding:
    def test_first_position(self):
        pe = positional_encoding(3, 6)
        np.testing.assert_array_equal(pe[0, 0::2], 0.0)
        np.testing.assert_array_equal(pe[0, 1::2], 1.0)

    def test_second_position(self):
        assert positional_encoding(2, 4)[1, 0] == pytest.approx(0.8414709848078965, abs=1e-12)

    @settings(max_examples=50)
    @given(st.integers(1, 60), st.integers(1, 16))
    def test_matches_direct_formula(self, length, half):
        d = 2 * half
        pe = positional_encoding(length, d)
        pos = length - 1
        for i in range(half):
            ang = pos / 10000 ** (2 * i / d)
            assert abs(pe[pos, 2 * i] - math.sin(ang)) < 1e-9
            assert abs(pe[pos, 2 * i + 1] - math.cos(ang)) < 1e-9
        assert np.all(np.abs(pe) <= 1.0)

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            positional_encoding(4, 5)


class TestAttention:
    def test_single_key(self):
        rng = np.random.default_rng(0)
        Q, K, V = rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), rng.normal(size=(1, 5))
        out, w = scaled_dot_product_attention(Q, K, V)
        np.testing.assert_array_equal(w, [[1.0]])
        np.testing.assert_allclose(out, V)

    def test_identical_keys_average_values(self):
        K = np.array([[1.0, 2.0], [1.0, 2.0]])
        V = np.array([[1.0, 0.0], [3.0, 4.0]])
        out, w = scaled_dot_product_attention(np.array([[0.3, -0.7]]), K, V)
        np.testing.assert_allclose(w, [[0.5, 0.5]])
        np.testing.assert_allclose(out, [[2.0, 2.0]])

    @settings(max_examples=50)
    @given(st.integers(0, 2**31), st.floats(-50, 50))
    def test_softmax_rows_and_shift(self, seed, c):
        s = np.random.default_rng(seed).normal(size=(5, 7)) * 4
        p = softmax(s)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)
        shifted = s.copy()
        shifted[2] += c
        np.testing.assert_allclose(softmax(shifted)[2], p[2], atol=1e-12)

    @pytest.mark.parametrize("seed", range(50))
    def test_scaled_dot_product_matches_loops(self, seed):
        rng = np.random.default_rng(seed)
        T, dk = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        Q, K, V = (rng.normal(size=(T, dk)) for _ in range(3))
        out, _ = scaled_dot_product_attention(Q, K, V)
        I = np.eye(dk)
        ref = dense_multi_head(np.eye(T), Q, K, V, np.eye(dk), 1) if False else None
        # direct evaluation of softmax(QK^T/sqrt(dk))V row by row
        for a in range(T):
            sc = np.array([Q[a] @ K[b] / math.sqrt(dk) for b in range(T)])
            e = np.exp(sc - sc.max())
            assert np.max(np.abs(out[a] - (e / e.sum()) @ V)) < 1e-9

    def test_single_head_reduces_to_projected_attention(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(5, 4))
        wq, wk, wv = (rng.normal(size=(4, 4)) for _ in range(3))
        out = multi_head_attention(X, AttentionWeights(wq, wk, wv, np.eye(4)), 1)
        ref, _ = scaled_dot_product_attention(X @ wq, X @ wk, X @ wv)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_null_values(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(3, 4))
        w = AttentionWeights(rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), np.zeros((4, 4)), rng.normal(size=(4, 4)))
        np.testing.assert_array_equal(multi_head_attention(X, w, 2), 0.0)

    @pytest.mark.parametrize("seed", range(50))
    def test_two_heads_match_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(3, 4))
        wq, wk, wv, wo = (rng.normal(size=(4, 4)) for _ in range(4))
        got = multi_head_attention(X, AttentionWeights(wq, wk, wv, wo), 2)
        assert np.max(np.abs(got - dense_multi_head(X, wq, wk, wv, wo, 2))) < 1e-9

    def test_indivisible_heads(self):
        with pytest.raises(DomainError):
            multi_head_attention(np.zeros((2, 6)), AttentionWeights(*(np.eye(6),) * 4), 4)


class TestModel:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_model=10, n_heads=4)
        with pytest.raises(ConfigError):
            ModelConfig(dropout=1.0)

    def test_inference_is_deterministic(self):
        m = TransformerModel.initialize(TINY, seed=3)
        X = np.random.default_rng(0).uniform(size=(4, 4))
        np.testing.assert_array_equal(forward(m, X), forward(m, X))

    def test_zero_output_layer_gives_bias(self):
        m = TransformerModel.initialize(TINY, seed=3)
        m.params["out.w"][:] = 0.0
        m.params["out.b"][:] = [0.1, -0.2, 0.3, 0.4]
        X = np.random.default_rng(1).uniform(size=(4, 4))
        np.testing.assert_array_equal(forward(m, X), [0.1, -0.2, 0.3, 0.4])

    def test_row_permutation_changes_output(self):
        m = TransformerModel.initialize(TINY, seed=4)
        X = np.random.default_rng(2).uniform(size=(4, 4))
        assert np.max(np.abs(forward(m, X) - forward(m, X[[2, 0, 3, 1]]))) > 1e-6

    def test_wrong_window(self):
        with pytest.raises(DomainError):
            forward(TransformerModel.initialize(TINY), np.zeros((5, 4)))

    def test_batch_matches_single(self):
        m = TransformerModel.initialize(TINY, seed=5)
        X = np.random.default_rng(3).uniform(size=(3, 4, 4))
        np.testing.assert_allclose(forward(m, X), np.stack([forward(m, x) for x in X]), atol=1e-14)

    def test_checkpoint_round_trip(self, tmp_path):
        m = TransformerModel.initialize(ModelConfig(d_model=8, window=6, n_heads=2, n_layers=2), seed=6)
        m.feat_min, m.feat_max = np.array([0.0, -1.0, 2.0, 3.0]), np.array([7.5, 500.0, 3.0, 20.0])
        m.save(tmp_path / "m.json")
        back = TransformerModel.load(tmp_path / "m.json")
        X = np.random.default_rng(4).uniform(size=(6, 4))
        np.testing.assert_array_equal(forward(m, X), forward(back, X))
        np.testing.assert_array_equal(back.feat_max, m.feat_max)

    @settings(max_examples=30)
    @given(st.integers(0, 2**31))
    def test_normalisation_round_trip(self, seed):
        m = TransformerModel.initialize(TINY)
        m.feat_min, m.feat_max = np.array([0.0, -1.0, 2.0, 3.0]), np.array([7.5, 500.0, 3.0, 20.0])
        x = np.random.default_rng(seed).normal(size=(5, 4)) * 50
        np.testing.assert_allclose(m.denormalize(m.normalize(x)), x, atol=1e-10)


class TestGradients:
    @pytest.mark.parametrize("residual", [False, True])
    def test_backward_matches_central_differences(self, residual):
        cfg = ModelConfig(d_model=8, window=4, n_heads=2, ffn_width=8, n_layers=1, dense_width=8,
                          dropout=0.0, residual=residual)
        m = TransformerModel.initialize(cfg, seed=11)
        rng = np.random.default_rng(12)
        for k in m.params:
            m.params[k] = m.params[k] + 0.3 * rng.normal(size=m.params[k].shape)
        X, Y = rng.uniform(size=(5, 4, 4)), rng.uniform(size=(5, 4))
        _, grads = loss_and_grads(m, X, Y)
        h, worst = 1e-6, 0.0
        names = sorted(m.params)
        for _ in range(20):
            k = names[rng.integers(len(names))]
            idx = tuple(rng.integers(s) for s in m.params[k].shape)
            orig = m.params[k][idx]
            m.params[k][idx] = orig + h
            up = loss_and_grads(m, X, Y)[0]
            m.params[k][idx] = orig - h
            down = loss_and_grads(m, X, Y)[0]
            m.params[k][idx] = orig
            num = (up - down) / (2 * h)
            ana = grads[k][idx]
            worst = max(worst, abs(num - ana) / max(1e-7, abs(num) + abs(ana)))
        assert worst < 1e-3

    def test_every_parameter_gets_a_gradient(self):
        m = TransformerModel.initialize(TINY)
        X = np.random.default_rng(0).uniform(size=(2, 4, 4))
        _, grads = loss_and_grads(m, X, np.zeros((2, 4)))
        assert set(grads) == set(m.params)
        assert all(grads[k].shape == m.params[k].shape for k in grads)


class TestLossAndOptimiser:
    def test_mse_examples(self):
        assert mse_loss([1.0, 2.0], [0.0, 0.0]) == 2.5
        assert mse_loss([[1.0, 2.0]], [[1.0, 2.0]]) == 0.0

    def test_mse_reorder_invariant(self):
        rng = np.random.default_rng(0)
        Y, Z = rng.normal(size=(10, 4)), rng.normal(size=(10, 4))
        p = rng.permutation(10)
        assert mse_loss(Y[p], Z[p]) == pytest.approx(mse_loss(Y, Z), abs=1e-15)

    def test_rmsprop_first_step(self):
        params = {"w": np.zeros(3)}
        rmsprop_step(params, {"w": np.ones(3)}, RMSPropState(), 1e-3, 0.9, 1e-8)
        np.testing.assert_allclose(params["w"], -0.001 / (math.sqrt(0.1) + 1e-8), rtol=1e-12)
        assert params["w"][0] == pytest.approx(-0.0031623, abs=1e-7)

    def test_rmsprop_zero_gradient(self):
        params = {"w": np.arange(3.0)}
        rmsprop_step(params, {"w": np.zeros(3)}, RMSPropState())
        np.testing.assert_array_equal(params["w"], [0.0, 1.0, 2.0])

    @settings(max_examples=30)
    @given(st.integers(0, 2**31))
    def test_rmsprop_opposes_gradient(self, seed):
        g = np.random.default_rng(seed).normal(size=6)
        params = {"w": np.zeros(6)}
        rmsprop_step(params, {"w": g}, RMSPropState())
        assert np.all(np.sign(params["w"]) == -np.sign(g))

    def test_zero_learning_rate_keeps_weights(self):
        m = TransformerModel.initialize(TINY, seed=1)
        before = {k: v.copy() for k, v in m.params.items()}
        rng = np.random.default_rng(0)
        ds = WindowDataset(rng.uniform(size=(40, 4, 4)), rng.uniform(size=(40, 4)), np.zeros(40, int))
        train(m, ds, epochs=2, batch_size=8, lr=0.0)
        for k in before:
            np.testing.assert_array_equal(m.params[k], before[k])

    def test_loss_drops_tenfold(self):
        cfg = ModelConfig(d_model=8, window=4, n_heads=2, ffn_width=16, n_layers=1, dense_width=16,
                          dropout=0.0, residual=False)
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 1, size=(500, 4, 4))
        Y = 0.5 * X[:, -1, :] + 0.3 * X.mean(axis=1)
        m = TransformerModel.initialize(cfg, 0)
        start = mse_loss(Y, predict_batch(m, X))
        _, hist = train(m, WindowDataset(X, Y, np.zeros(500, int)), epochs=200, batch_size=64, seed=0)
        assert start / hist[-1].train_mse >= 10.0

    def test_training_is_seeded(self):
        rng = np.random.default_rng(5)
        ds = WindowDataset(rng.uniform(size=(30, 4, 4)), rng.uniform(size=(30, 4)), np.zeros(30, int))
        cfg = ModelConfig(d_model=8, window=4, n_heads=2, n_layers=1, dropout=0.1, residual=False)
        a, _ = train(TransformerModel.initialize(cfg, 2), ds, epochs=3, batch_size=8, seed=9)
        b, _ = train(TransformerModel.initialize(cfg, 2), ds, epochs=3, batch_size=8, seed=9)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])


class TestWindows:
    def test_counts(self):
        F = np.random.default_rng(0).normal(size=(100, 4))
        assert len(build_windows([F], 50)) == 50
        assert len(build_windows([F], 99)) == 1
        assert len(build_windows([F], 100)) == 0

    def test_target_is_next_row(self):
        F = np.arange(40.0).reshape(10, 4)
        ds = build_windows([F], 3)
        np.testing.assert_array_equal(ds[0].input, F[:3])
        np.testing.assert_array_equal(ds[0].target, F[3])
        np.testing.assert_array_equal(ds[6].target, F[9])

    def test_window_grid_in_steps(self):
        assert [seconds_to_steps(s) for s in TABLE_WINDOWS_S] == [50, 100, 151, 202, 252, 303, 353]

    def test_thirty_seconds(self):
        assert seconds_to_steps(30.0) == 909

    def test_split_is_disjoint(self):
        tr, te = split_episodes(20, 0.7, seed=1)
        assert len(tr) == 14 and len(te) == 6 and set(tr).isdisjoint(te)


class TestRollout:
    def test_one_step_equals_forward(self):
        cfg = ModelConfig(d_model=8, window=4, n_heads=2, n_layers=1)
        m = TransformerModel.initialize(cfg, seed=2)
        hist = np.random.default_rng(0).uniform(size=(9, 4))
        out = rollout_predict(m, hist, 1, normalized_io=True)
        np.testing.assert_array_equal(out[0], forward(m, hist[-4:]))

    def test_identity_model_is_constant(self):
        cfg = ModelConfig(d_model=8, window=4, n_heads=2, n_layers=1)
        m = TransformerModel.initialize(cfg, seed=2)
        m.params["out.w"][:] = 0.0
        m.params["out.b"][:] = 0.0
        hist = np.random.default_rng(1).uniform(size=(4, 4))
        out = rollout_predict(m, hist, 25)
        np.testing.assert_allclose(out, np.repeat(hist[-1:], 25, axis=0), atol=1e-12)

    def test_zero_horizon(self):
        m = TransformerModel.initialize(TINY)
        assert rollout_predict(m, np.zeros((4, 4)), 0).shape == (0, 4)

    def test_short_history(self):
        with pytest.raises(DomainError):
            rollout_predict(TransformerModel.initialize(TINY), np.zeros((3, 4)), 5)
