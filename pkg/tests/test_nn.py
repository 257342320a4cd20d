import math

import numpy as np
import pytest

from rezero_lab import nn
from rezero_lab import tensor as T
from rezero_lab.errors import ConfigError, ShapeError
from rezero_lab.tensor import SeededRng, Tensor


def rand(rng, *shape, mean=0.0, std=1.0):
    return Tensor(rng.normal(mean, std, shape))


class TestLinear:
    def test_identity_weights(self):
        lin = nn.LinearLayer(3, 3)
        lin.W.value = Tensor(np.eye(3))
        x = rand(SeededRng(0), 4, 3)
        assert np.array_equal(lin(x).data, x.data)

    def test_bias_only(self):
        lin = nn.LinearLayer(3, 2)
        lin.b.value = Tensor([1.0, 2.0])
        out = lin(Tensor(np.zeros((5, 3)))).data
        assert np.array_equal(out, np.tile([1.0, 2.0], (5, 1)))

    def test_matches_triple_loop(self):
        rng = SeededRng(1)
        lin = nn.LinearLayer(4, 3)
        nn.init_weights(lin, "he", rng)
        lin.b.value = rand(rng, 3)
        x = rand(rng, 5, 4)
        expected = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                expected[i, j] = lin.b.value.data[j]
                for l in range(4):
                    expected[i, j] += x.data[i, l] * lin.W.value.data[l, j]
        assert np.max(np.abs(lin(x).data - expected)) < 1e-12

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            nn.LinearLayer(3, 2)(Tensor(np.zeros((2, 4))))

    def test_grad_check(self):
        rng = SeededRng(2)
        lin = nn.LinearLayer(4, 3)
        nn.init_weights(lin, "he", rng)
        assert T.grad_check(lambda t: lin(t).var(), rand(rng, 3, 4)) < 1e-4


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        ln = nn.LayerNormLayer(4)
        out = ln(Tensor(np.full((2, 4), 3.7))).data
        assert np.max(np.abs(out)) < 1e-6

    def test_hand_oracle(self):
        # population variance of [1,2,3] is 2/3; (1-2)/sqrt(2/3) = -1.224745
        ln = nn.LayerNormLayer(3, eps=1e-14)
        out = ln(Tensor([[1.0, 2.0, 3.0]])).data[0]
        expected = np.array([-1.2247448713915890, 0.0, 1.2247448713915890])
        assert np.max(np.abs(out - expected)) < 1e-6

    def test_zero_mean_unit_variance(self):
        # input variance ~400, far above eps=1e-5
        ln = nn.LayerNormLayer(16)
        x = rand(SeededRng(3), 6, 16, std=20.0)
        out = ln(x).data
        assert np.max(np.abs(out.mean(axis=1))) < 1e-10
        assert np.max(np.abs(out.var(axis=1) - 1.0)) < 1e-6

    def test_shift_and_scale_invariance(self):
        # exact invariance is an eps -> 0 property
        ln = nn.LayerNormLayer(8, eps=1e-14)
        x = SeededRng(4).normal(0, 5, (3, 8))
        base = ln(Tensor(x)).data
        shifted = ln(Tensor(x + 11.0)).data
        scaled = ln(Tensor(x * 7.5)).data
        assert np.max(np.abs(base - shifted)) < 1e-10
        assert np.max(np.abs(base - scaled)) < 1e-10

    def test_gamma_beta(self):
        ln = nn.LayerNormLayer(4)
        ln.gamma.value = Tensor([2.0, 2.0, 2.0, 2.0])
        ln.beta.value = Tensor([1.0, 1.0, 1.0, 1.0])
        x = rand(SeededRng(5), 2, 4)
        plain = nn.LayerNormLayer(4)(x).data
        assert np.max(np.abs(ln(x).data - (2.0 * plain + 1.0))) < 1e-12

    def test_grad_check(self):
        # weighted-sum loss keeps the true gradient O(1); the variance of an
        # already-normalized output is nearly constant and its gradient ~0
        rng = SeededRng(6)
        ln = nn.LayerNormLayer(5)
        r = rand(rng, 3, 5)
        assert T.grad_check(lambda t: T.mul(ln(t), r).sum(), rand(rng, 3, 5)) < 1e-4

    def test_width_one_rejected(self):
        with pytest.raises(ConfigError):
            nn.LayerNormLayer(1)


def attention_oracle(wq, wk, wv, x, mask=None):
    q, k, v = x @ wq, x @ wk, x @ wv
    scores = q @ k.T / math.sqrt(x.shape[1])
    if mask is not None:
        scores = scores + mask
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    att = e / e.sum(axis=1, keepdims=True)
    return att @ v


class TestAttention:
    def test_zero_queries_give_column_mean(self):
        rng = SeededRng(7)
        d = 4
        x = rand(rng, 5, d)
        z = Tensor(np.zeros((d, d)))
        out = nn.attention_forward(z, z, Tensor(np.eye(d)), x).data
        col_mean = x.data.mean(axis=0)
        assert np.max(np.abs(out - col_mean)) < 1e-12

    def test_single_position(self):
        rng = SeededRng(8)
        d = 3
        wv = rand(rng, d, d)
        x = rand(rng, 1, d)
        out = nn.attention_forward(rand(rng, d, d), rand(rng, d, d), wv, x).data
        assert np.max(np.abs(out - x.data @ wv.data)) < 1e-12

    def test_matches_step_by_step_oracle(self):
        rng = SeededRng(9)
        wq, wk, wv = (rand(rng, 4, 4) for _ in range(3))
        x = rand(rng, 3, 4)
        out = nn.attention_forward(wq, wk, wv, x).data
        expected = attention_oracle(wq.data, wk.data, wv.data, x.data)
        assert np.max(np.abs(out - expected)) < 1e-12

    def test_attention_rows_sum_to_one(self):
        # with x = I and Wv = I the output IS the attention matrix
        rng = SeededRng(10)
        n = 6
        out = nn.attention_forward(rand(rng, n, n), rand(rng, n, n),
                                   Tensor(np.eye(n)), Tensor(np.eye(n))).data
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-12

    def test_grad_check(self):
        rng = SeededRng(11)
        wq, wk, wv = (rand(rng, 3, 3, std=0.7) for _ in range(3))
        f = lambda t: nn.attention_forward(wq, wk, wv, t).var()
        assert T.grad_check(f, rand(rng, 4, 3)) < 1e-4


class TestMultiHead:
    def test_one_head_equals_plain_attention(self):
        rng = SeededRng(12)
        mha = nn.MultiHeadAttention(4, 1)
        nn.init_weights(mha, "xavier_uniform", rng)
        mha.Wo.value = Tensor(np.eye(4))
        x = rand(rng, 3, 4)
        expected = nn.attention_forward(mha.Wq.value, mha.Wk.value, mha.Wv.value, x).data
        assert np.max(np.abs(mha(x).data - expected)) < 1e-12

    def test_zero_weights_give_zero(self):
        mha = nn.MultiHeadAttention(4, 2)
        out = mha(rand(SeededRng(13), 3, 4)).data
        assert np.array_equal(out, np.zeros((3, 4)))

    def test_matches_per_head_oracle(self):
        rng = SeededRng(14)
        mha = nn.MultiHeadAttention(4, 2)
        nn.init_weights(mha, "he", rng)
        x = rand(rng, 3, 4)
        q, k, v = (x.data @ w.value.data for w in (mha.Wq, mha.Wk, mha.Wv))
        dh = 2
        parts = []
        for i in range(2):
            sl = slice(i * dh, (i + 1) * dh)
            s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
            s = s - s.max(axis=1, keepdims=True)
            e = np.exp(s)
            parts.append((e / e.sum(axis=1, keepdims=True)) @ v[:, sl])
        expected = np.concatenate(parts, axis=1) @ mha.Wo.value.data
        assert np.max(np.abs(mha(x).data - expected)) < 1e-12

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ConfigError):
            nn.MultiHeadAttention(6, 4)

    def test_causal_mask_blocks_future(self):
        rng = SeededRng(15)
        mha = nn.MultiHeadAttention(4, 2, causal=True)
        nn.init_weights(mha, "he", rng)
        x = rng.normal(0, 1, (5, 4))
        base = mha(Tensor(x)).data
        bumped = x.copy()
        bumped[4, :] += 3.0  # perturb the last position
        out = mha(Tensor(bumped)).data
        assert np.max(np.abs(out[:4] - base[:4])) < 1e-12
        assert np.max(np.abs(out[4] - base[4])) > 1e-6

    def test_grad_check(self):
        rng = SeededRng(16)
        mha = nn.MultiHeadAttention(4, 2, causal=True)
        nn.init_weights(mha, "he", rng)
        assert T.grad_check(lambda t: mha(t).var(), rand(rng, 3, 4)) < 1e-4


class TestFeedForward:
    def test_zero_weights_give_zero(self):
        ffn = nn.FeedForward(3, 6)
        out = ffn(rand(SeededRng(17), 4, 3)).data
        assert np.array_equal(out, np.zeros((4, 3)))

    def test_identity_composition_gives_gelu(self):
        ffn = nn.FeedForward(3, 3)
        ffn.lin1.W.value = Tensor(np.eye(3))
        ffn.lin2.W.value = Tensor(np.eye(3))
        x = rand(SeededRng(18), 4, 3)
        assert np.max(np.abs(ffn(x).data - T.gelu(x).data)) < 1e-15

    def test_matches_composition_oracle(self):
        rng = SeededRng(19)
        ffn = nn.FeedForward(4, 8)
        nn.init_weights(ffn, "he", rng)
        x = rand(rng, 3, 4)
        h = x.data @ ffn.lin1.W.value.data + ffn.lin1.b.value.data
        t = np.tanh(math.sqrt(2 / math.pi) * (h + 0.044715 * h ** 3))
        g = 0.5 * h * (1 + t)
        expected = g @ ffn.lin2.W.value.data + ffn.lin2.b.value.data
        assert np.max(np.abs(ffn(x).data - expected)) < 1e-12

    def test_grad_check(self):
        rng = SeededRng(20)
        ffn = nn.FeedForward(3, 5)
        nn.init_weights(ffn, "he", rng)
        assert T.grad_check(lambda t: ffn(t).var(), rand(rng, 2, 3)) < 1e-4


class TestEmbedding:
    def test_lookup_adds_positions(self):
        emb = nn.EmbeddingTable(5, 3, 4)
        emb.tokens.value = Tensor(np.arange(15, dtype=float).reshape(5, 3))
        emb.positions.value = Tensor(np.ones((4, 3)) * 0.5)
        out = emb([2, 0]).data
        assert np.array_equal(out, emb.tokens.value.data[[2, 0]] + 0.5)

    def test_out_of_context_rejected(self):
        with pytest.raises(ShapeError):
            nn.EmbeddingTable(5, 3, 2)([0, 1, 2])

    def test_out_of_vocab_rejected(self):
        with pytest.raises(ShapeError):
            nn.EmbeddingTable(5, 3, 4)([0, 7])


class TestDropout:
    def test_zero_rate_is_identity(self):
        d = nn.DropoutLayer(0.0)
        x = rand(SeededRng(21), 3, 3)
        assert np.array_equal(d(x, SeededRng(0)).data, x.data)

    def test_eval_mode_is_identity(self):
        d = nn.DropoutLayer(0.5)
        d.training = False
        x = rand(SeededRng(22), 3, 3)
        assert np.array_equal(d(x).data, x.data)

    def test_kept_mass_preserved(self):
        d = nn.DropoutLayer(0.2)
        out = d(T.ones([10 ** 6]), SeededRng(23)).data
        assert abs(out.mean() - 1.0) < 0.01

    def test_bad_rate(self):
        with pytest.raises(ConfigError):
            nn.DropoutLayer(1.0)


class TestInitSchemes:
    def test_he_variance(self):
        lin = nn.LinearLayer(256, 256)
        nn.init_weights(lin, "he", SeededRng(24))
        v = lin.W.value.data.var()
        assert abs(v - 2.0 / 256) < 0.05 * (2.0 / 256)

    def test_he_residual_variance(self):
        lin = nn.LinearLayer(256, 256)
        nn.init_weights(lin, "he_residual", SeededRng(25))
        v = lin.W.value.data.var()
        assert abs(v - 0.25 / 256) < 0.05 * (0.25 / 256)

    def test_xavier_uniform_bounds(self):
        lin = nn.LinearLayer(64, 32)
        nn.init_weights(lin, "xavier_uniform", SeededRng(26))
        limit = math.sqrt(6.0 / (64 + 32))
        assert np.max(np.abs(lin.W.value.data)) <= limit
        # and actually spreads out over the interval
        assert np.max(np.abs(lin.W.value.data)) > 0.8 * limit

    def test_biases_zero(self):
        lin = nn.LinearLayer(8, 8)
        nn.init_weights(lin, "he", SeededRng(27))
        assert np.array_equal(lin.b.value.data, np.zeros(8))

    def test_unknown_scheme(self):
        with pytest.raises(ConfigError):
            nn.init_weights(nn.LinearLayer(2, 2), "glorot", SeededRng(0))
