import numpy as np
import pytest

from rezero_lab import isometry as iso
from rezero_lab import nn, residual as R
from rezero_lab import tensor as T
from rezero_lab.errors import ContractError, NumericError
from rezero_lab.tensor import SeededRng, Tensor


def identity_model(t):
    return t + 0.0


class TestJacobian:
    def test_identity_model(self):
        x = Tensor(SeededRng(0).normal(0, 1, (2, 3)))
        J = iso.jacobian(identity_model, x)
        assert J.provenance == "vjp"
        assert np.max(np.abs(J.matrix - np.eye(6))) < 1e-15

    def test_fixed_linear_map(self):
        rng = SeededRng(1)
        W = Tensor(rng.normal(0, 1, (3, 4)))
        x = Tensor(rng.normal(0, 1, (2, 3)))
        J = iso.jacobian(lambda t: T.matmul(t, W), x)
        # d out[a,b] / d x[c,d] = delta_ac * W[d,b]
        expected = np.kron(np.eye(2), W.data.T)
        assert np.max(np.abs(J.matrix - expected)) < 1e-12

    def test_rezero_fc_stack_is_identity(self):
        cfg = R.StackConfig(depth=8, width=5, variant=R.variant("ReZero"))
        stack = R.build_fc_stack(cfg, SeededRng(2))
        x = Tensor(SeededRng(3).normal(0, 1, (3, 5)))
        J = iso.jacobian(stack, x)
        assert np.array_equal(J.matrix, np.eye(15))


class TestJacobianFd:
    def test_identity_model(self):
        x = Tensor(SeededRng(4).normal(0, 1, (2, 2)))
        J = iso.jacobian_fd(identity_model, x)
        assert J.provenance == "finite-difference"
        assert np.max(np.abs(J.matrix - np.eye(4))) < 1e-8

    def test_agrees_with_vjp_on_mlp(self):
        rng = SeededRng(5)
        w1 = Tensor(rng.normal(0, 0.5, (4, 4)))
        w2 = Tensor(rng.normal(0, 0.5, (4, 4)))

        def mlp(t):
            return T.matmul(T.gelu(T.matmul(t, w1)), w2)

        x = Tensor(rng.normal(0, 1, (2, 4)))
        assert np.max(np.abs(iso.jacobian(mlp, x).matrix -
                             iso.jacobian_fd(mlp, x).matrix)) < 1e-5

    def test_agrees_on_softmax(self):
        x = Tensor(SeededRng(6).normal(0, 1, (3, 4)))
        f = lambda t: T.softmax(t, 1)
        assert np.max(np.abs(iso.jacobian(f, x).matrix -
                             iso.jacobian_fd(f, x).matrix)) < 1e-5

    def test_agrees_on_layernorm(self):
        ln = nn.LayerNormLayer(6)
        x = Tensor(SeededRng(7).normal(0, 3, (2, 6)))
        assert np.max(np.abs(iso.jacobian(ln, x).matrix -
                             iso.jacobian_fd(ln, x).matrix)) < 1e-5

    def test_agrees_on_attention(self):
        rng = SeededRng(8)
        mha = nn.MultiHeadAttention(4, 2)
        nn.init_weights(mha, "xavier_uniform", rng)
        x = Tensor(rng.normal(0, 1, (3, 4)))
        assert np.max(np.abs(iso.jacobian(mha, x).matrix -
                             iso.jacobian_fd(mha, x).matrix)) < 1e-5

    def test_bad_h(self):
        with pytest.raises(ContractError):
            iso.jacobian_fd(identity_model, Tensor([1.0]), h=0.0)


class TestSvd:
    def test_identity(self):
        res = iso.svd(np.eye(5))
        assert np.max(np.abs(res.singular_values - 1.0)) < 1e-15

    def test_diagonal_with_zero(self):
        res = iso.svd(np.diag([3.0, 2.0, 0.0]))
        assert res.singular_values.tolist() == [3.0, 2.0, 0.0]
        # U completed to a full orthonormal basis despite the zero column
        assert np.max(np.abs(res.U.T @ res.U - np.eye(3))) < 1e-12

    def test_random_50x50_against_eigensolver(self):
        a = SeededRng(9).normal(0, 1, (50, 50))
        res = iso.svd(a)
        eig = np.linalg.eigvalsh(a.T @ a)[::-1]
        oracle = np.sqrt(np.clip(eig, 0.0, None))
        rel = np.abs(res.singular_values - oracle) / np.maximum(oracle, 1e-300)
        assert np.max(rel) < 1e-6

    def test_reconstruction_and_orthogonality(self):
        a = SeededRng(10).normal(0, 1, (20, 12))
        res = iso.svd(a)
        assert np.max(np.abs(res.reconstruction() - a)) < 1e-8 * np.max(np.abs(a))
        assert np.max(np.abs(res.U.T @ res.U - np.eye(12))) < 1e-8
        assert np.max(np.abs(res.Vt @ res.Vt.T - np.eye(12))) < 1e-8

    def test_wide_matrix(self):
        a = SeededRng(11).normal(0, 1, (6, 15))
        res = iso.svd(a)
        oracle = np.linalg.svd(a, compute_uv=False)
        assert np.max(np.abs(res.singular_values[:6] - oracle)) < 1e-8
        assert np.max(np.abs(res.reconstruction() - a)) < 1e-8 * np.max(np.abs(a))

    def test_rank_deficient(self):
        rng = SeededRng(12)
        a = rng.normal(0, 1, (8, 3)) @ rng.normal(0, 1, (3, 8))
        res = iso.svd(a)
        assert np.sum(res.singular_values > 1e-10) == 3
        assert np.max(np.abs(res.U.T @ res.U - np.eye(8))) < 1e-8
        assert np.max(np.abs(res.reconstruction() - a)) < 1e-8 * np.max(np.abs(a))

    def test_scale_equivariance(self):
        a = SeededRng(13).normal(0, 1, (10, 10))
        base = iso.svd(a).singular_values
        scaled = iso.svd(3.5 * a).singular_values
        rel = np.abs(scaled - 3.5 * base) / np.maximum(3.5 * base, 1e-300)
        assert np.max(rel) < 1e-10

    def test_descending_order(self):
        s = iso.svd(SeededRng(14).normal(0, 1, (9, 9))).singular_values
        assert np.all(np.diff(s) <= 0)

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            iso.svd(np.array([[1.0, np.nan], [0.0, 1.0]]))


class TestSpectrumStats:
    def test_identity_spectrum(self):
        res = iso.spectrum_stats(np.ones(7))
        assert res.chi == 1.0
        assert res.vanishing_count == 0

    def test_chi_is_mean_square(self):
        sigma = np.array([2.0, 1.0, 0.0])
        res = iso.spectrum_stats(sigma)
        assert abs(res.chi - 5.0 / 3.0) < 1e-12

    def test_layernorm_vanishing_count(self):
        # tokenwise norm: 2 vanishing directions per token (mean and scale)
        for n in (2, 4, 8):
            ln = nn.LayerNormLayer(6)
            x = Tensor(SeededRng(20 + n).normal(0, 5.0, (n, 6)))
            J = iso.jacobian(ln, x)
            res = iso.spectrum_stats(iso.svd(J).singular_values, tau=1e-6)
            assert res.vanishing_count == 2 * n

    def test_uniform_attention_rank(self):
        # zero queries/keys: only d of the n*d singular values survive
        rng = SeededRng(30)
        n, d = 8, 16
        z = Tensor(np.zeros((d, d)))
        wv = Tensor(rng.normal(0, 1, (d, d)))
        x = Tensor(rng.normal(0, 1, (n, d)))
        J = iso.jacobian(lambda t: nn.attention_forward(z, z, wv, t), x)
        sigma = iso.svd(J).singular_values
        assert int(np.sum(sigma > 1e-6)) == d
        assert int(np.sum(sigma < 1e-6)) == n * d - d

    def test_histogram_counts_balance(self):
        sigma = np.concatenate([np.ones(5), np.full(3, 1e-15)])
        res = iso.spectrum_stats(sigma, log_floor=1e-12)
        h = res.histogram
        assert h.counts.sum() + h.underflow == 8
        assert h.underflow == 0  # floored values land in the lowest bin
        assert len(h.edges) == h.bins + 1

    def test_underflow_counted(self):
        res = iso.spectrum_stats(np.array([1.0, 1e-9]), lo=-3.0)
        assert res.histogram.underflow == 1
        assert res.histogram.counts.sum() == 1

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            iso.spectrum_stats(np.array([]))

    def test_bad_tau(self):
        with pytest.raises(ContractError):
            iso.spectrum_stats(np.ones(3), tau=0.0)


class TestCosinePropagation:
    def test_same_signal_stays_one(self):
        cfg = R.StackConfig(depth=6, width=5, variant=R.variant("Residual"))
        stack = R.build_fc_stack(cfg, SeededRng(40))
        x = Tensor(SeededRng(41).normal(0, 1, (2, 5)))
        sims = iso.cosine_propagation(stack, x, Tensor(x.data.copy()))
        assert np.max(np.abs(np.array(sims) - 1.0)) < 1e-12

    def test_odd_map_gives_minus_one(self):
        # plain blocks with linear branches (zero bias) are odd maps
        blocks = []
        rng = SeededRng(42)
        for i in range(4):
            lin = nn.LinearLayer(5, 5, name=f"lin{i}")
            nn.init_weights(lin, "he", rng)
            blocks.append(R.make_block(lin, R.variant("Plain"), 5))
        stack = R.BlockStack(blocks)
        x = Tensor(SeededRng(43).normal(0, 1, (2, 5)))
        sims = iso.cosine_propagation(stack, x, Tensor(-x.data))
        assert np.max(np.abs(np.array(sims) + 1.0)) < 1e-12

    def test_rezero_init_preserves_input_cosine(self):
        cfg = R.StackConfig(depth=24, width=6, variant=R.variant("ReZero"))
        stack = R.build_fc_stack(cfg, SeededRng(44))
        rng = SeededRng(45)
        x = Tensor(rng.normal(0, 1, (2, 6)))
        y = Tensor(rng.normal(0, 1, (2, 6)))
        input_cos = float(np.vdot(x.data, y.data) /
                          (np.linalg.norm(x.data) * np.linalg.norm(y.data)))
        sims = iso.cosine_propagation(stack, x, y)
        assert np.max(np.abs(np.array(sims) - input_cos)) < 1e-12

    def test_zero_input_rejected(self):
        cfg = R.StackConfig(depth=2, width=4, variant=R.variant("Plain"))
        stack = R.build_fc_stack(cfg, SeededRng(46))
        with pytest.raises(ContractError):
            iso.cosine_propagation(stack, Tensor(np.zeros((1, 4))), Tensor(np.ones((1, 4))))

    def test_dead_relu_reports_nan(self):
        # negative inputs through a plain relu branch with zero weights die
        lin = nn.LinearLayer(4, 4)
        block = R.make_block(R.FcBranch(4), R.variant("Plain"), 4)
        x = Tensor(-np.ones((1, 4)))
        sims = iso.cosine_propagation(R.BlockStack([block]), x, Tensor(-2 * np.ones((1, 4))))
        assert np.isnan(sims[0])


class TestIsometryAtInit:
    @pytest.mark.parametrize("kind,hyper", [("ReZero", {}), ("SkipInit", {}), ("ZeroGamma", {})])
    def test_full_spectrum_is_one(self, kind, hyper):
        cfg = R.StackConfig(depth=16, width=6, variant=R.variant(kind, **hyper))
        stack = R.build_fc_stack(cfg, SeededRng(50))
        x = Tensor(SeededRng(51).normal(0, 1, (3, 6)))
        sigma = iso.svd(iso.jacobian(stack, x)).singular_values
        assert np.max(np.abs(sigma - 1.0)) < 1e-6
