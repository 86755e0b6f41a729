"""Layer primitives: activations, norms, graph convolution, attention."""

import numpy as np
import pytest

from _helpers import random_normalized_adjacency

from gsnet import LayerParams, gelu, gs_layer_forward, modulated_adjacency
from gsnet.layers import (
    batch_norm_backward,
    batch_norm_forward,
    dropout_mask,
    gelu_grad,
    layer_norm_backward,
    layer_norm_forward,
    nonlocal_forward,
    propagation_kernel,
    refine_forward,
)


class TestGelu:
    def test_zero(self):
        assert gelu(0.0) == 0.0

    def test_positive_asymptote(self):
        assert abs(gelu(10.0) - 10.0) <= 1e-6

    def test_negative_asymptote(self):
        assert abs(gelu(-10.0)) <= 1e-6

    def test_gradient_matches_finite_differences(self):
        xs = np.linspace(-4.0, 4.0, 41)
        step = 1e-6
        numeric = (gelu(xs + step) - gelu(xs - step)) / (2 * step)
        assert np.allclose(gelu_grad(xs), numeric, atol=1e-8)


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out, _ = layer_norm_forward(np.full((1, 4), 2.5), np.ones(4), np.zeros(4))
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_normalizes_mean_and_variance(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(6, 16)) * 3.0 + 1.0
        out, _ = layer_norm_forward(x, np.ones(16), np.zeros(16))
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        assert np.allclose(out.var(axis=-1), 1.0, atol=1e-4)

    def test_two_entry_row_hand_case(self):
        # mean 2, variance 1: outputs are +-1/sqrt(1 + eps)
        out, _ = layer_norm_forward(np.array([[1.0, 3.0]]), np.ones(2), np.zeros(2))
        expected = 1.0 / np.sqrt(1.0 + 1e-5)
        assert np.allclose(out, [[-expected, expected]], atol=1e-15)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 5))
        gain = rng.normal(size=5)
        bias = rng.normal(size=5)
        dout = rng.normal(size=(3, 5))
        _, cache = layer_norm_forward(x, gain, bias)
        dx, dgain, dbias = layer_norm_backward(dout, cache)
        step = 1e-6

        def loss(xv, gv, bv):
            out, _ = layer_norm_forward(xv, gv, bv)
            return float(np.sum(out * dout))

        for arr, grad, make in ((x, dx, lambda v: (v, gain, bias)),
                                (gain, dgain, lambda v: (x, v, bias)),
                                (bias, dbias, lambda v: (x, gain, v))):
            numeric = np.zeros_like(arr)
            flat = numeric.reshape(-1)
            for i in range(arr.size):
                plus = arr.copy().reshape(-1)
                plus[i] += step
                minus = arr.copy().reshape(-1)
                minus[i] -= step
                flat[i] = (loss(*make(plus.reshape(arr.shape)))
                           - loss(*make(minus.reshape(arr.shape)))) / (2 * step)
            assert np.allclose(grad, numeric, atol=1e-6)


class TestBatchNorm:
    def test_train_normalizes_per_channel(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(8, 5, 3)) * 2.0 + 4.0
        rm, rv = np.zeros(3), np.ones(3)
        out, _ = batch_norm_forward(x, np.ones(3), np.zeros(3), rm, rv, train=True)
        assert np.allclose(out.mean(axis=(0, 1)), 0.0, atol=1e-12)
        assert np.allclose(out.var(axis=(0, 1)), 1.0, atol=1e-4)

    def test_running_stats_updated_and_used_in_eval(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(16, 4, 2)) + 3.0
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm_forward(x, np.ones(2), np.zeros(2), rm, rv, train=True)
        assert np.all(rm > 0.0)  # moved toward the batch mean
        out_eval, _ = batch_norm_forward(x, np.ones(2), np.zeros(2), rm, rv, train=False)
        expected = (x - rm) / np.sqrt(rv + 1e-5)
        assert np.allclose(out_eval, expected, atol=1e-12)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(4, 3, 2))
        gain = rng.normal(size=2)
        bias = rng.normal(size=2)
        dout = rng.normal(size=(4, 3, 2))
        _, cache = batch_norm_forward(x, gain, bias, np.zeros(2), np.ones(2), train=True)
        dx, dgain, dbias = batch_norm_backward(dout, cache)
        step = 1e-6
        numeric = np.zeros_like(x).reshape(-1)
        for i in range(x.size):
            plus = x.copy().reshape(-1)
            plus[i] += step
            minus = x.copy().reshape(-1)
            minus[i] -= step
            op, _ = batch_norm_forward(plus.reshape(x.shape), gain, bias,
                                       np.zeros(2), np.ones(2), train=True)
            om, _ = batch_norm_forward(minus.reshape(x.shape), gain, bias,
                                       np.zeros(2), np.ones(2), train=True)
            numeric[i] = (np.sum(op * dout) - np.sum(om * dout)) / (2 * step)
        assert np.allclose(dx.reshape(-1), numeric, atol=1e-6)


class TestDropout:
    def test_mask_values_are_zero_or_inverse_keep(self):
        rng = np.random.default_rng(5)
        mask = dropout_mask(rng, (100, 10), 0.2)
        keep = 1.0 / 0.8
        assert set(np.unique(mask)).issubset({0.0, keep})

    def test_rate_zero_is_all_ones(self):
        rng = np.random.default_rng(6)
        assert np.array_equal(dropout_mask(rng, (5, 5), 0.0), np.ones((5, 5)))


class TestModulatedAdjacency:
    def test_zero_modulation_is_identity(self):
        rng = np.random.default_rng(7)
        na = random_normalized_adjacency(rng, 6)
        assert np.array_equal(modulated_adjacency(na, np.zeros((6, 6))), na.entries)

    def test_antisymmetric_modulation_cancels(self):
        rng = np.random.default_rng(8)
        na = random_normalized_adjacency(rng, 6)
        q = rng.normal(size=(6, 6))
        anti = q - q.T
        assert np.allclose(modulated_adjacency(na, anti), na.entries, atol=1e-15)

    def test_output_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(9)
        na = random_normalized_adjacency(rng, 8)
        q = rng.normal(size=(8, 8))
        out = modulated_adjacency(na, q)
        assert np.array_equal(out, out.T)
        assert np.all(np.diag(out) == np.diag(na.entries))


def reference_propagation(entries, beta, h, x0, w, w_skip, m=None, activation=False):
    """Literal evaluation of the propagation rule, coded independently."""
    n = entries.shape[0]
    a_up = np.triu(beta * entries, k=1)
    a_low = a_up.T
    k = (1.0 - beta) * np.eye(n) + a_low
    term_h = h @ w
    term_x = x0 @ w_skip
    if m is not None:
        term_h = m * term_h
        term_x = m * term_x
    out = k @ a_up @ term_h + k @ term_x
    return gelu(out) if activation else out


class TestGsLayer:
    def setup_method(self):
        rng = np.random.default_rng(10)
        self.rng = rng
        self.na = random_normalized_adjacency(rng, 5)
        self.h = rng.normal(size=(5, 4))
        self.x0 = rng.normal(size=(5, 2))
        self.w = rng.normal(size=(4, 3))
        self.w_skip = rng.normal(size=(2, 3))
        self.m = rng.normal(size=(5, 3))
        self.q = rng.normal(size=(5, 5)) * 0.1

    def params(self, q=None, m=None):
        return LayerParams(
            weight=self.w,
            skip_weight=self.w_skip,
            modulation=self.m if m is None else m,
            adj_modulation=np.zeros((5, 5)) if q is None else q,
            beta=0.2,
        )

    def test_output_shape(self):
        out = gs_layer_forward(self.h, self.x0, self.params(), self.na)
        assert out.shape == (5, 3)

    def test_batched_input_matches_per_sample(self):
        hb = self.rng.normal(size=(3, 5, 4))
        xb = self.rng.normal(size=(3, 5, 2))
        out = gs_layer_forward(hb, xb, self.params(), self.na)
        for b in range(3):
            single = gs_layer_forward(hb[b], xb[b], self.params(), self.na)
            assert np.allclose(out[b], single, atol=1e-15)

    def test_matches_independent_formula_with_modulation(self):
        """Full rule against a brute-force evaluation on a 5-node instance."""
        entries = modulated_adjacency(self.na, self.q)
        expected = reference_propagation(entries, 0.2, self.h, self.x0,
                                         self.w, self.w_skip, self.m)
        out = gs_layer_forward(self.h, self.x0, self.params(q=self.q), self.na)
        assert np.max(np.abs(out - expected)) <= 1e-12

    def test_zero_q_reduces_to_unmodulated_adjacency_rule(self):
        expected = reference_propagation(self.na.entries, 0.2, self.h, self.x0,
                                         self.w, self.w_skip, self.m)
        out = gs_layer_forward(self.h, self.x0, self.params(), self.na)
        assert np.max(np.abs(out - expected)) <= 1e-12

    def test_zero_q_unit_m_reduces_to_plain_rule(self):
        ones = np.ones((5, 3))
        expected = reference_propagation(self.na.entries, 0.2, self.h, self.x0,
                                         self.w, self.w_skip, None)
        out = gs_layer_forward(self.h, self.x0, self.params(m=ones), self.na)
        assert np.max(np.abs(out - expected)) <= 1e-12

    def test_activation_flag_applies_gelu(self):
        pre = gs_layer_forward(self.h, self.x0, self.params(), self.na, activation=False)
        post = gs_layer_forward(self.h, self.x0, self.params(), self.na, activation=True)
        assert np.allclose(post, gelu(pre), atol=1e-15)

    def test_joint_permutation_equivariance(self):
        """Permuting every node-indexed input permutes the output.

        The triangular split itself is tied to the node ordering (it fixes
        the sweep order), so the split matrices are permuted as matrices;
        re-deriving the split on a permuted adjacency changes the sweep
        and is not expected to commute.
        """
        from gsnet.layers import PropagationKernel, gs_conv_forward

        perm = self.rng.permutation(5)
        p = np.eye(5)[perm]
        kernel = propagation_kernel(self.na.entries, self.q, 0.2)
        kernel_p = PropagationKernel(
            upper=p @ kernel.upper @ p.T,
            skip_kernel=p @ kernel.skip_kernel @ p.T,
            prop_kernel=p @ kernel.prop_kernel @ p.T,
            beta=kernel.beta,
            symmetrize=kernel.symmetrize,
        )
        out, _ = gs_conv_forward(self.h, self.x0, self.w, self.w_skip, self.m, kernel)
        out_p, _ = gs_conv_forward(self.h[perm], self.x0[perm], self.w, self.w_skip,
                                   self.m[perm], kernel_p)
        assert np.max(np.abs(out_p - out[perm])) <= 1e-12

    def test_nonfinite_parameters_rejected(self):
        bad = self.params()
        bad.weight = self.w.copy()
        bad.weight[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            gs_layer_forward(self.h, self.x0, bad, self.na)


class TestNonLocal:
    def setup_method(self):
        rng = np.random.default_rng(11)
        self.rng = rng
        self.h = rng.normal(size=(2, 6, 8))
        self.wt = rng.normal(size=(8, 4))
        self.wp = rng.normal(size=(8, 4))
        self.wg = rng.normal(size=(8, 4))
        self.wo = rng.normal(size=(4, 8))

    def test_zero_output_weight_is_identity(self):
        out, _ = nonlocal_forward(self.h, self.wt, self.wp, self.wg,
                                  np.zeros((4, 8)))
        assert np.array_equal(out, self.h)

    def test_attention_rows_sum_to_one(self):
        _, cache = nonlocal_forward(self.h, self.wt, self.wp, self.wg, self.wo)
        attn = cache[4]
        assert np.max(np.abs(attn.sum(axis=-1) - 1.0)) <= 1e-12

    def test_node_permutation_equivariance(self):
        perm = self.rng.permutation(6)
        out, _ = nonlocal_forward(self.h, self.wt, self.wp, self.wg, self.wo)
        out_p, _ = nonlocal_forward(self.h[:, perm], self.wt, self.wp, self.wg, self.wo)
        assert np.max(np.abs(out_p - out[:, perm])) <= 1e-12


class TestRefine:
    def test_zero_second_layer_is_identity(self):
        rng = np.random.default_rng(12)
        pred = rng.normal(size=(3, 4, 3))
        w1 = rng.normal(size=(12, 6))
        out, _ = refine_forward(pred, w1, np.zeros(6), np.zeros((6, 12)), np.zeros(12))
        assert np.array_equal(out, pred)

    def test_preserves_shape(self):
        rng = np.random.default_rng(13)
        pred = rng.normal(size=(2, 5, 3))
        w1 = rng.normal(size=(15, 4))
        w2 = rng.normal(size=(4, 15))
        out, _ = refine_forward(pred, w1, np.zeros(4), w2, np.zeros(15))
        assert out.shape == pred.shape
