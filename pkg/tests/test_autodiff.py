import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sagefuse import autodiff as ad
from sagefuse.autodiff import NumericsError, Parameter, ShapeError


class TestForwardOps:
    def test_relu(self):
        assert np.array_equal(np.asarray(ad.relu(np.array([-1.0, 0.0, 2.0]))),
                              [0.0, 0.0, 2.0])

    def test_mean_rows_single_row_is_identity(self):
        row = np.array([[1.5, -2.0, 3.0]])
        assert np.array_equal(np.asarray(ad.mean_rows(row)), row[0])

    def test_mean_rows_empty_set_is_zero_vector(self):
        out = np.asarray(ad.mean_rows(np.empty((0, 4))))
        assert np.array_equal(out, np.zeros(4))

    def test_attention_single_token_returns_value_row(self):
        # Softmax over a singleton is 1, so the output is exactly V.
        q = np.array([[0.3, -0.7]])
        k = np.array([[5.0, 2.0]])
        v = np.array([[1.25, -4.5]])
        assert np.array_equal(np.asarray(ad.attention(q, k, v)), v)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = rng.normal(0, 5, (30, 7))
        s = np.asarray(ad.softmax(x))
        assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)
        assert (s >= 0).all()

    def test_matmul_shape_mismatch_names_op(self):
        with pytest.raises(ShapeError, match="matmul"):
            ad.matmul(np.ones((2, 3)), np.ones((4, 2)))

    def test_concat_cols_shape_mismatch_names_op(self):
        with pytest.raises(ShapeError, match="concat_cols"):
            ad.concat_cols(np.ones((2, 3)), np.ones((3, 3)))

    def test_layernorm_shape_mismatch_names_op(self):
        with pytest.raises(ShapeError, match="layernorm"):
            ad.layernorm(np.ones((2, 4)), np.ones(3), np.zeros(3))

    def test_dropout_zero_rate_is_identity(self):
        x = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(np.asarray(ad.dropout(x, 0.0)), x)

    def test_dropout_positive_rate_requires_rng(self):
        with pytest.raises(NumericsError):
            ad.dropout(np.ones(3), 0.5)

    def test_dropout_invalid_rate_rejected(self):
        with pytest.raises(NumericsError):
            ad.dropout(np.ones(3), 1.5)


class TestCrossEntropy:
    def test_uniform_logits_give_log_num_classes(self):
        logits = np.zeros((5, 4))
        loss = float(ad.val(ad.cross_entropy(logits, np.zeros(5, dtype=int))))
        assert loss == pytest.approx(np.log(4.0), abs=1e-12)

    def test_confident_correct_logits(self):
        # -log softmax([10, -10])[0] = log(1 + exp(-20))
        loss = float(ad.val(ad.cross_entropy(np.array([[10.0, -10.0]]), [0])))
        assert loss == pytest.approx(np.log1p(np.exp(-20.0)), rel=1e-12)
        assert loss == pytest.approx(2.06115362e-9, rel=1e-6)

    def test_class_permutation_invariance(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(0, 2, (10, 5))
        labels = rng.integers(0, 5, 10)
        perm = rng.permutation(5)
        base = float(ad.val(ad.cross_entropy(logits, labels)))
        permuted = float(ad.val(ad.cross_entropy(logits[:, perm],
                                                 np.argsort(perm)[labels])))
        assert permuted == pytest.approx(base, abs=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            logits = rng.normal(0, 3, (8, 3))
            labels = rng.integers(0, 3, 8)
            assert float(ad.val(ad.cross_entropy(logits, labels))) >= 0.0

    def test_label_out_of_range_rejected(self):
        with pytest.raises(NumericsError, match="out of range"):
            ad.cross_entropy(np.zeros((2, 3)), [0, 3])

    def test_extreme_logits_stay_finite(self):
        loss = float(ad.val(ad.cross_entropy(np.array([[1e4, -1e4]]), [1])))
        assert np.isfinite(loss)


class TestBackward:
    def test_backward_without_recorded_graph_rejected(self):
        frozen = Parameter(np.ones((2, 2)), name="w", frozen=True)
        loss = ad.sum_(ad.mul(frozen, 2.0))
        with pytest.raises(NumericsError):
            ad.backward(loss)

    def test_sum_of_linear_map_gradient(self):
        # loss = sum(W @ x)  =>  dloss/dW = outer(ones, x)
        w = Parameter(np.ones((2, 3)), name="w")
        x = np.array([1.0, 2.0, 3.0])
        ad.backward(ad.sum_(ad.matmul(w, x)))
        assert np.array_equal(w.gradient, np.outer(np.ones(2), x))

    def test_elementwise_product_gradient(self):
        w = Parameter(np.array([4.0, 5.0]), name="w")
        x = np.array([2.0, -3.0])
        ad.backward(ad.sum_(ad.mul(w, x)))
        assert np.array_equal(w.gradient, x)

    def test_frozen_parameter_never_accumulates(self):
        frozen = Parameter(np.ones(3), name="f", frozen=True)
        live = Parameter(np.ones(3), name="t")
        ad.backward(ad.sum_(ad.mul(frozen, live)))
        assert np.array_equal(frozen.gradient, np.zeros(3))
        assert np.array_equal(live.gradient, np.ones(3))

    def test_gradient_accumulates_across_backward_calls(self):
        w = Parameter(np.ones(2), name="w")
        for _ in range(2):
            ad.backward(ad.sum_(ad.mul(w, np.array([1.0, 2.0]))))
        assert np.array_equal(w.gradient, [2.0, 4.0])
        w.zero_grad()
        assert np.array_equal(w.gradient, np.zeros(2))

    def test_shared_parameter_used_twice_sums_both_paths(self):
        w = Parameter(np.array([3.0]), name="w")
        loss = ad.add(ad.mul(w, 2.0), ad.mul(w, 5.0))
        ad.backward(ad.sum_(loss))
        assert np.array_equal(w.gradient, [7.0])

    def test_no_grad_disables_recording(self):
        w = Parameter(np.ones(2), name="w")
        with ad.no_grad():
            out = ad.mul(w, 2.0)
        assert isinstance(out, np.ndarray)

    def test_broadcast_bias_gradient_sums_over_batch(self):
        b = Parameter(np.zeros(3), name="b")
        x = np.ones((5, 3))
        ad.backward(ad.sum_(ad.add(x, b)))
        assert np.array_equal(b.gradient, np.full(3, 5.0))


class TestStrictFinite:
    def test_nonfinite_op_output_rejected(self):
        w = Parameter(np.array([1e308]), name="w")
        with np.errstate(over="ignore"), ad.strict_finite():
            with pytest.raises(NumericsError):
                ad.mul(w, np.array([1e308]))

    def test_parameter_rejects_nonfinite_values(self):
        with pytest.raises(NumericsError):
            Parameter(np.array([np.nan]), name="bad")


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
def test_matmul_gradient_matches_transpose_identity(n, m, seed):
    # d(sum(W @ x))/dW = ones_outer_x for any shape; property over shapes.
    rng = np.random.default_rng(seed)
    w = Parameter(rng.normal(0, 1, (n, m)), name="w")
    x = rng.normal(0, 1, m)
    ad.backward(ad.sum_(ad.matmul(w, x)))
    assert np.allclose(w.gradient, np.outer(np.ones(n), x), atol=1e-12)
