"""Tensor substrate: primitive ops, gradients vs finite differences, contracts."""

import math

import numpy as np
import pytest

from jdit.numerics import (
    NonFiniteError,
    Tensor,
    absolute,
    concat,
    conv1d,
    dropout,
    embedding,
    exp,
    gather_rows,
    grad_check,
    layer_norm,
    log,
    masked_fill,
    no_grad,
    pad_axis,
    relu,
    set_debug_checks,
    softmax,
    stack,
)
from jdit.numerics.tensor import sum_


class TestSoftmax:
    def test_uniform_on_equal_inputs(self):
        out = softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], rtol=1e-12)

    def test_stable_under_large_inputs(self):
        out = softmax(Tensor([1000.0, 0.0]), axis=0)
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)

    def test_log_integers(self):
        x = Tensor([math.log(1), math.log(2), math.log(3)])
        np.testing.assert_allclose(softmax(x, axis=0).data, [1 / 6, 2 / 6, 3 / 6], rtol=1e-12)

    def test_rows_sum_to_one_at_large_magnitude(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.uniform(-1e3, 1e3, size=(20, 17)))
        out = softmax(x, axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
        assert (out.data >= 0).all()

    def test_invalid_axis_raises(self):
        with pytest.raises(ValueError):
            softmax(Tensor([1.0, 2.0]), axis=3)


class TestLayerNorm:
    def test_constant_slice_maps_to_zero(self):
        x = Tensor([2.0, 2.0, 2.0])
        gain = Tensor(np.ones(3))
        bias = Tensor(np.zeros(3))
        np.testing.assert_allclose(layer_norm(x, gain, bias, axis=0).data, 0.0, atol=1e-3)

    def test_two_point_slice(self):
        # mean 2, population std 1
        x = Tensor([[1.0, 3.0]])
        gain = Tensor(np.ones(2))
        bias = Tensor(np.zeros(2))
        np.testing.assert_allclose(layer_norm(x, gain, bias).data, [[-1.0, 1.0]], atol=1e-4)

    def test_affine(self):
        x = Tensor([[1.0, 3.0]])
        gain = Tensor(np.full(2, 2.0))
        bias = Tensor(np.full(2, 5.0))
        np.testing.assert_allclose(layer_norm(x, gain, bias).data, [[3.0, 7.0]], atol=1e-4)

    def test_normalized_moments(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(5, 9)))
        out = layer_norm(x, Tensor(np.ones(9)), Tensor(np.zeros(9))).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)

    def test_zero_length_axis_raises(self):
        with pytest.raises(ValueError):
            layer_norm(Tensor(np.zeros((2, 0))), Tensor(np.ones(0)), Tensor(np.zeros(0)))


class TestConv1d:
    def _run(self, x, kern):
        x_t = Tensor(np.asarray(x, dtype=float).reshape(-1, 1))
        k_t = Tensor(np.asarray(kern, dtype=float).reshape(-1, 1, 1))
        return conv1d(x_t, k_t).data.reshape(-1)

    def test_identity_kernel(self):
        np.testing.assert_allclose(self._run([1, 2, 3], [0, 1, 0]), [1, 2, 3])

    def test_sliding_sum_with_zero_pads(self):
        np.testing.assert_allclose(self._run([1, 2, 3], [1, 1, 1]), [3, 6, 5])

    def test_single_frame(self):
        np.testing.assert_allclose(self._run([5], [1, 1, 1]), [5])

    def test_even_kernel_raises(self):
        with pytest.raises(ValueError):
            conv1d(Tensor(np.zeros((3, 1))), Tensor(np.zeros((2, 1, 1))))

    def test_batched_matches_per_utterance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 6, 2))
        k = Tensor(rng.normal(size=(3, 2, 4)))
        b = Tensor(rng.normal(size=4))
        full = conv1d(Tensor(x), k, b).data
        for i in range(3):
            np.testing.assert_allclose(conv1d(Tensor(x[i]), k, b).data, full[i], atol=1e-12)


class TestGradCheck:
    def test_quadratic(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        report = grad_check(lambda t: sum_(t * t), [x], epsilon=1e-4, tolerance=1e-4)
        assert report.passed
        np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-12)

    def test_linear(self):
        x = Tensor([7.0], requires_grad=True)
        report = grad_check(lambda t: sum_(t), [x])
        assert report.max_abs_diff < 1e-9
        np.testing.assert_allclose(x.grad, [1.0])

    def test_rejects_non_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError):
            grad_check(lambda t: t * t, [x])

    def test_element_count(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        report = grad_check(lambda t: sum_(t * t), [x])
        assert report.element_count == 6


def _rand(rng, shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestPrimitiveGradients:
    """Reverse-mode gradients match central finite differences (rel. 1e-3)."""

    @pytest.mark.parametrize("seed", range(3))
    def test_elementwise_and_reductions(self, seed):
        rng = np.random.default_rng(seed)
        shape = tuple(rng.integers(1, 9, size=rng.integers(1, 4)))
        a = _rand(rng, shape)
        b = _rand(rng, shape)
        cases = [
            lambda a, b: sum_((a + b) * (a - b)),
            lambda a, b: sum_(a * b + relu(a)),
            lambda a, b: sum_(exp(a * Tensor(0.3)) + absolute(b) * b),
            lambda a, b: ((a * a + Tensor(1.0)) ** 0.5).mean() + log(b * b + Tensor(1.0)).sum(),
            lambda a, b: (a / (absolute(b) + Tensor(2.0))).mean(axis=None),
        ]
        for f in cases:
            assert grad_check(f, [a, b]).passed

    @pytest.mark.parametrize("seed", range(3))
    def test_matmul_batched(self, seed):
        rng = np.random.default_rng(10 + seed)
        a = _rand(rng, (2, 4, 3))
        b = _rand(rng, (3, 5))
        assert grad_check(lambda a, b: sum_((a @ b) ** 2.0), [a, b]).passed

    def test_shape_ops(self):
        rng = np.random.default_rng(20)
        a = _rand(rng, (3, 4))
        b = _rand(rng, (2, 4))
        fns = [
            lambda a, b: sum_(concat([a, b], axis=0) ** 2.0),
            lambda a, b: sum_(stack([a[0:2], b], axis=1) * Tensor(0.5)),
            lambda a, b: sum_(pad_axis(a, 0, 1, 2) ** 2.0) + sum_(b),
            lambda a, b: sum_(a.transpose((1, 0)) @ a) + sum_(b),
            lambda a, b: sum_(a.reshape((2, 6))) * b.mean(),
            lambda a, b: sum_(a[1:, :2] * a[1:, :2]) + sum_(b),
        ]
        for f in fns:
            assert grad_check(f, [a, b]).passed

    def test_gather_accumulates_repeats(self):
        table = Tensor(np.arange(6, dtype=float).reshape(3, 2), requires_grad=True)
        idx = np.array([0, 1, 1, 2, 1])
        out = gather_rows(table, idx)
        sum_(out).backward()
        np.testing.assert_allclose(table.grad, [[1, 1], [3, 3], [1, 1]])
        assert grad_check(lambda t: sum_(gather_rows(t, idx) ** 2.0), [table]).passed

    def test_embedding_2d_ids(self):
        rng = np.random.default_rng(3)
        table = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        ids = np.array([[0, 4], [4, 2]])
        out = embedding(table, ids)
        assert out.shape == (2, 2, 3)
        assert grad_check(lambda t: sum_(embedding(t, ids) ** 2.0), [table]).passed

    def test_masked_fill_blocks_gradient(self):
        a = Tensor(np.arange(4.0), requires_grad=True)
        mask = np.array([False, True, False, True])
        sum_(masked_fill(a, mask, -1e30) * Tensor([1.0, 0.0, 1.0, 0.0])).backward()
        np.testing.assert_allclose(a.grad, [1, 0, 1, 0])

    def test_softmax_gradient(self):
        rng = np.random.default_rng(4)
        a = _rand(rng, (3, 5))
        coeff = Tensor(rng.normal(size=(3, 5)))
        assert grad_check(lambda t: sum_(softmax(t, axis=1) * coeff), [a]).passed

    def test_layer_norm_gradient(self):
        rng = np.random.default_rng(5)
        x = _rand(rng, (2, 6))
        g = _rand(rng, (6,))
        b = _rand(rng, (6,))
        assert grad_check(lambda x, g, b: sum_(layer_norm(x, g, b) ** 2.0), [x, g, b]).passed

    def test_conv1d_gradient(self):
        rng = np.random.default_rng(6)
        x = _rand(rng, (7, 3))
        k = _rand(rng, (5, 3, 2))
        b = _rand(rng, (2,))
        assert grad_check(lambda x, k, b: sum_(conv1d(x, k, b) ** 2.0), [x, k, b]).passed


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = Tensor(np.linspace(-1, 1, 7))
        rng = np.random.default_rng(0)
        out = dropout(x, 0.5, rng, training=False)
        assert out is x  # bit-exact identity

    def test_inverted_scaling(self):
        x = Tensor(np.ones(10000))
        rng = np.random.default_rng(0)
        out = dropout(x, 0.25, rng, training=True).data
        kept = out[out != 0]
        np.testing.assert_allclose(kept, 1.0 / 0.75)
        assert abs(out.mean() - 1.0) < 0.05

    def test_deterministic_given_seed(self):
        x = Tensor(np.ones(64))
        a = dropout(x, 0.5, np.random.default_rng(7), training=True).data
        b = dropout(x, 0.5, np.random.default_rng(7), training=True).data
        np.testing.assert_array_equal(a, b)

    def test_gradient_masks_match(self):
        x = Tensor(np.ones(32), requires_grad=True)
        out = dropout(x, 0.5, np.random.default_rng(1), training=True)
        sum_(out).backward()
        np.testing.assert_allclose(x.grad, np.where(out.data != 0, 2.0, 0.0))

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            dropout(Tensor([1.0]), 1.0, np.random.default_rng(0), training=True)


class TestContracts:
    def test_debug_checks_flag_nonfinite(self):
        set_debug_checks(True)
        try:
            with pytest.raises(NonFiniteError):
                log(Tensor([-1.0]))
        finally:
            set_debug_checks(False)

    def test_no_grad_blocks_graph(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * x
        assert not y.requires_grad

    def test_detach_stops_flow(self):
        x = Tensor([3.0], requires_grad=True)
        y = sum_(x.detach() * x)
        y.backward()
        np.testing.assert_allclose(x.grad, [3.0])

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * x).backward()

    def test_grad_accumulates_on_reuse(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x + x * Tensor([3.0])
        sum_(y).backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_deep_chain_does_not_recurse(self):
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(3000):
            y = y + Tensor([0.001])
        sum_(y).backward()
        np.testing.assert_allclose(x.grad, [1.0])
