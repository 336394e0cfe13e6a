"""Core reverse-mode autodiff behaviour: graph building, backward, grad rules."""

import numpy as np
import pytest

from dualdet.numerics import (NonFiniteError, Tensor, add, concat, getitem,
                              matmul, mul, neg, no_grad, precision, relu,
                              reshape, stack, strict_finite, transpose, tsum)


def leaf(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class TestBasics:
    def test_polynomial_gradient(self):
        """d/dx (x^2 + 3x) = 2x + 3 = 7 at x = 2."""
        x = leaf(2.0)
        y = add(mul(x, x), mul(x, 3.0))
        y.backward()
        assert y.item() == 10.0
        assert float(x.grad) == pytest.approx(7.0, abs=1e-12)

    def test_diamond_accumulation(self):
        """x feeding two branches sums contributions: d/dx (x*x + x) = 2x + 1."""
        x = leaf(3.0)
        y = add(mul(x, x), x)
        y.backward()
        assert float(x.grad) == pytest.approx(7.0, abs=1e-12)

    def test_grad_accumulates_across_backward_calls(self):
        x = leaf(1.5)
        mul(x, 4.0).backward()
        mul(x, 4.0).backward()
        assert float(x.grad) == pytest.approx(8.0, abs=1e-12)

    def test_zero_grad_resets(self):
        x = leaf(1.0)
        mul(x, 2.0).backward()
        x.zero_grad()
        assert x.grad is None

    def test_backward_requires_scalar(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(ValueError):
            x.backward()

    def test_long_chain_no_recursion_limit(self):
        x = leaf(1.0)
        y = x
        for _ in range(3000):
            y = add(y, 1.0)
        y.backward()
        assert float(x.grad) == 1.0
        assert y.item() == 3001.0

    def test_shared_subexpression_counted_once_per_path(self):
        """s = x + x used twice: y = s * s, dy/dx = 2s * ds/dx = 2*(2x)*2 = 8x."""
        x = leaf(0.5)
        s = add(x, x)
        y = mul(s, s)
        y.backward()
        assert float(x.grad) == pytest.approx(8 * 0.5, abs=1e-12)


class TestMatmul:
    def test_matmul_grads_match_closed_form(self):
        rng = np.random.default_rng(0)
        a = leaf(rng.normal(size=(3, 4)))
        b = leaf(rng.normal(size=(4, 5)))
        g = rng.normal(size=(3, 5))
        out = matmul(a, b)
        loss = tsum(mul(out, Tensor(g)))
        loss.backward()
        assert np.allclose(a.grad, g @ b.data.T, atol=1e-12)
        assert np.allclose(b.grad, a.data.T @ g, atol=1e-12)

    def test_batched_matmul_shapes(self):
        rng = np.random.default_rng(1)
        a = leaf(rng.normal(size=(6, 2, 3)))
        b = leaf(rng.normal(size=(6, 3, 4)))
        out = matmul(a, b)
        assert out.shape == (6, 2, 4)
        tsum(out).backward()
        assert a.grad.shape == (6, 2, 3)
        assert b.grad.shape == (6, 3, 4)


class TestBroadcasting:
    def test_add_broadcast_sums_grad_over_expanded_axes(self):
        a = leaf(np.zeros((3, 4)))
        b = leaf(np.zeros(4))
        tsum(add(a, b)).backward()
        assert np.array_equal(a.grad, np.ones((3, 4)))
        assert np.array_equal(b.grad, np.full(4, 3.0))

    def test_mul_broadcast_scalar_tensor(self):
        a = leaf(np.arange(6.0).reshape(2, 3))
        s = leaf(2.0)
        tsum(mul(a, s)).backward()
        assert np.array_equal(a.grad, np.full((2, 3), 2.0))
        assert float(s.grad) == pytest.approx(np.arange(6.0).sum(), abs=1e-12)


class TestStructureOps:
    def test_reshape_transpose_roundtrip_grad(self):
        x = leaf(np.arange(24.0).reshape(2, 3, 4))
        y = transpose(reshape(x, (6, 4)), (1, 0))
        w = np.random.default_rng(2).normal(size=(4, 6))
        tsum(mul(y, Tensor(w))).backward()
        assert np.array_equal(x.grad, w.T.reshape(2, 3, 4))

    def test_getitem_routes_grad_to_slice(self):
        x = leaf(np.zeros((5, 3)))
        tsum(getitem(x, (slice(1, 3), slice(None)))).backward()
        expect = np.zeros((5, 3))
        expect[1:3] = 1.0
        assert np.array_equal(x.grad, expect)

    def test_concat_splits_grad(self):
        a = leaf(np.zeros((2, 2)))
        b = leaf(np.zeros((3, 2)))
        y = concat([a, b], axis=0)
        w = np.arange(10.0).reshape(5, 2)
        tsum(mul(y, Tensor(w))).backward()
        assert np.array_equal(a.grad, w[:2])
        assert np.array_equal(b.grad, w[2:])

    def test_stack_splits_grad(self):
        a = leaf(np.ones(3))
        b = leaf(np.ones(3))
        y = stack([a, b], axis=0)
        w = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        tsum(mul(y, Tensor(w))).backward()
        assert np.array_equal(a.grad, w[0])
        assert np.array_equal(b.grad, w[1])


class TestGraphControl:
    def test_no_grad_builds_no_graph(self):
        x = leaf(2.0)
        with no_grad():
            y = mul(x, x)
        assert not y.requires_grad
        assert y._parents == ()

    def test_detach_blocks_gradient(self):
        x = leaf(2.0)
        y = mul(x.detach(), x)
        y.backward()
        assert float(x.grad) == pytest.approx(2.0, abs=1e-12)  # only the live factor

    def test_constant_inputs_get_no_grad(self):
        x = leaf(1.0)
        c = Tensor(5.0)
        add(x, c).backward()
        assert c.grad is None

    def test_relu_gate(self):
        x = leaf([-2.0, -0.5, 0.5, 2.0])
        tsum(relu(x)).backward()
        assert np.array_equal(x.grad, [0.0, 0.0, 1.0, 1.0])

    def test_neg(self):
        x = leaf([1.0, -2.0])
        tsum(neg(x)).backward()
        assert np.array_equal(x.grad, [-1.0, -1.0])


class TestModes:
    def test_strict_finite_raises_on_nan(self):
        with strict_finite(), np.errstate(divide="ignore"):
            x = leaf(0.0)
            with pytest.raises(NonFiniteError):
                from dualdet.numerics import div
                div(Tensor(1.0), mul(x, 0.0))

    def test_precision_context_switches_dtype(self):
        with precision("float32"):
            t = Tensor(np.zeros(3))
            assert t.dtype == np.float32
        t2 = Tensor(np.zeros(3))
        assert t2.dtype == np.float64
