"""Value oracles and finite-difference sweeps for the differentiable ops.

Every gradient check uses a randomly *weighted* sum of the output as the
scalar functional. A plain unweighted sum can be degenerate (the sum of a
layer-norm output is identically ~0, so its true gradient vanishes and the
check would only measure finite-difference noise).
"""

import math

import numpy as np
import pytest

from dualdet.numerics import (AttentionConfig, Tensor, absolute, add, avgpool2,
                              bilinear_sample, bilinear_sample_many,
                              bilinear_sample_nd, check_gradients, concat,
                              conv2d, div, exp, gather_rc, gather_rows,
                              getitem, layer_norm, linear, log, masked_mha,
                              masked_softmax, matmul, mul, pow_const, relu,
                              reshape, scatter_rc, segment_max, sigmoid,
                              sinusoidal_encoding, softmax, softmax_axis,
                              softplus, sqrt, stack, sub, tanh, tmean,
                              transpose, tsum, where_mask)


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def make_weighted(rng):
    """Random-weighted scalar functional (see module docstring).

    Weights are drawn once per call site and cached, so repeated evaluations
    during finite differencing all see the same deterministic functional.
    """
    cache = {}

    def weighted(out, key=0):
        if key not in cache:
            cache[key] = Tensor(rng.normal(size=out.shape))
        return tsum(mul(out, cache[key]))

    return weighted


def sweep(make, n=20, tol=1e-5, seed=0):
    """Run n random gradient checks; make(rng) -> (f, inputs)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        f, inputs = make(rng)
        worst = max(worst, check_gradients(f, inputs))
    assert worst < tol, f"worst relative error {worst:.3e}"
    return worst


class TestElementwiseOracles:
    def test_softmax_quarters(self):
        """softmax([0, ln 3]) = [1, 3]/4 = [0.25, 0.75]."""
        out = softmax(leaf([0.0, math.log(3.0)]))
        assert np.allclose(out.data, [0.25, 0.75], atol=1e-15)

    def test_sigmoid_at_zero(self):
        assert sigmoid(leaf(0.0)).item() == pytest.approx(0.5, abs=1e-15)

    def test_softplus_at_zero_is_ln2(self):
        assert softplus(leaf(0.0)).item() == pytest.approx(math.log(2.0), abs=1e-15)

    def test_softplus_stable_for_large_inputs(self):
        out = softplus(leaf([500.0, -500.0]))
        assert out.data[0] == pytest.approx(500.0)
        assert out.data[1] == pytest.approx(0.0, abs=1e-200)
        assert np.all(np.isfinite(out.data))

    def test_exp_log_roundtrip(self):
        x = np.array([0.1, 1.0, 7.3])
        assert np.allclose(log(exp(leaf(x))).data, x, atol=1e-12)

    def test_pow_sqrt_consistency(self):
        x = np.array([0.25, 4.0, 9.0])
        assert np.allclose(sqrt(leaf(x)).data, pow_const(leaf(x), 0.5).data,
                           atol=1e-12)

    def test_absolute_and_tanh(self):
        assert np.array_equal(absolute(leaf([-2.0, 3.0])).data, [2.0, 3.0])
        assert tanh(leaf(0.0)).item() == 0.0

    def test_div_sub(self):
        a, b = leaf([6.0, 8.0]), leaf([2.0, 4.0])
        assert np.array_equal(div(a, b).data, [3.0, 2.0])
        assert np.array_equal(sub(a, b).data, [4.0, 4.0])

    def test_tmean_matches_numpy(self):
        x = np.arange(12.0).reshape(3, 4)
        assert tmean(leaf(x)).item() == pytest.approx(x.mean())
        assert np.allclose(tmean(leaf(x), axis=0).data, x.mean(axis=0))


class TestSoftmaxProperties:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        out = softmax_axis(leaf(rng.normal(size=(5, 7))), axis=-1)
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=9)
        a = softmax(leaf(x)).data
        b = softmax(leaf(x + 123.4)).data
        assert np.allclose(a, b, atol=1e-12)

    def test_softmax_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError):
            softmax(leaf(np.zeros(0)))
        with pytest.raises(ValueError):
            softmax(leaf([0.0, np.inf]))

    def test_masked_positions_get_zero_weight(self):
        rng = np.random.default_rng(2)
        x = leaf(rng.normal(size=(4, 6)))
        mask = rng.uniform(size=(4, 6)) > 0.4
        mask[:, 0] = True  # keep every row non-empty
        w = masked_softmax(x, mask).data
        assert np.all(w[~mask] == 0.0)
        assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-12)

    def test_fully_masked_row_is_all_zero(self):
        x = leaf(np.ones((2, 3)))
        mask = np.array([[True, True, True], [False, False, False]])
        w = masked_softmax(x, mask).data
        assert np.allclose(w[0], 1.0 / 3.0, atol=1e-15)
        assert np.all(w[1] == 0.0)

    def test_mask_invariant_to_masked_logits(self):
        """Values at masked positions must not influence the result."""
        rng = np.random.default_rng(3)
        x = rng.normal(size=(3, 5))
        mask = rng.uniform(size=(3, 5)) > 0.5
        mask[:, 2] = True
        y = x.copy()
        y[~mask] = 1e6
        a = masked_softmax(leaf(x), mask).data
        b = masked_softmax(leaf(y), mask).data
        assert np.array_equal(a, b)


class TestAttentionOracle:
    def brute_force(self, q, k, v, mask, heads):
        """Per-head softmax(QK^T/sqrt(d))V with masked keys removed."""
        lq, c = q.shape[-2:]
        lk = k.shape[-2]
        d = c // heads
        out = np.zeros((lq, c))
        for h in range(heads):
            qs = q[..., h * d:(h + 1) * d]
            ks = k[..., h * d:(h + 1) * d]
            vs = v[..., h * d:(h + 1) * d]
            for i in range(lq):
                logits = qs[i] @ ks.T / math.sqrt(d)
                keep = np.nonzero(mask[i])[0]
                if keep.size == 0:
                    continue
                z = np.exp(logits[keep] - logits[keep].max())
                w = z / z.sum()
                out[i, h * d:(h + 1) * d] = w @ vs[keep]
        return out

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            q = rng.normal(size=(4, 8))
            k = rng.normal(size=(5, 8))
            v = rng.normal(size=(5, 8))
            mask = rng.uniform(size=(4, 5)) > 0.3
            cfg = AttentionConfig(heads=2, model_dim=8)
            got = masked_mha(leaf(q), leaf(k), leaf(v), mask, cfg).data
            want = self.brute_force(q, k, v, mask, heads=2)
            assert np.allclose(got, want, atol=1e-12)

    def test_fully_masked_query_is_zero(self):
        rng = np.random.default_rng(5)
        q, k, v = (leaf(rng.normal(size=(3, 4))) for _ in range(3))
        mask = np.ones((3, 3), dtype=bool)
        mask[1] = False
        out = masked_mha(q, k, v, mask, AttentionConfig(1, 4)).data
        assert np.all(out[1] == 0.0)
        assert np.any(out[0] != 0.0)

    def test_masked_value_rows_are_ignored(self):
        rng = np.random.default_rng(6)
        q = rng.normal(size=(2, 4))
        k = rng.normal(size=(4, 4))
        v = rng.normal(size=(4, 4))
        mask = np.array([[True, True, False, False]] * 2)
        v2 = v.copy()
        v2[2:] = 1e9
        cfg = AttentionConfig(2, 4)
        a = masked_mha(leaf(q), leaf(k), leaf(v), mask, cfg).data
        b = masked_mha(leaf(q), leaf(k), leaf(v2), mask, cfg).data
        assert np.array_equal(a, b)

    def test_batched_lead_dims_match_loop(self):
        rng = np.random.default_rng(7)
        q = rng.normal(size=(3, 2, 4, 8))
        k = rng.normal(size=(3, 2, 5, 8))
        v = rng.normal(size=(3, 2, 5, 8))
        mask = rng.uniform(size=(3, 2, 4, 5)) > 0.2
        cfg = AttentionConfig(4, 8)
        got = masked_mha(leaf(q), leaf(k), leaf(v), mask, cfg).data
        for i in range(3):
            for j in range(2):
                one = masked_mha(leaf(q[i, j]), leaf(k[i, j]), leaf(v[i, j]),
                                 mask[i, j], cfg).data
                assert np.allclose(got[i, j], one, atol=1e-12)

    def test_rejects_mismatched_channels(self):
        with pytest.raises(ValueError):
            masked_mha(leaf(np.zeros((2, 6))), leaf(np.zeros((2, 6))),
                       leaf(np.zeros((2, 6))), np.ones((2, 2), bool),
                       AttentionConfig(2, 8))


class TestBilinearOracles:
    def test_center_of_2x2(self):
        m = leaf(np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None])
        out = bilinear_sample(m, (0.5, 0.5))
        assert out.data[0] == pytest.approx(2.5, abs=1e-15)

    def test_integer_points_exact(self):
        rng = np.random.default_rng(8)
        m = rng.normal(size=(4, 5, 3))
        rows = np.array([0.0, 3.0, 2.0])
        cols = np.array([0.0, 4.0, 1.0])
        out = bilinear_sample_many(leaf(m), rows, cols).data
        want = m[rows.astype(int), cols.astype(int)]
        assert np.allclose(out, want, atol=1e-15)

    def test_out_of_range_returns_zero(self):
        m = leaf(np.arange(6.0).reshape(2, 3)[:, :, None] + 1.0)
        out = bilinear_sample_many(m, np.array([-5.0, 10.0, 1.0]),
                                   np.array([-5.0, 10.0, 2.0])).data
        assert out[0, 0] == 0.0
        assert out[1, 0] == 0.0
        assert out[2, 0] == 6.0  # in-range corner still exact

    def test_out_of_range_gets_no_gradient(self):
        m = leaf(np.ones((3, 3, 1)))
        tsum(bilinear_sample_many(m, np.array([-2.0]), np.array([1.0]))).backward()
        assert np.all(m.grad == 0.0)

    def test_bilinear_is_linear_along_a_row(self):
        m = leaf(np.array([[0.0, 10.0]])[:, :, None])
        cols = np.linspace(0.0, 1.0, 11)
        out = bilinear_sample_many(m, np.zeros(11), cols).data[:, 0]
        assert np.allclose(out, 10.0 * cols, atol=1e-12)

    def test_nd_matches_per_batch_many(self):
        rng = np.random.default_rng(9)
        m = rng.normal(size=(3, 4, 5, 2))
        bidx = rng.integers(0, 3, size=40)
        rows = rng.uniform(-1, 4.5, size=40)
        cols = rng.uniform(-1, 5.5, size=40)
        got = bilinear_sample_nd(leaf(m), bidx, rows, cols).data
        for b in range(3):
            sel = bidx == b
            want = bilinear_sample_many(leaf(m[b]), rows[sel], cols[sel]).data
            assert np.allclose(got[sel], want, atol=1e-15)

    def test_tensor_coordinates_are_differentiable(self):
        m = np.arange(12.0).reshape(3, 4)[:, :, None]
        r = leaf([1.3])
        c = leaf([2.2])
        out = bilinear_sample_many(Tensor(m), r, c)
        out.backward()
        # d(sample)/d(row) = vertical gradient of the map = 4 per row step
        assert float(r.grad[0]) == pytest.approx(4.0, abs=1e-12)
        assert float(c.grad[0]) == pytest.approx(1.0, abs=1e-12)


class TestGatherScatter:
    def test_gather_rows_repeated_indices_accumulate(self):
        a = leaf(np.zeros((3, 2)))
        idx = np.array([1, 1, 1, 0])
        tsum(gather_rows(a, idx)).backward()
        assert np.array_equal(a.grad, [[1.0, 1.0], [3.0, 3.0], [0.0, 0.0]])

    def test_gather_rc_values(self):
        a = np.arange(24.0).reshape(4, 6)
        rows = np.array([0, 3, 2])
        cols = np.array([5, 0, 2])
        out = gather_rc(leaf(a), rows, cols).data
        assert np.array_equal(out, a[rows, cols])

    def test_scatter_rc_matches_add_at(self):
        rng = np.random.default_rng(10)
        vals = rng.normal(size=(20, 3))
        rows = rng.integers(0, 4, size=20)
        cols = rng.integers(0, 5, size=20)
        got = scatter_rc(leaf(vals), rows, cols, (4, 5)).data
        want = np.zeros((4, 5, 3))
        np.add.at(want, (rows, cols), vals)
        assert np.allclose(got, want, atol=1e-15)

    def test_scatter_gather_adjoint(self):
        """<scatter(v), g> == <v, gather(g)> for random v, g."""
        rng = np.random.default_rng(11)
        vals = rng.normal(size=(15, 2))
        rows = rng.integers(0, 3, size=15)
        cols = rng.integers(0, 4, size=15)
        g = rng.normal(size=(3, 4, 2))
        lhs = float((scatter_rc(leaf(vals), rows, cols, (3, 4)).data * g).sum())
        rhs = float((vals * g[rows, cols]).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_segment_max_values(self):
        a = np.array([[1.0], [5.0], [2.0], [7.0], [0.0]])
        seg = np.array([0, 0, 1, 1, 1])
        out = segment_max(leaf(a), seg, 2).data
        assert np.array_equal(out[:, 0], [5.0, 7.0])

    def test_segment_max_rejects_empty_segments(self):
        with pytest.raises(ValueError):
            segment_max(leaf(np.ones((3, 1))), np.array([0, 0, 1]), 3)

    def test_segment_max_grad_goes_to_argmax(self):
        a = leaf(np.array([[1.0, 9.0], [5.0, 2.0]]))
        tsum(segment_max(a, np.array([0, 0]), 1)).backward()
        assert np.array_equal(a.grad, [[0.0, 1.0], [1.0, 0.0]])

    def test_segment_max_tie_routes_to_first_row(self):
        a = leaf(np.array([[4.0], [4.0], [1.0]]))
        tsum(segment_max(a, np.array([0, 0, 0]), 1)).backward()
        assert np.array_equal(a.grad[:, 0], [1.0, 0.0, 0.0])


class TestConvPool:
    def test_conv2d_matches_brute_force(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(5, 6, 2))
        w = rng.normal(size=(3, 3, 2, 4))
        b = rng.normal(size=4)
        got = conv2d(leaf(x), leaf(w), leaf(b)).data
        pad = np.pad(x, ((1, 1), (1, 1), (0, 0)))
        want = np.zeros((5, 6, 4))
        for i in range(5):
            for j in range(6):
                patch = pad[i:i + 3, j:j + 3]
                want[i, j] = np.tensordot(patch, w, axes=3) + b
        assert np.allclose(got, want, atol=1e-12)

    def test_conv2d_1x1_is_linear(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(4, 4, 3))
        w = rng.normal(size=(1, 1, 3, 2))
        got = conv2d(leaf(x), leaf(w)).data
        assert np.allclose(got, x @ w[0, 0], atol=1e-13)

    def test_avgpool2_hand_value(self):
        x = np.arange(16.0).reshape(4, 4)[:, :, None]
        out = avgpool2(leaf(x)).data[:, :, 0]
        assert np.array_equal(out, [[2.5, 4.5], [10.5, 12.5]])

    def test_avgpool2_drops_odd_edge(self):
        x = np.arange(15.0).reshape(3, 5)[:, :, None]
        assert avgpool2(leaf(x)).shape == (1, 2, 1)

    def test_avgpool2_batched_matches_loop(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(3, 6, 8, 2))
        got = avgpool2(leaf(x)).data
        for i in range(3):
            assert np.allclose(got[i], avgpool2(leaf(x[i])).data, atol=1e-15)


class TestSinusoidalEncoding:
    def test_zero_position(self):
        enc = sinusoidal_encoding(np.zeros(1), 8)[0]
        assert np.array_equal(enc[0::2], np.zeros(4))   # sines
        assert np.array_equal(enc[1::2], np.ones(4))    # cosines

    def test_frequency_formula(self):
        pos = np.array([3.7])
        dim = 10
        enc = sinusoidal_encoding(pos, dim)[0]
        for i in range(dim // 2):
            freq = 1.0 / 10000.0 ** (2 * i / dim)
            assert enc[2 * i] == pytest.approx(math.sin(3.7 * freq), abs=1e-12)
            assert enc[2 * i + 1] == pytest.approx(math.cos(3.7 * freq), abs=1e-12)

    def test_unit_norm_rows(self):
        enc = sinusoidal_encoding(np.linspace(0, 50, 9), 16)
        assert np.allclose((enc ** 2).sum(axis=1), 8.0, atol=1e-12)


class TestLayerNormLinear:
    def test_layer_norm_output_stats(self):
        rng = np.random.default_rng(15)
        x = leaf(rng.normal(size=(6, 10)) * 3 + 2)
        g = Tensor(np.ones(10))
        b = Tensor(np.zeros(10))
        out = layer_norm(x, g, b).data
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        assert np.allclose(out.std(axis=-1), 1.0, atol=1e-3)  # eps shifts slightly

    def test_layer_norm_scale_shift(self):
        rng = np.random.default_rng(16)
        x = leaf(rng.normal(size=(4, 6)))
        g = Tensor(np.full(6, 2.0))
        b = Tensor(np.full(6, -1.0))
        base = layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6))).data
        out = layer_norm(x, g, b).data
        assert np.allclose(out, 2.0 * base - 1.0, atol=1e-12)

    def test_linear_bias(self):
        x = leaf(np.eye(3))
        w = leaf(np.arange(6.0).reshape(3, 2))
        b = leaf(np.array([10.0, 20.0]))
        out = linear(x, w, b).data
        assert np.allclose(out, w.data + b.data, atol=1e-15)


class TestWhereMask:
    def test_select_and_grad_routing(self):
        mask = np.array([True, False, True])
        a = leaf([1.0, 2.0, 3.0])
        b = leaf([10.0, 20.0, 30.0])
        out = where_mask(mask[:, None], reshape(a, (3, 1)), reshape(b, (3, 1)))
        tsum(out).backward()
        assert np.array_equal(out.data[:, 0], [1.0, 20.0, 3.0])
        assert np.array_equal(a.grad, [1.0, 0.0, 1.0])
        assert np.array_equal(b.grad, [0.0, 1.0, 0.0])


class TestGradientSweeps:
    """Finite-difference checks, >=20 random instances per op family."""

    def test_arithmetic_family(self):
        def make(rng):
            wf = make_weighted(rng)
            a = leaf(rng.normal(size=(3, 4)))
            b = leaf(rng.normal(size=(3, 4)) + 3.0)  # keep divisor away from 0
            f = lambda: wf(div(add(mul(a, b), sub(a, b)), b))
            return f, [a, b]
        sweep(make, n=20, seed=100)

    def test_unary_family(self):
        def make(rng):
            wf = make_weighted(rng)
            x = leaf(rng.uniform(0.3, 2.5, size=(2, 5)))
            f = lambda: wf(
                add(add(exp(mul(x, 0.3)), log(x)),
                    add(sqrt(x), add(tanh(x), add(sigmoid(x), softplus(x))))))
            return f, [x]
        sweep(make, n=20, seed=101)

    def test_pow_and_abs_family(self):
        def make(rng):
            wf = make_weighted(rng)
            x = leaf(rng.uniform(0.5, 2.0, size=(4,)) * rng.choice([-1.0, 1.0], 4))
            f = lambda: wf(add(pow_const(absolute(x), 1.7),
                               pow_const(mul(x, x), 2.0)))
            return f, [x]
        sweep(make, n=20, seed=102)

    def test_relu_family(self):
        def make(rng):
            wf = make_weighted(rng)
            # keep inputs away from the kink at 0
            x = leaf(rng.uniform(0.2, 1.0, size=(3, 4)) * rng.choice([-1.0, 1.0], (3, 4)))
            f = lambda: wf(relu(x))
            return f, [x]
        sweep(make, n=20, seed=103)

    def test_matmul_linear_family(self):
        def make(rng):
            wf = make_weighted(rng)
            x = leaf(rng.normal(size=(3, 4)))
            w = leaf(rng.normal(size=(4, 2)))
            b = leaf(rng.normal(size=2))
            f = lambda: wf(linear(x, w, b))
            return f, [x, w, b]
        sweep(make, n=20, seed=104)

    def test_batched_matmul_family(self):
        def make(rng):
            wf = make_weighted(rng)
            a = leaf(rng.normal(size=(2, 3, 4)))
            b = leaf(rng.normal(size=(2, 4, 2)))
            f = lambda: wf(matmul(a, b))
            return f, [a, b]
        sweep(make, n=20, seed=105)

    def test_softmax_family(self):
        def make(rng):
            wf = make_weighted(rng)
            x = leaf(rng.normal(size=(4, 5)))
            mask = rng.uniform(size=(4, 5)) > 0.3
            mask[:, 0] = True
            f = lambda: wf(masked_softmax(x, mask))
            return f, [x]
        sweep(make, n=20, seed=106)

    def test_layer_norm_family(self):
        def make(rng):
            wf = make_weighted(rng)
            x = leaf(rng.normal(size=(3, 6)))
            g = leaf(rng.normal(size=6))
            b = leaf(rng.normal(size=6))
            f = lambda: wf(layer_norm(x, g, b))
            return f, [x, g, b]
        sweep(make, n=20, seed=107)

    def test_attention_family(self):
        def make(rng):
            wf = make_weighted(rng)
            q = leaf(rng.normal(size=(3, 8)))
            k = leaf(rng.normal(size=(4, 8)))
            v = leaf(rng.normal(size=(4, 8)))
            mask = rng.uniform(size=(3, 4)) > 0.25
            mask[:, 0] = True
            cfg = AttentionConfig(heads=2, model_dim=8)
            f = lambda: wf(masked_mha(q, k, v, mask, cfg))
            return f, [q, k, v]
        sweep(make, n=20, seed=108)

    def test_bilinear_family(self):
        def make(rng):
            wf = make_weighted(rng)
            m = leaf(rng.normal(size=(4, 5, 2)))
            # stay off exact integer coordinates where bilinear has corners
            rows = leaf(rng.uniform(0.1, 2.9, size=6) + 0.33)
            cols = leaf(rng.uniform(0.1, 3.9, size=6) + 0.27)
            f = lambda: wf(bilinear_sample_many(m, rows, cols))
            return f, [m, rows, cols]
        sweep(make, n=20, seed=109)

    def test_bilinear_nd_family(self):
        def make(rng):
            wf = make_weighted(rng)
            m = leaf(rng.normal(size=(3, 4, 4, 2)))
            bidx = rng.integers(0, 3, size=8)
            rows = leaf(rng.uniform(0.15, 2.8, size=8))
            cols = leaf(rng.uniform(0.15, 2.8, size=8))
            f = lambda: wf(bilinear_sample_nd(m, bidx, rows, cols))
            return f, [m, rows, cols]
        sweep(make, n=20, seed=110)

    def test_gather_scatter_family(self):
        def make(rng):
            wf = make_weighted(rng)
            a = leaf(rng.normal(size=(5, 3)))
            idx = rng.integers(0, 5, size=7)
            vals = leaf(rng.normal(size=(7, 3)))
            rows = rng.integers(0, 3, size=7)
            cols = rng.integers(0, 4, size=7)
            f = lambda: add(wf(gather_rows(a, idx), key=0),
                            wf(scatter_rc(vals, rows, cols, (3, 4)), key=1))
            return f, [a, vals]
        sweep(make, n=20, seed=111)

    def test_segment_max_family(self):
        def make(rng):
            wf = make_weighted(rng)
            sizes = rng.integers(1, 5, size=3)  # compacted nonempty segments
            seg = np.repeat(np.arange(3), sizes)
            a = leaf(rng.normal(size=(int(sizes.sum()), 2)))  # floats: no ties
            f = lambda: wf(segment_max(a, seg, 3))
            return f, [a]
        sweep(make, n=20, seed=112)

    def test_conv_pool_family(self):
        def make(rng):
            wf = make_weighted(rng)
            x = leaf(rng.normal(size=(4, 4, 2)))
            w = leaf(rng.normal(size=(3, 3, 2, 2)))
            b = leaf(rng.normal(size=2))
            f = lambda: wf(avgpool2(conv2d(x, w, b)))
            return f, [x, w, b]
        sweep(make, n=20, seed=113)

    def test_structure_family(self):
        def make(rng):
            wf = make_weighted(rng)
            a = leaf(rng.normal(size=(2, 6)))
            b = leaf(rng.normal(size=(2, 6)))
            def f():
                c = concat([a, b], axis=0)
                s = stack([getitem(c, (0,)), getitem(c, (2,))], axis=0)
                return wf(transpose(reshape(s, (3, 4)), (1, 0)))
            return f, [a, b]
        sweep(make, n=20, seed=114)

    def test_reductions_family(self):
        def make(rng):
            wf = make_weighted(rng)
            x = leaf(rng.normal(size=(3, 4)))
            def f():
                a = wf(tsum(mul(x, x), axis=1, keepdims=True), key=0)
                b = wf(tmean(x, axis=0), key=1)
                return add(a, b)
            return f, [x]
        sweep(make, n=20, seed=115)


class TestGradcheckHarness:
    def test_detects_a_wrong_gradient(self):
        """The checker itself must flag an intentionally broken backward."""
        x = leaf(np.array([1.0, 2.0]))

        def f():
            out = mul(x, x)
            broken = Tensor._make(out.data.copy(), (x,),
                                  lambda g: [(x, g)])  # claims d(x^2)/dx = 1
            return tsum(broken)

        err = check_gradients(f, [x])
        assert err > 0.1
