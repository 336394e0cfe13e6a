"""Adam update rule against a hand-rolled trace, plus the one-cycle schedule."""

import math

import numpy as np
import pytest

from dualdet.numerics import (Adam, AdamState, Tensor, adam_step, mul,
                              one_cycle, tsum)


class TestAdamStep:
    def test_matches_reference_trace(self):
        """Three steps of Adam on a fixed gradient sequence, checked against
        an independent reimplementation of the textbook update."""
        rng = np.random.default_rng(0)
        p0 = rng.normal(size=(4,))
        grads = [rng.normal(size=(4,)) for _ in range(3)]
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8

        p = Tensor(p0.copy(), requires_grad=True)
        state = AdamState()
        for g in grads:
            adam_step([p], [g], state, lr, b1, b2, eps)

        # reference
        ref = p0.copy()
        m = np.zeros(4)
        v = np.zeros(4)
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            ref = ref - lr * mhat / (np.sqrt(vhat) + eps)
        assert np.allclose(p.data, ref, atol=1e-15)
        assert state.step == 3

    def test_first_step_moves_by_about_lr(self):
        """Bias correction makes |update| ~ lr on step one for any grad scale."""
        for scale in (1e-4, 1.0, 1e4):
            p = Tensor(np.zeros(1), requires_grad=True)
            adam_step([p], [np.array([scale])], AdamState(), lr=0.01)
            assert abs(p.data[0] + 0.01) < 1e-6  # moved -lr, sign of grad

    def test_none_gradient_skips_param(self):
        p = Tensor(np.ones(2), requires_grad=True)
        q = Tensor(np.ones(2), requires_grad=True)
        adam_step([p, q], [None, np.ones(2)], AdamState(), lr=0.1)
        assert np.array_equal(p.data, np.ones(2))
        assert not np.array_equal(q.data, np.ones(2))

    def test_length_mismatch_raises(self):
        p = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(ValueError):
            adam_step([p], [], AdamState(), lr=0.1)


class TestAdamWrapper:
    def test_step_consumes_tensor_grads(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        opt = Adam([p])
        loss = mul(p, p)
        loss.backward()
        opt.step(lr=0.1)
        assert p.data[0] < 2.0
        opt.zero_grad()
        assert p.grad is None

    def test_weight_decay_shrinks_params(self):
        p = Tensor(np.array([10.0]), requires_grad=True)
        opt = Adam([p], weight_decay=0.5)
        p.grad = np.array([0.0])
        opt.step(lr=0.1)
        # decay factor (1 - 0.1*0.5) applied before the (zero-grad) update
        assert p.data[0] == pytest.approx(9.5, abs=1e-9)

    def test_state_roundtrip(self):
        rng = np.random.default_rng(1)
        p = Tensor(rng.normal(size=3), requires_grad=True)
        opt = Adam([p])
        for _ in range(4):
            p.grad = rng.normal(size=3)
            opt.step(lr=1e-2)
        arrays = opt.state_arrays()

        q = Tensor(p.data.copy(), requires_grad=True)
        opt2 = Adam([q])
        opt2.load_state_arrays({k: v.copy() for k, v in arrays.items()})
        g = rng.normal(size=3)
        p.grad = g.copy()
        q.grad = g.copy()
        opt.step(lr=1e-2)
        opt2.step(lr=1e-2)
        assert np.array_equal(p.data, q.data)

    def test_load_state_rejects_wrong_count(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        q = Tensor(np.zeros(2), requires_grad=True)
        opt = Adam([p, q])
        with pytest.raises(ValueError):
            opt.load_state_arrays({"adam.step": np.array([1.0]),
                                   "adam.m.0": np.zeros(2),
                                   "adam.v.0": np.zeros(2)})

    def test_converges_on_quadratic(self):
        p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = Adam([p])
        for _ in range(400):
            opt.zero_grad()
            tsum(mul(p, p)).backward()
            opt.step(lr=0.05)
        assert np.all(np.abs(p.data) < 1e-3)


class TestOneCycle:
    def test_endpoints_and_peak(self):
        total = 101
        max_lr, div, final = 1e-3, 10.0, 100.0
        lr0, b0 = one_cycle(0, total, max_lr, div, final, pct_up=0.3)
        assert lr0 == pytest.approx(max_lr / div, rel=1e-12)
        assert b0 == pytest.approx(0.95, rel=1e-12)
        # peak sits exactly at pct_up of the run
        lrp, bp = one_cycle(30, total, max_lr, div, final, pct_up=0.3)
        assert lrp == pytest.approx(max_lr, rel=1e-9)
        assert bp == pytest.approx(0.85, rel=1e-9)
        lre, be = one_cycle(100, total, max_lr, div, final, pct_up=0.3)
        assert lre == pytest.approx(max_lr / final, rel=1e-9)
        assert be == pytest.approx(0.95, rel=1e-9)

    def test_monotone_up_then_down(self):
        total = 200
        lrs = [one_cycle(s, total)[0] for s in range(total)]
        peak = int(np.argmax(lrs))
        assert all(lrs[i] <= lrs[i + 1] + 1e-15 for i in range(peak))
        assert all(lrs[i] >= lrs[i + 1] - 1e-15 for i in range(peak, total - 1))

    def test_beta1_mirrors_lr(self):
        """beta1 is lowest exactly where lr peaks."""
        total = 150
        lrs, b1s = zip(*(one_cycle(s, total) for s in range(total)))
        assert int(np.argmax(lrs)) == int(np.argmin(b1s))

    def test_step_clamped_to_range(self):
        assert one_cycle(-5, 100) == one_cycle(0, 100)
        assert one_cycle(500, 100) == one_cycle(99, 100)

    def test_degenerate_single_step(self):
        lr, b1 = one_cycle(0, 1)
        assert lr == 1e-3 and b1 == 0.85
