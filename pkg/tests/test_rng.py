"""Tests for the counter-based splittable PRNG."""

import numpy as np

from dualdet.rng import Rng


class TestDeterminism:
    def test_same_seed_same_stream(self):
        a = Rng(42).uniform(size=100)
        b = Rng(42).uniform(size=100)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = Rng(1).uniform(size=100)
        b = Rng(2).uniform(size=100)
        assert not np.array_equal(a, b)

    def test_batching_invariance(self):
        """Drawing one-at-a-time equals drawing the whole batch."""
        r1 = Rng(7)
        single = np.array([r1.uniform() for _ in range(50)])
        batch = Rng(7).uniform(size=50)
        assert np.array_equal(single, batch)

    def test_u64_batching_invariance(self):
        r1 = Rng(11)
        single = np.array([r1.u64() for _ in range(20)], dtype=np.uint64)
        batch = Rng(11).u64(20)
        assert np.array_equal(single, batch)

    def test_counter_advances(self):
        r = Rng(3)
        first = r.uniform(size=10)
        second = r.uniform(size=10)
        assert not np.array_equal(first, second)


class TestSplit:
    def test_split_independent_of_parent_counter(self):
        """Children depend on the key and tag only, not on draws so far."""
        r1 = Rng(9)
        r1.uniform(size=13)
        r2 = Rng(9)
        a = r1.split(5).uniform(size=8)
        b = r2.split(5).uniform(size=8)
        assert np.array_equal(a, b)

    def test_split_tags_distinct(self):
        r = Rng(9)
        streams = [r.split(t).uniform(size=16) for t in range(10)]
        for i in range(10):
            for j in range(i + 1, 10):
                assert not np.array_equal(streams[i], streams[j])

    def test_split_does_not_disturb_parent(self):
        a = Rng(4)
        b = Rng(4)
        a.split(1)
        assert np.array_equal(a.uniform(size=6), b.uniform(size=6))


class TestDistributions:
    def test_uniform_range(self):
        u = Rng(0).uniform(2.0, 5.0, size=10_000)
        assert u.min() >= 2.0 and u.max() < 5.0
        # mean of U(2,5) is 3.5, sd of the mean ~ 3/sqrt(12)/100 ~ 0.0087
        assert abs(u.mean() - 3.5) < 0.05

    def test_normal_moments(self):
        z = Rng(1).normal(size=20_000)
        assert abs(z.mean()) < 0.03
        assert abs(z.std() - 1.0) < 0.03

    def test_normal_mean_std_args(self):
        z = Rng(2).normal(size=20_000, mean=-3.0, std=0.5)
        assert abs(z.mean() + 3.0) < 0.02
        assert abs(z.std() - 0.5) < 0.02

    def test_randint_bounds_and_coverage(self):
        v = Rng(3).randint(7, size=5_000)
        assert v.min() == 0 and v.max() == 6
        counts = np.bincount(v, minlength=7)
        # each bucket expects ~714; allow a wide band
        assert counts.min() > 500

    def test_randint_rejects_nonpositive(self):
        import pytest
        with pytest.raises(ValueError):
            Rng(0).randint(0)

    def test_shuffle_is_permutation(self):
        items = list(range(30))
        out = Rng(5).shuffle(items)
        assert sorted(out) == items
        assert out != items  # astronomically unlikely to be identity
        assert items == list(range(30))  # input untouched

    def test_shuffle_deterministic(self):
        assert Rng(8).shuffle(list(range(12))) == Rng(8).shuffle(list(range(12)))


class TestBitQuality:
    def test_no_short_cycles(self):
        """First 4096 raw draws from one key are all distinct."""
        raw = Rng(123).u64(4096)
        assert len(set(raw.tolist())) == 4096

    def test_bit_balance(self):
        """Each of the 64 bit positions is set about half the time."""
        raw = Rng(77).u64(4096)
        bits = ((raw[:, None] >> np.arange(64, dtype=np.uint64)) & np.uint64(1))
        frac = bits.astype(np.float64).mean(axis=0)
        assert np.all(np.abs(frac - 0.5) < 0.05)
