"""Counter-based splittable PRNG.

All scene randomness flows through this generator so that a scene is a pure
function of its integer seed.  The core is the splitmix64 finalizer applied to
``key + (counter+1) * GOLDEN`` (64-bit wrapping arithmetic), which makes the
i-th draw independent of how earlier draws were batched: drawing 100 values one
at a time and drawing them as one array of 100 produce identical streams.

Streams are split by hashing a tag into a child key, so independent consumers
(object placement, lidar noise, weight init, ...) never share counters.
"""

from __future__ import annotations

import math

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_INV_2_53 = 1.0 / float(1 << 53)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on uint64 arrays (wrapping)."""
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


class Rng:
    """Deterministic splittable generator over a 64-bit key."""

    def __init__(self, key: int):
        self.key = _U64(key & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def split(self, tag: int) -> "Rng":
        """Derive an independent child stream from an integer tag."""
        with np.errstate(over="ignore"):
            t = _mix64(np.asarray([(_U64(tag & 0xFFFFFFFFFFFFFFFF) + _U64(1)) * _GOLDEN],
                                  dtype=np.uint64))[0]
            child = _mix64(np.asarray([(self.key + _GOLDEN) ^ t], dtype=np.uint64))[0]
        return Rng(int(child))

    def u64(self, n: int | None = None):
        """Next raw 64-bit draw(s); n=None gives a python int, else an array."""
        count = 1 if n is None else int(n)
        idx = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            out = _mix64(self.key + idx * _GOLDEN)
        if n is None:
            return int(out[0])
        return out

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None) -> np.ndarray | float:
        """Uniform doubles in [lo, hi) built from the top 53 bits."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.u64(n) >> _U64(11)).astype(np.float64) * _INV_2_53
        out = lo + (hi - lo) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        """Box-Muller normals; consumes two uniforms per pair."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        raw = self.u64(2 * pairs)
        # u1 in (0, 1] so the log is finite
        u1 = ((raw[:pairs] >> _U64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (raw[pairs:] >> _U64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = mean + std * z
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def randint(self, n: int, size=None):
        """Integers in [0, n). Modulo bias is negligible for n << 2^64."""
        if n <= 0:
            raise ValueError("randint needs n > 0")
        k = 1 if size is None else int(np.prod(size))
        out = (self.u64(k) % _U64(n)).astype(np.int64)
        if size is None:
            return int(out[0])
        return out.reshape(size)

    def shuffle(self, seq: list) -> list:
        """Fisher-Yates; returns a new shuffled list."""
        out = list(seq)
        for i in range(len(out) - 1, 0, -1):
            j = self.randint(i + 1)
            out[i], out[j] = out[j], out[i]
        return out
