"""Platform-independent seeded generator.

The stream is SplitMix64 used in counter mode: draw ``i`` (0-based) of a
generator seeded with ``s`` is ``mix(s + (i + 1) * 0x9E3779B97F4A7C15)``
with the standard SplitMix64 finaliser::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

all arithmetic modulo 2**64. Uniform doubles take the top 53 bits:
``(z >> 11) * 2**-53``. Because every draw depends only on the seed and its
index, blocks can be generated vectorised and the sequence is identical on
every platform.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Deterministic 64-bit generator; ``state`` is the number of draws made."""

    def __init__(self, seed: int = 42):
        self.seed = int(seed) & _MASK64
        self.state = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.state + 1, self.state + 1 + n, dtype=np.uint64)
        self.state += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * _GOLDEN)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def integers(self, high: int, shape=()) -> np.ndarray:
        """Integers in ``[0, high)``."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return np.minimum((u * high).astype(np.int64), high - 1).reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals by Box-Muller on pairs of uniforms."""
        n = int(np.prod(shape, dtype=np.int64))
        u1 = self.uniform(shape=(n,))
        u2 = self.uniform(shape=(n,))
        r = np.sqrt(-2.0 * np.log1p(-u1))
        return (r * np.cos(2.0 * np.pi * u2)).reshape(shape)

    def spawn(self, key: int) -> "Rng":
        """Independent child stream derived from this seed and ``key``."""
        with np.errstate(over="ignore"):
            child = _mix(np.array([self.seed ^ (int(key) & _MASK64)], dtype=np.uint64)
                         + _GOLDEN)[0]
        return Rng(int(child))
