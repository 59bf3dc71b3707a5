"""Deterministic, splittable random streams.

Every stochastic piece of the lab (weight init, shuffling, data synthesis,
augmentation) draws from an Rng. Rng wraps numpy's counter-based Philox
bit generator, so identical seed + identical call sequence gives identical
output on every platform, and child streams derived with split() are
statistically independent of the parent and of each other.
"""

from __future__ import annotations

import numpy as np

_MIX = 0x9E3779B97F4A7C15  # 64-bit golden-ratio increment (splitmix64)
_MASK = (1 << 64) - 1


def _mix64(z: int) -> int:
    z = (z + _MIX) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


class Rng:
    """Seeded random stream with cheap derived sub-streams.

    split(*indices) derives a child whose seed is a hash of the parent seed
    and the index path, so e.g. per-sample augmentation streams do not
    depend on iteration order.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(seed) & _MASK
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def split(self, *indices: int) -> "Rng":
        z = self.seed
        for ix in indices:
            z = _mix64(z ^ _mix64(int(ix) & _MASK))
        return Rng(z)

    # thin pass-throughs; everything funnels through the one generator so
    # the call sequence fully determines the stream
    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def beta(self, a: float, b: float) -> float:
        return float(self._gen.beta(a, b))
