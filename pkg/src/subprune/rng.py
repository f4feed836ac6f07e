"""Seeded random number generation with a fixed, portable algorithm.

All randomness in this package (stochastic greedy sampling, random
baselines, synthetic data generation) flows through :class:`Rng`, a
SplitMix64 generator.  The algorithm is fully specified by its constants,
so any implementation in any language reproduces identical streams from
the same seed:

    state  <- state + 0x9E3779B97F4A7C15          (mod 2^64)
    z      <- state
    z      <- (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9  (mod 2^64)
    z      <- (z XOR (z >> 27)) * 0x94D049BB133111EB  (mod 2^64)
    output <- z XOR (z >> 31)

Uniform doubles take the top 53 bits of one output word.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class Rng:
    """SplitMix64 stream seeded with a 64-bit integer."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError(f"upper bound must be positive, got {n}")
        span = _MASK64 - (_MASK64 % n)
        while True:
            v = self.next_u64()
            if v < span:
                return v % n

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), by partial Fisher-Yates.

        The result is sorted ascending so that downstream argmax scans
        resolve ties toward the lowest index.
        """
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} of {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return sorted(pool[:k])
