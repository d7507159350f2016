"""Portable deterministic randomness for splits and subsampling.

Every sampling decision in this package flows through the SplitMix64
generator below, so partitions and subsamples are reproducible bit-for-bit
across platforms and library versions. The algorithm is pinned:

* stream: SplitMix64 (Steele, Lea & Flood 2014), seeded with the user seed
  reduced mod 2**64;
* bounded draw: ``(next_u64() * n) >> 64`` (multiply-shift; bias < 2**-64);
* shuffle: Fisher-Yates from the last index down.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


class SplitMix64:
    """Pinned 64-bit generator; do not change constants."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        return (self.next_u64() * n) >> 64

    def shuffled_indices(self, n: int) -> list[int]:
        """Fisher-Yates permutation of range(n)."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx


def permutation(n: int, seed: int) -> list[int]:
    return SplitMix64(seed).shuffled_indices(n)


def sample_indices(n: int, k: int, seed: int) -> list[int]:
    """First k indices of the seeded permutation of range(n), in draw order."""
    if not 0 <= k <= n:
        raise ValueError(f"cannot sample {k} from {n}")
    return permutation(n, seed)[:k]
