"""SplitMix64 counter-based random streams.

The synthetic generator must be reproducible across platforms and languages,
so it does not rely on library PRNGs whose algorithms may change. Each stream
is keyed by ``(seed, name)``; the i-th 64-bit output of a stream is

    z = key + (i + 1) * 0x9E3779B97F4A7C15            (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

where ``key = mix(seed ^ fnv1a64(name))``. Uniform doubles use the top 53
bits; normals use the Box-Muller cosine branch on consecutive pairs.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK
    return h


class Stream:
    """A named, seeded sequence of 64-bit outputs with a running counter."""

    def __init__(self, seed: int, name: str = ""):
        raw = np.array([(int(seed) ^ fnv1a64(name)) & _MASK], dtype=np.uint64)
        with np.errstate(over="ignore"):
            self._key = _mix(raw)[0]
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(self._key + idx * _GAMMA)

    def uniform(self, n: int | None = None, low: float = 0.0, high: float = 1.0):
        size = 1 if n is None else n
        u = (self.raw(size) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        out = low + (high - low) * u
        return float(out[0]) if n is None else out

    def normal(self, n: int | None = None) -> np.ndarray | float:
        size = 1 if n is None else n
        u = self.uniform(2 * size)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u[1::2])
        return float(z[0]) if n is None else z

    def integers(self, low: int, high: int, n: int | None = None):
        """Integers in ``[low, high)``."""
        if high <= low:
            raise ValueError("empty integer range")
        u = self.uniform(1 if n is None else n)
        out = low + np.floor(u * (high - low)).astype(np.int64)
        out = np.minimum(out, high - 1)
        return int(out[0]) if n is None else out

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates driven by the stream
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for i in range(n - 1, 0, -1):
            j = min(int(u[n - 1 - i] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
