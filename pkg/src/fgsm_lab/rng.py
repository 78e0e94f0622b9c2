"""splitmix64 pseudo-random stream.

The generator state after ``k`` draws is ``seed + k * GAMMA (mod 2**64)`` and
each output is a pure mix of that state, so blocks of draws vectorise cleanly
in numpy while producing exactly the scalar sequence.
"""
from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Single-owner splitmix64 stream. Identical seeds give identical streams."""

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def __repr__(self):
        return f"Rng(state={self.state:#018x})"

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64(self, n: int) -> np.ndarray:
        """The next ``n`` raw outputs as a uint64 array."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GAMMA)
            states = steps + np.uint64(self.state)
            out = _mix64_vec(states)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def random(self, n: int | None = None):
        """Uniform doubles in [0, 1) built from the top 53 bits."""
        if n is None:
            return (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float, n: int | None = None):
        u = self.random(n)
        return lo + (hi - lo) * u

    def below(self, bound: int) -> int:
        """Integer in [0, bound), by 128-bit multiply-shift."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.next_u64() * bound) >> 64

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return np.asarray(idx, dtype=np.int64)

    def child(self, index: int) -> "Rng":
        """Independent stream for parallel work item ``index``."""
        return Rng(mix64(self.state ^ (int(index) & MASK64)))


def derive_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed through the splitmix64 mixer."""
    z = 0
    for p in parts:
        z = mix64((z ^ (int(p) & MASK64)) + GAMMA)
    return z
