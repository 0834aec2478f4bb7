"""Deterministic random streams shared by every stochastic component.

A stream is identified by (seed, stream_id); its SplitMix64 state starts at
seed XOR (stream_id * golden gamma). Uniforms map the top 53 bits into the
open interval (0, 1); normals use the Box-Muller cosine branch, consuming two
uniforms each and discarding the sine partner. The wire protocol fixes this
construction, so any replacement backend must agree to 1e-9 relative.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
TWO_NEG53 = 2.0 ** -53

# bump only if the draw construction itself changes
RNG_VERSION = "splitmix64-boxmuller-1"

_U64 = np.uint64


def mix64(z: int) -> int:
    """SplitMix64 output scramble of a 64-bit value."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def stream_for(label: str) -> int:
    """Map a textual label to a 64-bit stream id (FNV-1a then scrambled)."""
    h = 0xCBF29CE484222325
    for b in label.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return mix64(h)


class StreamRng:
    """One deterministic stream. Scalar and batch draws interleave freely:
    both advance the same counter, and uniforms are bit-identical either way."""

    __slots__ = ("seed", "stream_id", "_state", "calls")

    def __init__(self, seed: int, stream_id: int = 0):
        if not (0 <= seed <= MASK64 and 0 <= stream_id <= MASK64):
            raise ValueError("seed and stream_id must fit in 64 bits")
        self.seed = seed
        self.stream_id = stream_id
        self._state = (seed ^ ((stream_id * GAMMA) & MASK64)) & MASK64
        self.calls = 0  # uniforms consumed so far

    def next_u64(self) -> int:
        self._state = (self._state + GAMMA) & MASK64
        self.calls += 1
        return mix64(self._state)

    def uniform(self) -> float:
        return ((self.next_u64() >> 11) + 0.5) * TWO_NEG53

    def uniforms(self, n: int) -> np.ndarray:
        """Vectorized batch of n uniforms; same values the scalar path yields."""
        steps = np.arange(1, n + 1, dtype=_U64) * _U64(GAMMA) + _U64(self._state)
        z = steps
        z = (z ^ (z >> _U64(30))) * _U64(MIX1)
        z = (z ^ (z >> _U64(27))) * _U64(MIX2)
        z = z ^ (z >> _U64(31))
        self._state = int(steps[-1]) if n else self._state
        self.calls += n
        return ((z >> _U64(11)).astype(np.float64) + 0.5) * TWO_NEG53

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> np.ndarray:
        u = self.uniforms(2 * n)
        return np.sqrt(-2.0 * np.log(u[0::2])) * np.cos(2.0 * np.pi * u[1::2])

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def skip(self, n: int) -> None:
        """Advance as if n uniforms had been drawn (remote backends draw server-side)."""
        self._state = (self._state + n * GAMMA) & MASK64
        self.calls += n
