"""Contract RNG, implemented from the wire-protocol description alone.

Deliberately not imported from the search package: the parity tests compare
two independent realizations of the same construction. Plain integers keep
the arithmetic exact; everything is masked back to 64 bits after each step.
"""
import math

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
TWO_NEG53 = 2.0 ** -53


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def stream_state(seed: int, stream_id: int) -> int:
    return (seed ^ ((stream_id * GAMMA) & MASK64)) & MASK64


def uniforms(seed: int, stream_id: int, n: int) -> list:
    out = []
    state = stream_state(seed, stream_id)
    for _ in range(n):
        state = (state + GAMMA) & MASK64
        out.append(((_mix(state) >> 11) + 0.5) * TWO_NEG53)
    return out


def normals(seed: int, stream_id: int, n: int) -> list:
    # cosine branch of Box-Muller; u1 then u2 per draw, sine partner unused
    u = uniforms(seed, stream_id, 2 * n)
    return [
        math.sqrt(-2.0 * math.log(u[2 * i])) * math.cos(2.0 * math.pi * u[2 * i + 1])
        for i in range(n)
    ]
