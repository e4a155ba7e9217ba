"""Seeded random streams built on splitmix64 and xoshiro256**.

Every stochastic choice in the package (dataset rendering, turbulence
degradation, weight init, minibatch sampling) draws from these generators,
so any artifact is reproducible byte-for-byte from a single 64-bit seed.
The generators are implemented directly on masked Python integers to keep
the streams independent of numpy's RNG internals.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1

# Fixed stream tags. New consumers append; existing tags are never renumbered,
# otherwise previously generated datasets stop being reproducible.
STREAM_PSF = 0x01
STREAM_WARP = 0x02
STREAM_TILES = 0x03
STREAM_NOISE = 0x04
STREAM_TOY = 0x05
STREAM_INIT = 0x06
STREAM_TRAIN = 0x07
STREAM_GRADCHECK = 0x08


def mix64(z: int) -> int:
    """splitmix64 finalizer: a 64-bit bijective scrambler."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def child_seed(seed: int, tag: int) -> int:
    """Derive an independent stream seed for a named purpose."""
    return mix64((seed & _MASK) ^ mix64(tag & _MASK))


def image_seed(seed: int, index: int) -> int:
    """Per-image seed: dataset seed XOR image index."""
    return (seed ^ index) & _MASK


class Xoshiro256:
    """xoshiro256** seeded through splitmix64.

    Produces an identical stream for an identical seed on every platform;
    floats are derived from the top 53 bits of each 64-bit output.
    """

    def __init__(self, seed: int):
        s = seed & _MASK
        state = []
        for _ in range(4):
            s = (s + 0x9E3779B97F4A7C15) & _MASK
            z = ((s ^ (s >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
            state.append(z ^ (z >> 31))
        self._s = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        x = (s1 * 5) & _MASK
        result = (((x << 7) | (x >> 57)) & _MASK) * 9 & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return int(self.random() * n) % n

    def normal(self) -> float:
        """Standard normal via Box-Muller; consumes two uniforms per call."""
        u1 = self.random()
        u2 = self.random()
        if u1 <= 0.0:
            u1 = 2.0**-53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def uniforms(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return np.array([self.uniform(lo, hi) for _ in range(n)], dtype=np.float64)

    def normals(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)

    def choice_no_replace(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from [0, n), by partial Fisher-Yates."""
        if k > n:
            raise ValueError("cannot sample more items than available")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randint(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return np.array(pool[:k], dtype=np.int64)


_U64 = np.uint64


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over a uint64 array (wraps mod 2^64)."""
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


def _rotl_vec(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U64(k)) | (x >> _U64(64 - k))


class Xoshiro256Vec:
    """Lane-parallel xoshiro256** for bulk fills (weight init, noise).

    Each of the ``lanes`` independent streams is seeded through splitmix64
    from (seed, lane index); draws come out round-major (all lanes of
    round 0, then round 1, ...), so a fill of n values is a pure function
    of the seed and n alone. Distinct from the scalar stream of the same
    seed by construction.
    """

    def __init__(self, seed: int, lanes: int = 1024):
        self.lanes = lanes
        base = _U64(seed & _MASK)
        lane_ids = np.arange(1, lanes + 1, dtype=np.uint64)
        s = base + lane_ids * _U64(0x9E3779B97F4A7C15)
        state = []
        for _ in range(4):
            s = s + _U64(0x9E3779B97F4A7C15)
            state.append(_mix64_vec(s.copy()))
        self._s = state

    def _next_block(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        result = _rotl_vec(s1 * _U64(5), 7) * _U64(9)
        t = s1 << _U64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = _rotl_vec(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def fill_u64(self, n: int) -> np.ndarray:
        rounds = (n + self.lanes - 1) // self.lanes
        blocks = [self._next_block() for _ in range(rounds)]
        return np.concatenate(blocks)[:n]

    def uniforms(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        u = (self.fill_u64(n) >> _U64(11)).astype(np.float64) * (2.0**-53)
        return lo + (hi - lo) * u

    def normals(self, n: int) -> np.ndarray:
        m = n + (n % 2)
        u = self.uniforms(m)
        u1 = np.maximum(u[0::2], 2.0**-53)
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        pairs = np.empty(m)
        pairs[0::2] = r * np.cos(2.0 * np.pi * u2)
        pairs[1::2] = r * np.sin(2.0 * np.pi * u2)
        return pairs[:n]
