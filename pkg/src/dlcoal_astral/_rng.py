"""Counter-addressable random streams usable from both Python and numba kernels.

Every replicate of every experiment draws from its own stream, keyed by
``(key, index)``. The key is a 64-bit digest of the master seed and an
experiment tag, so replicate ``r`` sees the same numbers no matter which
worker runs it or in which order.

The generator is xoshiro256** seeded through splitmix64.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK63 = (1 << 63) - 1


@njit(cache=True)
def _splitmix_next(x):
    x = x + _GOLDEN
    z = x
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return x, z ^ (z >> np.uint64(31))


@njit(cache=True)
def seed_state(state, key, index):
    """Fill ``state`` (uint64[4]) for stream ``index`` under ``key``."""
    x = np.uint64(key) ^ (np.uint64(index) * _MIX2)
    x, _ = _splitmix_next(x)
    for i in range(4):
        x, z = _splitmix_next(x)
        state[i] = z
    if state[0] == 0 and state[1] == 0 and state[2] == 0 and state[3] == 0:
        state[0] = np.uint64(1)


@njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def next_u64(state):
    s0 = state[0]
    s1 = state[1]
    s2 = state[2]
    s3 = state[3]
    result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return result


@njit(cache=True)
def uniform(state):
    """Uniform double in [0, 1)."""
    return float(next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def exponential(state, rate):
    """Exponential waiting time with the given rate; ``inf`` when rate is 0."""
    if rate <= 0.0:
        return np.inf
    return -np.log1p(-uniform(state)) / rate


@njit(cache=True)
def randbelow(state, n):
    """Uniform integer in ``range(n)``, unbiased by rejection."""
    bound = np.uint64(n)
    limit = (np.uint64(0xFFFFFFFFFFFFFFFF) // bound) * bound
    while True:
        r = next_u64(state)
        if r < limit:
            return np.int64(r % bound)


def tag_key(master_seed: int, tag: str) -> int:
    """64-bit key for the streams of one experiment."""
    if not 0 <= int(master_seed) < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {master_seed}")
    h = hashlib.blake2b(digest_size=8)
    h.update(int(master_seed).to_bytes(8, "little"))
    h.update(tag.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class Stream:
    """A single reproducible random stream.

    Thin Python handle around the kernel state so that API functions and the
    fused experiment kernels consume identical numbers for identical keys.
    """

    __slots__ = ("state",)

    def __init__(self, key: int = 0, index: int = 0):
        self.state = np.zeros(4, dtype=np.uint64)
        seed_state(self.state, np.uint64(int(key) & (2**64 - 1)), np.uint64(int(index)))

    @classmethod
    def from_key(cls, key: int, index: int) -> "Stream":
        return cls(key, index)

    def random(self) -> float:
        return uniform(self.state)

    def integers(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        return int(randbelow(self.state, n))

    def exponential(self, rate: float) -> float:
        return exponential(self.state, rate)

    def spawn_key(self) -> int:
        return int(next_u64(self.state))


def as_stream(rng) -> Stream:
    """Coerce ``None``, an int seed, a numpy ``Generator`` or a ``Stream``."""
    if isinstance(rng, Stream):
        return rng
    if rng is None:
        return Stream(int(np.random.default_rng().integers(0, _MASK63)), 0)
    if isinstance(rng, (int, np.integer)):
        return Stream(int(rng), 0)
    if isinstance(rng, np.random.Generator):
        return Stream(int(rng.integers(0, _MASK63)), 0)
    raise TypeError(f"cannot build a random stream from {type(rng).__name__}")
