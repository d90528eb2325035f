"""Repo-wide pseudo-random generator: xoshiro256++ with splitmix64 seeding.

Every stochastic routine in this package draws from xoshiro256++ streams.
Stream states are 4-word uint64 arrays; sub-streams (per emitter, per
background channel, per task) are derived from a master seed with a
counter-based splitmix64 mix, so serial and chunked runs produce identical
bytes for identical (seed, config).

All routines are numba-jitted and operate purely on uint64/float64, which
keeps results bit-identical across numpy versions.
"""

from __future__ import annotations

import numpy as np
from numba import njit

GOLDEN = 0x9E3779B97F4A7C15
_MASK = 0xFFFFFFFFFFFFFFFF

# sub-stream purpose tags (keep stable: they are part of the replay contract)
STREAM_EMITTER = 1
STREAM_BACKGROUND_A = 2
STREAM_BACKGROUND_B = 3
STREAM_JITTER = 4
STREAM_DECAY = 5
STREAM_DONORS = 6
STREAM_NOISE = 7
STREAM_SPLIT = 8


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step on Python ints; returns (new_state, output)."""
    state = (state + GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def derive_seed(master: int, id1: int, id2: int) -> int:
    """Mix (master, id1, id2) into one 64-bit sub-seed.

    id1 is the purpose tag (STREAM_*), id2 an index (emitter, chunk, ...).
    """
    s = (int(master) ^ ((int(id1) * GOLDEN) & _MASK)) & _MASK
    s, z = splitmix64(s)
    s = (z ^ ((int(id2) * GOLDEN) & _MASK)) & _MASK
    _, z = splitmix64(s)
    return z


def init_state(seed: int) -> np.ndarray:
    """Fill a 4-word xoshiro256++ state from a 64-bit seed via splitmix64."""
    st = np.empty(4, dtype=np.uint64)
    s = int(seed) & _MASK
    for i in range(4):
        s, z = splitmix64(s)
        st[i] = z
    if not st.any():
        st[0] = GOLDEN  # all-zero state is invalid for xoshiro
    return st


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, inline="always")
def next_u64(st):
    """xoshiro256++ next output; advances st in place."""
    result = _rotl(st[0] + st[3], 23) + st[0]
    t = st[1] << np.uint64(17)
    st[2] ^= st[0]
    st[3] ^= st[1]
    st[1] ^= st[2]
    st[0] ^= st[3]
    st[2] ^= t
    st[3] = _rotl(st[3], 45)
    return result


@njit(cache=True, inline="always")
def next_double(st):
    """Uniform double in (0, 1]: 53 mantissa bits, never exactly 0."""
    return (np.float64(next_u64(st) >> np.uint64(11)) + 1.0) * (2.0**-53)


@njit(cache=True, inline="always")
def next_exponential(st, rate):
    """Exp(rate) variate; rate > 0."""
    return -np.log(next_double(st)) / rate


@njit(cache=True)
def next_normal_pair(st):
    """Two independent standard normals (Box-Muller)."""
    u1 = next_double(st)
    u2 = next_double(st)
    r = np.sqrt(-2.0 * np.log(u1))
    a = 2.0 * np.pi * u2
    return r * np.cos(a), r * np.sin(a)


@njit(cache=True)
def next_poisson(st, lam):
    """Poisson(lam) by Knuth multiplication; O(lam), fine for lam <~ 1e4."""
    if lam <= 0.0:
        return 0
    # split large means to avoid exp underflow (exp(-745) is the double floor)
    n = 0
    remaining = lam
    while remaining > 500.0:
        n += _poisson_small(st, 500.0)
        remaining -= 500.0
    n += _poisson_small(st, remaining)
    return n


@njit(cache=True)
def _poisson_small(st, lam):
    limit = np.exp(-lam)
    prod = next_double(st)
    n = 0
    while prod > limit:
        prod *= next_double(st)
        n += 1
    return n


@njit(cache=True)
def fill_normals(st, out, sigma):
    """Fill out with N(0, sigma) variates (pairs; odd tail draws a pair too)."""
    n = out.shape[0]
    i = 0
    while i + 1 < n:
        a, b = next_normal_pair(st)
        out[i] = a * sigma
        out[i + 1] = b * sigma
        i += 2
    if i < n:
        a, _ = next_normal_pair(st)
        out[i] = a * sigma
