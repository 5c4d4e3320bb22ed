"""Portable seeded randomness for reproducible curation and resampling.

Everything here is built on splitmix64 used as a counter-based generator:
``draw(seed, k)`` is the finalizer applied to ``seed + (k + 1) * GOLDEN``,
which is exactly the k-th output of the splitmix64 stream seeded with
``seed``. Because each draw depends only on (seed, counter), work can be
partitioned across workers in any order without changing results, and the
sequences are reproducible on any platform (no dependence on a library's
internal generator state).

Shuffles are Fisher-Yates permutations driven by this stream.
"""

from __future__ import annotations

from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U_GOLDEN = np.uint64(_GOLDEN)
_U_MIX1 = np.uint64(_MIX1)
_U_MIX2 = np.uint64(_MIX2)


def splitmix64(state: int) -> int:
    """Finalizer of splitmix64 applied to ``state`` (one 64-bit output)."""
    z = state & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def draw(seed: int, counter: int) -> int:
    """The ``counter``-th 64-bit output of the splitmix64 stream for ``seed``."""
    return splitmix64((seed + (counter + 1) * _GOLDEN) & _MASK64)


def derive_seed(seed: int, index: int) -> int:
    """A sub-seed for an indexed child task (component, resample block, ...)."""
    return draw(seed, index)


def _draw_block(seed: int, start: int, count: int) -> np.ndarray:
    """Vectorized ``draw`` for counters ``start .. start+count-1``."""
    counters = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = (np.uint64(seed & _MASK64) + counters * _U_GOLDEN).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _U_MIX1
    z = (z ^ (z >> np.uint64(27))) * _U_MIX2
    return z ^ (z >> np.uint64(31))


def uniform_block(seed: int, start: int, count: int) -> np.ndarray:
    """``count`` doubles in [0, 1) from stream positions ``start`` onward."""
    return (_draw_block(seed, start, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def index_block(seed: int, start: int, count: int, bound: int) -> np.ndarray:
    """``count`` integers uniform on [0, bound) from the counter stream."""
    u = uniform_block(seed, start, count)
    idx = (u * bound).astype(np.int64)
    # u < 1 strictly, but u * bound can round up to bound in float64
    np.minimum(idx, bound - 1, out=idx)
    return idx


def permutation(n: int, seed: int) -> list[int]:
    """Fisher-Yates permutation of range(n) driven by the seed's stream."""
    if n < 0:
        raise ValueError("n must be non-negative")
    perm = list(range(n))
    if n < 2:
        return perm
    # draw j_i uniform on [0, i] for i = n-1 .. 1 in one vectorized pass
    u = uniform_block(seed, 0, n - 1)
    bounds = np.arange(n, 1, -1, dtype=np.float64)
    js = (u * bounds).astype(np.int64)
    np.minimum(js, np.arange(n - 1, 0, -1, dtype=np.int64), out=js)
    i = n - 1
    for j in js.tolist():
        perm[i], perm[j] = perm[j], perm[i]
        i -= 1
    return perm


def shuffled(items: Sequence[T], seed: int) -> list[T]:
    """A new list holding ``items`` in seeded Fisher-Yates order."""
    return [items[i] for i in permutation(len(items), seed)]


def sample_without_replacement(items: Sequence[T], k: int, seed: int) -> list[T]:
    """First ``k`` elements of the seeded permutation of ``items``."""
    if k < 0 or k > len(items):
        raise ValueError(f"cannot sample {k} from {len(items)} items")
    return [items[i] for i in permutation(len(items), seed)[:k]]
