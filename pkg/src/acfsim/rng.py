"""Deterministic stream derivation for parallel Monte Carlo.

Every random draw in the package comes from numpy's Philox counter-based
generator keyed by an integer, never from a shared sequential stream, so any
realization can be regenerated in isolation and results do not depend on how
work is split across processes.

Keys are derived, not drawn: ``mix64`` is the SplitMix64 finalizer (a bijection
on 64-bit ints), and ``derive_stream`` folds an arbitrary tuple of indices into
a 64-bit stream id. A leaf consumer then keys Philox with
``(stream_id << 64) | counter`` so distinct counters within a stream can never
collide with other streams.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """SplitMix64 finalizer. Bijective on [0, 2**64)."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_stream(master_seed: int, *indices: int) -> int:
    """Fold indices into a 64-bit stream id, order-sensitively."""
    h = mix64(master_seed & _MASK64)
    for idx in indices:
        h = mix64(h ^ mix64(idx & _MASK64))
    return h


def stream_key(stream_id: int, counter: int) -> int:
    """128-bit Philox key: high word = stream, low word = counter."""
    if counter < 0 or counter > _MASK64:
        raise ValueError("counter must fit in 64 bits")
    return ((stream_id & _MASK64) << 64) | counter


def generator(key: int) -> np.random.Generator:
    """Philox generator for a 128-bit (or smaller) integer key."""
    if key < 0 or key >> 128:
        raise ValueError("key must be a nonnegative integer below 2**128")
    return np.random.Generator(np.random.Philox(key=key))
