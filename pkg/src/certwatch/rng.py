"""Seeded random streams.

Every stochastic component draws from a Philox-4x64 generator (numpy's
counter-based bit generator).  A stream is identified by the run seed plus
an optional tuple of sub-stream labels (integers or short strings), so independent consumers
(dropout passes, attack restarts, scene renderers) never share state.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def _label(s: int | str) -> int:
    if isinstance(s, str):
        return zlib.crc32(s.encode()) | (1 << 40)
    return int(s) & MASK64


def make_rng(seed: int, *stream: int | str) -> np.random.Generator:
    """Return a Philox generator keyed by ``seed`` and the stream labels."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = [int(seed) & MASK64, *(_label(s) for s in stream)]
    key = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *stream: int | str) -> int:
    """Deterministic 63-bit child seed, handy for persisting in manifests."""
    entropy = [int(seed) & MASK64, *(_label(s) for s in stream)]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0]) >> 1
