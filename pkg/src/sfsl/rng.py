"""Seed fan-out: every random stream in a run derives from one root seed.

Streams are keyed by a tuple of labels (role, client id, round, stage, ...)
so that runs are replayable and independent of call order.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8")) | (1 << 32)


def derive_rng(root_seed: int, *labels) -> np.random.Generator:
    """Return an independent generator for ``(root_seed, *labels)``."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=tuple(_label_key(x) for x in labels))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(root_seed: int, *labels) -> int:
    """Integer seed for components that take a plain seed (trainers, hash families)."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=tuple(_label_key(x) for x in labels))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0])


def rand_below(rng: np.random.Generator, bound: int) -> int:
    """Uniform integer in ``[0, bound)`` for arbitrarily large ``bound``.

    Draws 64 surplus bits so the modulo bias is below 2**-64.
    """
    if bound <= 0:
        raise ValueError("bound must be positive")
    nbytes = (bound.bit_length() + 7) // 8 + 8
    return int.from_bytes(rng.bytes(nbytes), "little") % bound


def rand_bytes(rng: np.random.Generator, n: int) -> bytes:
    return rng.bytes(n)
