"""Seed expansion into mask vectors over Z_R (R a power of two)."""

from __future__ import annotations

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..errors import ConfigError

SEED_BYTES = 16
_ZERO_NONCE = bytes(16)


def lane_dtype(modulus: int):
    return np.uint32 if modulus <= 1 << 32 else np.uint64


def check_modulus(modulus: int) -> None:
    if modulus < 2 or modulus > 1 << 64 or modulus & (modulus - 1):
        raise ConfigError("modulus must be a power of two in [2, 2^64]")


def expand(seed: bytes, length: int, modulus: int) -> np.ndarray:
    """AES-128-CTR keystream under ``seed`` read as ``length`` lanes mod R.

    Returned as uint64 regardless of lane width.
    """
    if len(seed) != SEED_BYTES:
        raise ValueError("seed must be 16 bytes")
    check_modulus(modulus)
    dt = lane_dtype(modulus)
    nbytes = length * np.dtype(dt).itemsize
    enc = Cipher(algorithms.AES(seed), modes.CTR(_ZERO_NONCE)).encryptor()
    stream = enc.update(bytes(nbytes)) + enc.finalize()
    lanes = np.frombuffer(stream, dtype=np.dtype(dt).newbyteorder("<")).astype(np.uint64)
    return lanes & np.uint64(modulus - 1)
