"""Threshold secret sharing of byte strings over a 256-bit prime field."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InsufficientShares, ShareSetMismatch
from ..rng import rand_below

FIELD_PRIME = 2 ** 256 - 189
CHUNK_BYTES = 31  # largest chunk that is always below the field prime


class ShareKind(enum.IntEnum):
    SELF_SEED = 1
    MASK_KEY = 2


@dataclass(frozen=True)
class Share:
    owner: int
    holder: int
    x: int
    y: tuple
    kind: ShareKind
    secret_len: int


def _chunks(secret: bytes) -> list[int]:
    if not secret:
        return [0]
    return [int.from_bytes(secret[i:i + CHUNK_BYTES], "big") for i in range(0, len(secret), CHUNK_BYTES)]


def _unchunk(values: Sequence[int], secret_len: int) -> bytes:
    out = bytearray()
    remaining = secret_len
    for v in values:
        width = min(CHUNK_BYTES, remaining)
        if remaining == 0:
            break
        if v >= 1 << (8 * width):
            raise ShareSetMismatch("reconstructed chunk does not fit; shares are inconsistent")
        out += v.to_bytes(width, "big")
        remaining -= width
    return bytes(out)


def _eval(coeffs: list[int], x: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % FIELD_PRIME
    return acc


def split_secret(secret: bytes, n: int, t: int, rng: np.random.Generator, owner: int = 0,
                 kind: ShareKind = ShareKind.SELF_SEED, holders: Sequence[int] | None = None) -> list[Share]:
    """``n`` shares, any ``t`` of which recover ``secret``; share k goes to holders[k] at x = k+1."""
    if not 1 <= t <= n:
        raise ValueError(f"need 1 <= t <= n, got t={t}, n={n}")
    holders = list(range(n)) if holders is None else list(holders)
    if len(holders) != n:
        raise ValueError("holders must list exactly n ids")
    polys = [[c] + [rand_below(rng, FIELD_PRIME) for _ in range(t - 1)] for c in _chunks(secret)]
    return [
        Share(owner, holders[k], k + 1, tuple(_eval(poly, k + 1) for poly in polys), ShareKind(kind), len(secret))
        for k in range(n)
    ]


def _lagrange_at_zero(xs: list[int]) -> list[int]:
    weights = []
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if i != j:
                num = num * xj % FIELD_PRIME
                den = den * (xj - xi) % FIELD_PRIME
        weights.append(num * pow(den, -1, FIELD_PRIME) % FIELD_PRIME)
    return weights


def reconstruct_secret(shares: Sequence[Share], t: int) -> bytes:
    if len(shares) < t:
        raise InsufficientShares(f"have {len(shares)} shares, need {t}")
    first = shares[0]
    for s in shares:
        if (s.owner, s.kind, s.secret_len, len(s.y)) != (first.owner, first.kind, first.secret_len, len(first.y)):
            raise ShareSetMismatch("shares belong to different secrets")
    by_x = {}
    for s in shares:
        by_x.setdefault(s.x, s)
    if len(by_x) < t:
        raise InsufficientShares(f"only {len(by_x)} distinct evaluation points, need {t}")
    use = list(by_x.values())[:t]
    weights = _lagrange_at_zero([s.x for s in use])
    values = [sum(w * s.y[c] for w, s in zip(weights, use)) % FIELD_PRIME for c in range(len(first.y))]
    return _unchunk(values, first.secret_len)
