"""Private set union from masked Bloom filters and partition indicators.

Each client encodes its index set as a Bloom filter plus a coarse
partition indicator, replaces every 1 with a uniform draw from Z_R, and the
two vectors are summed obliviously. A summed lane is nonzero (up to a 1/R
cancellation chance) exactly when some client set it, while its value says
nothing about how many did.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, InvalidRate, LengthMismatch

LN2 = math.log(2.0)
DEFAULT_PARTITION_WIDTH = 4096


def optimal_length(phi: float, target_fpr: float) -> int:
    """Filter length minimizing space for ``phi`` items at ``target_fpr``."""
    if not target_fpr > 0:
        raise InvalidRate("target_fpr must be positive")
    if target_fpr > 1:
        raise InvalidRate("target_fpr must be at most 1")
    if phi < 1:
        raise ConfigError("phi must be at least 1")
    return max(1, math.ceil(-phi * math.log(target_fpr) / (LN2 * LN2)))


def optimal_hash_count(beta: int, phi: float) -> int:
    # round half up; python's round() would send 0.5 to 0
    return max(1, math.floor(LN2 * beta / phi + 0.5))


@dataclass(frozen=True)
class BloomParams:
    length: int
    hash_count: int
    capacity: float = 0.0
    target_fpr: float = 0.0
    hash_seed: int = 0
    identity: bool = False

    def __post_init__(self):
        if self.length < 1 or self.hash_count < 1:
            raise ConfigError("Bloom length and hash count must be positive")
        if self.identity and self.hash_count != 1:
            raise ConfigError("identity hashing uses exactly one hash")

    @classmethod
    def from_capacity(cls, phi: float, target_fpr: float, hash_seed: int = 0) -> "BloomParams":
        beta = optimal_length(phi, target_fpr)
        return cls(beta, optimal_hash_count(beta, phi), phi, target_fpr, hash_seed)

    @classmethod
    def identity_map(cls, domain_size: int) -> "BloomParams":
        """One bit per index of the full domain; exact, never a false positive."""
        return cls(int(domain_size), 1, float(domain_size), 0.0, 0, True)

    def positions(self, indices) -> np.ndarray:
        """0-based filter positions, shape (len(indices), hash_count)."""
        idx = np.asarray(indices, dtype=np.int64).ravel()
        if self.identity:
            if idx.size and (idx.min() < 1 or idx.max() > self.length):
                raise ConfigError("identity hashing needs indices in [1, length]")
            return (idx - 1).reshape(-1, 1)
        return _kernels.bloom_positions(idx, _kernels.mix_seed(self.hash_seed), self.length, self.hash_count)

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "hash_count": self.hash_count,
            "capacity": self.capacity,
            "target_fpr": self.target_fpr,
            "hash_seed": self.hash_seed,
            "identity": self.identity,
        }


@dataclass(frozen=True)
class PartitionScheme:
    """Equal-width contiguous partitions of ``[1, m]``.

    ``boundaries`` holds the first index of every partition plus ``m + 1``.
    """

    boundaries: tuple

    def __post_init__(self):
        b = self.boundaries
        if len(b) < 2 or b[0] != 1 or any(x >= y for x, y in zip(b, b[1:])):
            raise ConfigError("partition boundaries must start at 1 and strictly increase")

    @classmethod
    def equal_width(cls, m: int, count: int | None = None) -> "PartitionScheme":
        if m < 1:
            raise ConfigError("domain size must be positive")
        if count is None:
            count = math.ceil(m / DEFAULT_PARTITION_WIDTH)
        count = max(1, min(int(count), m))
        cuts = [1 + (k * m) // count for k in range(count)] + [m + 1]
        return cls(tuple(cuts))

    @property
    def partition_count(self) -> int:
        return len(self.boundaries) - 1

    @property
    def domain_size(self) -> int:
        return self.boundaries[-1] - 1

    def lookup(self, indices) -> np.ndarray:
        """0-based partition of each index."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 1 or idx.max() > self.domain_size):
            raise ConfigError("index outside the partitioned domain")
        return np.searchsorted(np.asarray(self.boundaries), idx, side="right") - 1

    def members(self, p: int) -> np.ndarray:
        return np.arange(self.boundaries[p], self.boundaries[p + 1], dtype=np.int64)


@dataclass
class PerturbedFilter:
    values: np.ndarray
    modulus: int

    def __len__(self):
        return int(self.values.size)


def encode(indices, params: BloomParams) -> np.ndarray:
    """Bit vector (uint8) with every hashed position of every index set."""
    idx = np.asarray(sorted(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)
    if params.identity:
        bits = np.zeros(params.length, dtype=np.uint8)
        bits[params.positions(idx).ravel()] = 1
        return bits
    return _kernels.bloom_encode(idx, _kernels.mix_seed(params.hash_seed), params.length, params.hash_count)


def contains(bits, indices, params: BloomParams) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if params.identity:
        return np.asarray(bits)[params.positions(idx).ravel()] != 0
    return _kernels.bloom_query(np.asarray(bits), idx, _kernels.mix_seed(params.hash_seed), params.length, params.hash_count)


def partition_indicator(indices, scheme: PartitionScheme) -> np.ndarray:
    a = np.zeros(scheme.partition_count, dtype=np.uint8)
    idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)
    if idx.size:
        a[scheme.lookup(idx)] = 1
    return a


def perturb_filter(bits, modulus: int, rng: np.random.Generator, positive_only: bool = False) -> PerturbedFilter:
    """Replace each 1 with a uniform draw from Z_R (or 1..R-1 if ``positive_only``).

    Including 0 keeps every lane exactly uniform at the cost of a 1/R chance
    of erasing a set bit; ``positive_only`` removes that chance but skews the
    lane distribution.
    """
    if modulus < 2:
        raise ConfigError("modulus must be at least 2")
    bits = np.asarray(bits)
    ones = bits != 0
    out = np.zeros(bits.shape, dtype=np.uint64)
    k = int(np.count_nonzero(ones))
    if k:
        lo = 1 if positive_only else 0
        out[ones] = rng.integers(lo, modulus, size=k, dtype=np.uint64, endpoint=False)
    return PerturbedFilter(out, int(modulus))


def client_vector(indices, params: BloomParams, scheme: PartitionScheme, modulus: int,
                  rng: np.random.Generator, positive_only: bool = False) -> np.ndarray:
    """One client's contribution ``[b' || a']`` to a single summation."""
    idx = np.asarray(sorted(indices), dtype=np.int64)
    b = perturb_filter(encode(idx, params), modulus, rng, positive_only)
    a = perturb_filter(partition_indicator(idx, scheme), modulus, rng, positive_only)
    return np.concatenate([b.values, a.values])


def split_summed(vec, params: BloomParams, scheme: PartitionScheme):
    vec = np.asarray(vec)
    if vec.size != params.length + scheme.partition_count:
        raise LengthMismatch(f"expected {params.length + scheme.partition_count} lanes, got {vec.size}")
    return vec[: params.length], vec[params.length:]


def reconstruct_union(sum_filter, sum_indicator, scheme: PartitionScheme, params: BloomParams) -> np.ndarray:
    """Indices whose partition lane and every filter lane are nonzero."""
    sum_filter = np.asarray(sum_filter)
    sum_indicator = np.asarray(sum_indicator)
    if sum_filter.size != params.length:
        raise LengthMismatch(f"filter has {sum_filter.size} lanes, expected {params.length}")
    if sum_indicator.size != scheme.partition_count:
        raise LengthMismatch(f"indicator has {sum_indicator.size} lanes, expected {scheme.partition_count}")
    live = np.flatnonzero(sum_indicator)
    if live.size == 0:
        return np.zeros(0, dtype=np.int64)
    candidates = np.concatenate([scheme.members(int(p)) for p in live])
    return candidates[contains(sum_filter, candidates, params)]


def plaintext_modular_sum(vectors: Sequence[np.ndarray], modulus: int) -> np.ndarray:
    """Reference summation without masking; used where only the sum matters."""
    acc = np.zeros_like(np.asarray(vectors[0], dtype=np.uint64))
    for v in vectors:
        acc = acc + np.asarray(v, dtype=np.uint64)
    if modulus & (modulus - 1) == 0:
        return acc & np.uint64(modulus - 1)
    return acc % np.uint64(modulus)


def private_set_union(index_sets: Sequence, params: BloomParams, scheme: PartitionScheme, modulus: int,
                      rngs: Sequence[np.random.Generator],
                      summer: Callable[[list], np.ndarray] | None = None,
                      positive_only: bool = False) -> np.ndarray:
    """Run the whole union computation for a list of client sets.

    ``summer`` maps the list of client vectors to their modular sum; by
    default a plaintext sum, or pass a secure-aggregation driver.
    """
    vectors = [client_vector(s, params, scheme, modulus, r, positive_only) for s, r in zip(index_sets, rngs)]
    if summer is None:
        total = plaintext_modular_sum(vectors, modulus)
    else:
        total = summer(vectors)
    b, a = split_summed(total, params, scheme)
    return reconstruct_union(b, a, scheme, params)
