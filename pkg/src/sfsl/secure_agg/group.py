"""Diffie-Hellman over prime-order subgroups of safe-prime groups."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidGroupElement
from ..rng import rand_below

_MODP_2048_HEX = (
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1"
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD"
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245"
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D"
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F"
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D"
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9"
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF"
)


@dataclass(frozen=True)
class DHGroup:
    name: str
    p: int
    g: int
    exponent_bits: int = 256

    @property
    def q(self) -> int:
        return (self.p - 1) // 2

    @property
    def element_bytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @property
    def exponent_bytes(self) -> int:
        return (self.exponent_bits + 7) // 8


MODP_2048 = DHGroup("modp2048", int(_MODP_2048_HEX, 16), 2)
# 256-bit safe prime; 4 = 2^2 generates the order-q subgroup. For tests only.
SMALL_TEST_GROUP = DHGroup(
    "small256", 0x800000000000020000000000000000000000000000000000000000000000551B, 4, 252
)

GROUPS = {g.name: g for g in (MODP_2048, SMALL_TEST_GROUP)}


def get_group(name: str) -> DHGroup:
    try:
        return GROUPS[name]
    except KeyError:
        raise ValueError(f"unknown group {name!r}; choose from {sorted(GROUPS)}") from None


@dataclass(frozen=True)
class KeyPair:
    private: int
    public: int


def generate_keypair(group: DHGroup, rng: np.random.Generator) -> KeyPair:
    bound = min(group.q - 1, 1 << group.exponent_bits)
    x = rand_below(rng, bound - 1) + 1
    return KeyPair(x, pow(group.g, x, group.p))


def validate_public(group: DHGroup, y: int) -> None:
    if not 1 < y < group.p - 1:
        raise InvalidGroupElement("public key is 0, 1, p-1 or out of range")


def shared_secret(group: DHGroup, my_private: int, peer_public: int) -> bytes:
    validate_public(group, peer_public)
    z = pow(peer_public, my_private, group.p)
    return z.to_bytes(group.element_bytes, "big")


def derive_pair_seed(group: DHGroup, my_private: int, peer_public: int, label: bytes = b"mask") -> bytes:
    """16-byte symmetric seed agreed between two key holders."""
    return hashlib.sha256(label + b"|" + shared_secret(group, my_private, peer_public)).digest()[:16]
