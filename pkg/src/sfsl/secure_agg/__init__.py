"""Masked summation of client vectors with threshold dropout recovery."""

from .group import MODP_2048, SMALL_TEST_GROUP, DHGroup, KeyPair, derive_pair_seed, generate_keypair, get_group
from .prg import expand
from .protocol import (
    AggClient,
    AggServer,
    AggSession,
    Stage,
    SumOutcome,
    default_threshold,
    mask_vector,
    run_secure_sum,
    unmask_and_sum,
)
from .shamir import FIELD_PRIME, Share, ShareKind, reconstruct_secret, split_secret

__all__ = [
    "AggClient",
    "AggServer",
    "AggSession",
    "DHGroup",
    "FIELD_PRIME",
    "KeyPair",
    "MODP_2048",
    "SMALL_TEST_GROUP",
    "Share",
    "ShareKind",
    "Stage",
    "SumOutcome",
    "default_threshold",
    "derive_pair_seed",
    "expand",
    "generate_keypair",
    "get_group",
    "mask_vector",
    "reconstruct_secret",
    "run_secure_sum",
    "split_secret",
    "unmask_and_sum",
]
