"""Dropout-tolerant masked summation (honest-but-curious server).

Each client adds a self mask and one mutual mask per peer to its input.
Mutual masks cancel in the sum; self masks of live clients and mutual masks
involving dropped clients are removed by the server from threshold shares
the live clients hand over at the end.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ..errors import (
    InsufficientShares,
    LengthMismatch,
    ProtocolViolation,
    StaleMessage,
    ThresholdNotMet,
)
from ..rng import derive_rng
from ..wire import (
    EncryptedShares,
    KeyAdvertise,
    KeyDigest,
    MaskedInput,
    UnmaskRequest,
    UnmaskResponse,
    _read_share,
    _Reader,
    _write_share,
    _Writer,
)
from . import prg
from .group import SMALL_TEST_GROUP, DHGroup, derive_pair_seed, generate_keypair, validate_public
from .shamir import Share, ShareKind, reconstruct_secret, split_secret


class Stage(enum.IntEnum):
    KEY_ADVERTISE = 0
    SHARE_DISTRIBUTION = 1
    MASKED_INPUT = 2
    UNMASKING = 3
    DONE = 4


def default_threshold(n: int) -> int:
    return max(1, math.ceil(2 * n / 3))


@dataclass
class AggSession:
    roster: list
    threshold: int
    vec_len: int
    modulus: int
    group: DHGroup = SMALL_TEST_GROUP
    stage: Stage = Stage.KEY_ADVERTISE
    mask_pubs: dict = field(default_factory=dict)
    enc_pubs: dict = field(default_factory=dict)
    # clients whose shares were distributed; their masks are in every live input
    participants: list = field(default_factory=list)

    def __post_init__(self):
        self.roster = sorted(int(c) for c in self.roster)
        if len(set(self.roster)) != len(self.roster):
            raise ValueError("roster ids must be distinct")
        if not 1 <= self.threshold <= len(self.roster):
            raise ValueError(f"threshold {self.threshold} outside [1, {len(self.roster)}]")
        if self.vec_len < 1:
            raise ValueError("vec_len must be positive")
        prg.check_modulus(self.modulus)

    def advance(self, to: Stage):
        if to <= self.stage:
            raise ProtocolViolation(f"cannot move from {self.stage.name} back to {to.name}")
        self.stage = to


def _expect(current: Stage, wanted: Stage, what: str):
    if current > wanted:
        raise StaleMessage(f"{what} arrived after {wanted.name} closed")
    if current < wanted:
        raise ProtocolViolation(f"{what} arrived before {wanted.name} opened")


def _share_key(group: DHGroup, my_private: int, peer_public: int) -> bytes:
    return derive_pair_seed(group, my_private, peer_public, label=b"share-enc")


def _mask_add(acc: np.ndarray, stream: np.ndarray, sign: int) -> np.ndarray:
    # uint64 arithmetic wraps mod 2^64, and R divides 2^64
    return acc + stream if sign > 0 else acc - stream


def mask_vector(x, self_seed: bytes, pair_seeds: dict, my_id: int, modulus: int) -> np.ndarray:
    """``x + PRG(self_seed) + sum(+/- PRG(pair seed))`` mod R.

    The pair stream is added when the peer id is above ``my_id`` and
    subtracted when below, so each pair's streams cancel in the sum.
    """
    prg.check_modulus(modulus)
    x = np.asarray(x)
    if x.ndim != 1:
        raise LengthMismatch(f"input must be a vector, got shape {x.shape}")
    n = x.size
    y = x.astype(np.uint64) + prg.expand(self_seed, n, modulus)
    for peer in sorted(pair_seeds):
        if peer == my_id:
            raise ProtocolViolation("a client cannot hold a pair seed with itself")
        y = _mask_add(y, prg.expand(pair_seeds[peer], n, modulus), +1 if peer > my_id else -1)
    return y & np.uint64(modulus - 1)


# ---------------------------------------------------------------------------
# client role
# ---------------------------------------------------------------------------


class AggClient:
    def __init__(self, client_id: int, group: DHGroup, rng: np.random.Generator):
        self.client_id = int(client_id)
        self.group = group
        self.rng = rng
        self.mask_keys = generate_keypair(group, rng)
        self.enc_keys = generate_keypair(group, rng)
        self.stage = Stage.KEY_ADVERTISE
        self.self_seed = b""
        self.held: dict = {}
        self.participants: list = []

    def advertise(self) -> KeyAdvertise:
        return KeyAdvertise(self.client_id, self.mask_keys.public, self.enc_keys.public)

    def on_key_digest(self, msg: KeyDigest) -> EncryptedShares:
        _expect(self.stage, Stage.KEY_ADVERTISE, "KeyDigest")
        roster = sorted(msg.roster)
        ids = [c for c, _, _ in roster]
        mine = [(mp, ep) for c, mp, ep in roster if c == self.client_id]
        if mine != [(self.mask_keys.public, self.enc_keys.public)]:
            raise ProtocolViolation("roster does not carry this client's keys")
        if not 1 <= msg.threshold <= len(ids) or len(set(ids)) != len(ids):
            raise ProtocolViolation("malformed roster or threshold")
        for _, mp, ep in roster:
            validate_public(self.group, mp)
            validate_public(self.group, ep)
        self.threshold, self.vec_len, self.modulus = msg.threshold, msg.vec_len, msg.modulus
        prg.check_modulus(self.modulus)
        self.mask_pubs = {c: mp for c, mp, _ in roster}
        self.enc_pubs = {c: ep for c, _, ep in roster}

        n, t = len(ids), msg.threshold
        self.self_seed = self.rng.bytes(prg.SEED_BYTES)
        key_bytes = self.mask_keys.private.to_bytes(self.group.exponent_bytes, "big")
        seed_shares = split_secret(self.self_seed, n, t, self.rng, self.client_id, ShareKind.SELF_SEED, ids)
        key_shares = split_secret(key_bytes, n, t, self.rng, self.client_id, ShareKind.MASK_KEY, ids)

        out = {}
        for s_share, k_share in zip(seed_shares, key_shares):
            holder = s_share.holder
            if holder == self.client_id:
                self.held[holder] = (s_share, k_share)
                continue
            w = _Writer()
            _write_share(w, s_share)
            _write_share(w, k_share)
            key = _share_key(self.group, self.enc_keys.private, self.enc_pubs[holder])
            nonce = self.rng.bytes(12)
            aad = struct.pack("<II", self.client_id, holder)
            out[holder] = nonce + AESGCM(key).encrypt(nonce, w.getvalue(), aad)
        self.stage = Stage.SHARE_DISTRIBUTION
        return EncryptedShares(self.client_id, out)

    def on_shares(self, msg: EncryptedShares) -> None:
        _expect(self.stage, Stage.SHARE_DISTRIBUTION, "EncryptedShares")
        if msg.party != self.client_id:
            raise ProtocolViolation("relayed shares addressed to another client")
        for sender, blob in msg.ciphertexts.items():
            if sender not in self.enc_pubs or sender == self.client_id:
                raise ProtocolViolation(f"shares from unknown sender {sender}")
            key = _share_key(self.group, self.enc_keys.private, self.enc_pubs[sender])
            aad = struct.pack("<II", sender, self.client_id)
            try:
                plain = AESGCM(key).decrypt(blob[:12], blob[12:], aad)
            except InvalidTag:
                raise ProtocolViolation(f"share ciphertext from {sender} failed authentication") from None
            r = _Reader(plain)
            s_share, k_share = _read_share(r), _read_share(r)
            r.done()
            for s in (s_share, k_share):
                if s.owner != sender or s.holder != self.client_id:
                    raise ProtocolViolation("share owner/holder does not match envelope")
            self.held[sender] = (s_share, k_share)
        self.participants = sorted(set(msg.ciphertexts) | {self.client_id})
        if len(self.participants) < self.threshold:
            raise ThresholdNotMet("fewer than t clients distributed shares")
        self.stage = Stage.MASKED_INPUT

    def mask(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.vec_len,):
            raise LengthMismatch(f"input has shape {x.shape}, session expects ({self.vec_len},)")
        if x.size and (x.min() < 0 or int(x.max()) >= self.modulus):
            raise ValueError("input lanes must lie in [0, R)")
        pair_seeds = {
            peer: derive_pair_seed(self.group, self.mask_keys.private, self.mask_pubs[peer])
            for peer in self.participants if peer != self.client_id
        }
        return mask_vector(x, self.self_seed, pair_seeds, self.client_id, self.modulus)

    def masked_input(self, x) -> MaskedInput:
        _expect(self.stage, Stage.MASKED_INPUT, "masked input")
        y = self.mask(x)
        self.stage = Stage.UNMASKING
        return MaskedInput(self.client_id, self.modulus, y)

    def on_unmask_request(self, msg: UnmaskRequest) -> UnmaskResponse:
        _expect(self.stage, Stage.UNMASKING, "UnmaskRequest")
        live, dropped = set(msg.live), set(msg.dropped)
        if live & dropped:
            raise ProtocolViolation("a client is listed as both live and dropped")
        if self.client_id not in live:
            raise ProtocolViolation("this client is not listed as live")
        if (live | dropped) != set(self.participants):
            raise ProtocolViolation("live and dropped sets do not partition the participants")
        if len(live) < self.threshold:
            raise ThresholdNotMet("refusing to unmask with fewer than t live clients")
        resp = UnmaskResponse(
            self.client_id,
            [self.held[c][0] for c in sorted(live)],
            [self.held[c][1] for c in sorted(dropped)],
        )
        self.stage = Stage.DONE
        return resp


# ---------------------------------------------------------------------------
# server role
# ---------------------------------------------------------------------------


def unmask_and_sum(masked_vectors: dict, self_seed_shares: dict, mask_key_shares: dict, session: AggSession) -> np.ndarray:
    """Sum of the live clients' inputs mod R.

    ``self_seed_shares`` maps each live client to shares of its self seed,
    ``mask_key_shares`` maps each dropped client to shares of its mask key.
    """
    live = set(masked_vectors)
    dropped = set(mask_key_shares)
    t, R, l = session.threshold, session.modulus, session.vec_len
    if len(live) < t:
        raise ThresholdNotMet(f"{len(live)} live clients, threshold {t}")
    if live & dropped:
        raise ProtocolViolation("mask keys requested for a live client")
    if set(self_seed_shares) - live:
        raise ProtocolViolation("self-seed shares supplied for a client with no masked input")
    participants = set(session.participants or session.roster)
    if live | dropped != participants:
        raise ProtocolViolation("live and dropped clients must partition the participants")

    total = np.zeros(l, dtype=np.uint64)
    for cid, y in masked_vectors.items():
        y = np.asarray(y, dtype=np.uint64)
        if y.shape != (l,):
            raise LengthMismatch(f"masked vector from {cid} has {y.size} lanes, expected {l}")
        total = total + y
    for cid in sorted(live):
        shares = self_seed_shares.get(cid, [])
        if len(shares) < t:
            raise InsufficientShares(f"{len(shares)} self-seed shares for client {cid}, need {t}")
        seed = reconstruct_secret(shares, t)
        total = total - prg.expand(seed, l, R)
    for d in sorted(dropped):
        key = int.from_bytes(reconstruct_secret(mask_key_shares[d], t), "big")
        for u in sorted(live):
            seed = derive_pair_seed(session.group, key, session.mask_pubs[u])
            # u added this stream if d ranks above u, subtracted it otherwise
            total = _mask_add(total, prg.expand(seed, l, R), -1 if d > u else +1)
    return total & np.uint64(R - 1)


class AggServer:
    def __init__(self, session: AggSession):
        self.session = session
        self.advertised: dict = {}
        self.uploads: dict = {}
        self.masked: dict = {}
        self.responses: dict = {}
        self.live: list = []
        self.dropped: list = []

    @property
    def stage(self) -> Stage:
        return self.session.stage

    def on_advertise(self, msg: KeyAdvertise):
        _expect(self.stage, Stage.KEY_ADVERTISE, "KeyAdvertise")
        if msg.client_id not in self.session.roster:
            raise ProtocolViolation(f"client {msg.client_id} is not on the roster")
        validate_public(self.session.group, msg.mask_pub)
        validate_public(self.session.group, msg.enc_pub)
        self.advertised[msg.client_id] = msg

    def close_advertise(self) -> KeyDigest:
        _expect(self.stage, Stage.KEY_ADVERTISE, "close of key advertisement")
        if len(self.advertised) < self.session.threshold:
            raise ThresholdNotMet(f"{len(self.advertised)} clients advertised keys, threshold {self.session.threshold}")
        roster = [(c, m.mask_pub, m.enc_pub) for c, m in sorted(self.advertised.items())]
        self.session.mask_pubs = {c: mp for c, mp, _ in roster}
        self.session.enc_pubs = {c: ep for c, _, ep in roster}
        self.session.advance(Stage.SHARE_DISTRIBUTION)
        return KeyDigest(self.session.threshold, self.session.vec_len, self.session.modulus, roster)

    def on_shares(self, msg: EncryptedShares):
        _expect(self.stage, Stage.SHARE_DISTRIBUTION, "EncryptedShares")
        if msg.party not in self.advertised:
            raise ProtocolViolation(f"shares from client {msg.party} who did not advertise keys")
        expected = set(self.advertised) - {msg.party}
        if set(msg.ciphertexts) != expected:
            raise ProtocolViolation(f"client {msg.party} did not address every other client")
        self.uploads[msg.party] = msg

    def close_shares(self) -> dict:
        """Close share distribution; returns the relay message for each participant."""
        _expect(self.stage, Stage.SHARE_DISTRIBUTION, "close of share distribution")
        u2 = sorted(self.uploads)
        if len(u2) < self.session.threshold:
            raise ThresholdNotMet(f"{len(u2)} clients distributed shares, threshold {self.session.threshold}")
        self.session.participants = u2
        relay = {
            r: EncryptedShares(r, {s: self.uploads[s].ciphertexts[r] for s in u2 if s != r})
            for r in u2
        }
        self.session.advance(Stage.MASKED_INPUT)
        return relay

    def on_masked(self, msg: MaskedInput):
        _expect(self.stage, Stage.MASKED_INPUT, "MaskedInput")
        if msg.client_id not in self.session.participants:
            raise ProtocolViolation(f"masked input from non-participant {msg.client_id}")
        if msg.modulus != self.session.modulus:
            raise ProtocolViolation("masked input uses a different modulus")
        if np.asarray(msg.values).shape != (self.session.vec_len,):
            raise LengthMismatch(f"masked input has {np.asarray(msg.values).size} lanes, expected {self.session.vec_len}")
        self.masked[msg.client_id] = np.asarray(msg.values, dtype=np.uint64)

    def close_masked(self) -> UnmaskRequest:
        _expect(self.stage, Stage.MASKED_INPUT, "close of masked input")
        self.live = sorted(self.masked)
        self.dropped = sorted(set(self.session.participants) - set(self.masked))
        if len(self.live) < self.session.threshold:
            raise ThresholdNotMet(f"{len(self.live)} live clients, threshold {self.session.threshold}")
        self.session.advance(Stage.UNMASKING)
        return UnmaskRequest(self.live, self.dropped)

    def on_unmask(self, msg: UnmaskResponse):
        _expect(self.stage, Stage.UNMASKING, "UnmaskResponse")
        if msg.client_id not in self.live:
            raise ProtocolViolation(f"unmask response from non-live client {msg.client_id}")
        self.responses[msg.client_id] = msg

    def finalize(self) -> np.ndarray:
        _expect(self.stage, Stage.UNMASKING, "finalize")
        if len(self.responses) < self.session.threshold:
            raise ThresholdNotMet(f"{len(self.responses)} unmask responses, threshold {self.session.threshold}")
        seed_shares: dict = {c: [] for c in self.live}
        key_shares: dict = {d: [] for d in self.dropped}
        for resp in self.responses.values():
            for s in resp.self_seed_shares:
                if s.owner not in seed_shares:
                    raise ProtocolViolation(f"self-seed share for non-live client {s.owner}")
                seed_shares[s.owner].append(s)
            for s in resp.mask_key_shares:
                if s.owner not in key_shares:
                    raise ProtocolViolation(f"mask-key share for non-dropped client {s.owner}")
                key_shares[s.owner].append(s)
        total = unmask_and_sum(self.masked, seed_shares, key_shares, self.session)
        self.session.advance(Stage.DONE)
        return total


# ---------------------------------------------------------------------------
# in-process driver
# ---------------------------------------------------------------------------


@dataclass
class SumOutcome:
    total: np.ndarray
    live: list
    dropped: list


def run_secure_sum(inputs: dict, modulus: int, threshold: int | None = None, group: DHGroup = SMALL_TEST_GROUP,
                   root_seed: int = 0, drop_after_shares=(), label: str = "sum") -> SumOutcome:
    """Run every stage with all parties in this process.

    Clients in ``drop_after_shares`` go silent right after distributing their
    shares, the costliest point to lose them.
    """
    ids = sorted(int(c) for c in inputs)
    if not ids:
        raise ValueError("no inputs")
    vec_len = int(np.asarray(inputs[ids[0]]).size)
    t = default_threshold(len(ids)) if threshold is None else int(threshold)
    session = AggSession(ids, t, vec_len, modulus, group)
    server = AggServer(session)
    clients = {c: AggClient(c, group, derive_rng(root_seed, "agg", label, c)) for c in ids}
    for c in ids:
        server.on_advertise(clients[c].advertise())
    digest = server.close_advertise()
    for c in ids:
        server.on_shares(clients[c].on_key_digest(digest))
    relay = server.close_shares()
    gone = {int(c) for c in drop_after_shares}
    for c in ids:
        if c in gone:
            continue
        clients[c].on_shares(relay[c])
        server.on_masked(clients[c].masked_input(inputs[c]))
    request = server.close_masked()
    for c in request.live:
        server.on_unmask(clients[c].on_unmask_request(request))
    return SumOutcome(server.finalize(), request.live, request.dropped)
