"""Binary wire format: typed messages inside length-prefixed frames.

Frame: ``u32 payload length (LE) | u8 tag | payload``. Every integer in a
payload is little-endian; variable-length fields carry a length prefix.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FramingError, ProtocolError

FRAME_HEADER = struct.Struct("<IB")
MAX_PAYLOAD = 1 << 31


# ---------------------------------------------------------------------------
# primitive codecs
# ---------------------------------------------------------------------------


class _Writer:
    def __init__(self):
        self.parts = []

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u16(self, v):
        self.parts.append(struct.pack("<H", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v):
        self.parts.append(struct.pack("<Q", v))

    def f64(self, v):
        self.parts.append(struct.pack("<d", v))

    def blob(self, b: bytes):
        self.u32(len(b))
        self.parts.append(bytes(b))

    def bigint(self, v: int):
        n = max(1, (v.bit_length() + 7) // 8)
        self.u16(n)
        self.parts.append(v.to_bytes(n, "little"))

    def ids(self, values):
        values = list(values)
        self.u32(len(values))
        self.parts.append(struct.pack(f"<{len(values)}I", *values))

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def _take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise FramingError("payload ends inside a field")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def _unpack(self, fmt: str):
        return struct.unpack(fmt, self._take(struct.calcsize(fmt)))[0]

    def u8(self):
        return self._unpack("<B")

    def u16(self):
        return self._unpack("<H")

    def u32(self):
        return self._unpack("<I")

    def u64(self):
        return self._unpack("<Q")

    def f64(self):
        return self._unpack("<d")

    def blob(self) -> bytes:
        return bytes(self._take(self.u32()))

    def bigint(self) -> int:
        return int.from_bytes(self._take(self.u16()), "little")

    def ids(self) -> list:
        n = self.u32()
        return list(struct.unpack(f"<{n}I", self._take(4 * n)))

    def done(self):
        if self.pos != len(self.data):
            raise ProtocolError(f"{len(self.data) - self.pos} trailing bytes in payload")


def encode_varints(values) -> bytes:
    """Unsigned LEB128 of each value."""
    out = bytearray()
    for v in values:
        v = int(v)
        if v < 0:
            raise ValueError("varints are unsigned")
        while True:
            byte = v & 0x7F
            v >>= 7
            if v:
                out.append(byte | 0x80)
            else:
                out.append(byte)
                break
    return bytes(out)


def decode_varints(data: bytes) -> list:
    out, cur, shift = [], 0, 0
    for byte in data:
        cur |= (byte & 0x7F) << shift
        if byte & 0x80:
            shift += 7
        else:
            out.append(cur)
            cur, shift = 0, 0
    if shift:
        raise FramingError("varint stream ends mid-value")
    return out


def encode_index_deltas(indices) -> bytes:
    """Sorted index set as LEB128 gaps (first value absolute)."""
    arr = np.asarray(indices, dtype=np.int64)
    if arr.size and np.any(np.diff(arr) <= 0):
        raise ValueError("indices must be strictly increasing")
    gaps = np.diff(arr, prepend=0) if arr.size else arr
    return encode_varints(gaps.tolist())


def decode_index_deltas(data: bytes) -> np.ndarray:
    return np.cumsum(np.array(decode_varints(data), dtype=np.int64))


def _write_share(w: _Writer, s):
    w.u32(s.owner)
    w.u32(s.holder)
    w.u32(s.x)
    w.u8(int(s.kind))
    w.u16(s.secret_len)
    w.u8(len(s.y))
    for v in s.y:
        w.parts.append(v.to_bytes(32, "little"))


def _read_share(r: _Reader):
    # imported here: the secure_agg package itself depends on this module
    from .secure_agg.shamir import Share, ShareKind

    owner, holder, x, kind, slen, k = r.u32(), r.u32(), r.u32(), r.u8(), r.u16(), r.u8()
    y = tuple(int.from_bytes(r._take(32), "little") for _ in range(k))
    try:
        kind = ShareKind(kind)
    except ValueError:
        raise ProtocolError(f"unknown share kind {kind}") from None
    return Share(owner, holder, x, y, kind, slen)


def _write_lanes(w: _Writer, values: np.ndarray, modulus: int):
    narrow = modulus <= 1 << 32
    w.u8(4 if narrow else 8)
    arr = np.asarray(values, dtype=np.uint64)
    w.u32(arr.size)
    w.parts.append(arr.astype("<u4" if narrow else "<u8").tobytes())


def _read_lanes(r: _Reader) -> np.ndarray:
    width = r.u8()
    if width not in (4, 8):
        raise ProtocolError(f"bad lane width {width}")
    n = r.u32()
    raw = r._take(width * n)
    return np.frombuffer(raw, dtype="<u4" if width == 4 else "<u8").astype(np.uint64)


# ---------------------------------------------------------------------------
# messages
# ---------------------------------------------------------------------------

MESSAGE_TYPES: dict = {}


def _register(tag: int):
    def deco(cls):
        cls.TAG = tag
        MESSAGE_TYPES[tag] = cls
        return cls

    return deco


@_register(0x01)
@dataclass
class KeyAdvertise:
    client_id: int
    mask_pub: int
    enc_pub: int

    def write(self, w):
        w.u32(self.client_id)
        w.bigint(self.mask_pub)
        w.bigint(self.enc_pub)

    @classmethod
    def read(cls, r):
        return cls(r.u32(), r.bigint(), r.bigint())


@_register(0x02)
@dataclass
class KeyDigest:
    threshold: int
    vec_len: int
    modulus: int
    roster: list  # [(client_id, mask_pub, enc_pub)] in ascending id order

    def write(self, w):
        w.u32(self.threshold)
        w.u64(self.vec_len)
        w.u8(self.modulus.bit_length() - 1)
        w.u32(len(self.roster))
        for cid, mp, ep in self.roster:
            w.u32(cid)
            w.bigint(mp)
            w.bigint(ep)

    @classmethod
    def read(cls, r):
        t, l, logr, n = r.u32(), r.u64(), r.u8(), r.u32()
        roster = [(r.u32(), r.bigint(), r.bigint()) for _ in range(n)]
        return cls(t, l, 1 << logr, roster)


@_register(0x03)
@dataclass
class EncryptedShares:
    """Client upload: ``party`` is the sender and keys are recipients.
    Server relay: ``party`` is the recipient and keys are senders."""

    party: int
    ciphertexts: dict

    def write(self, w):
        w.u32(self.party)
        w.u32(len(self.ciphertexts))
        for peer in sorted(self.ciphertexts):
            w.u32(peer)
            w.blob(self.ciphertexts[peer])

    @classmethod
    def read(cls, r):
        party, n = r.u32(), r.u32()
        cts = {}
        for _ in range(n):
            peer = r.u32()
            cts[peer] = r.blob()
        return cls(party, cts)


@_register(0x04)
@dataclass
class MaskedInput:
    client_id: int
    modulus: int
    values: np.ndarray

    def write(self, w):
        w.u32(self.client_id)
        w.u8(self.modulus.bit_length() - 1)
        _write_lanes(w, self.values, self.modulus)

    @classmethod
    def read(cls, r):
        cid, logr = r.u32(), r.u8()
        return cls(cid, 1 << logr, _read_lanes(r))

    def __eq__(self, other):
        return (isinstance(other, MaskedInput) and self.client_id == other.client_id
                and self.modulus == other.modulus and np.array_equal(self.values, other.values))


@_register(0x05)
@dataclass
class UnmaskRequest:
    live: list
    dropped: list

    def write(self, w):
        w.ids(self.live)
        w.ids(self.dropped)

    @classmethod
    def read(cls, r):
        return cls(r.ids(), r.ids())


@_register(0x06)
@dataclass
class UnmaskResponse:
    client_id: int
    self_seed_shares: list = field(default_factory=list)
    mask_key_shares: list = field(default_factory=list)

    def write(self, w):
        w.u32(self.client_id)
        for group in (self.self_seed_shares, self.mask_key_shares):
            w.u32(len(group))
            for s in group:
                _write_share(w, s)

    @classmethod
    def read(cls, r):
        cid = r.u32()
        groups = []
        for _ in range(2):
            groups.append([_read_share(r) for _ in range(r.u32())])
        return cls(cid, groups[0], groups[1])


@_register(0x10)
@dataclass
class RoundConfigMessage:
    """Public per-round parameters broadcast by the server."""

    round_id: int
    period_id: int
    threshold: int
    modulus: int
    bloom_length: int
    hash_count: int
    hash_seed: int
    identity_hash: bool
    partition_bounds: list
    levels: int
    w_min: float
    w_max: float
    probs: tuple
    extras: dict = field(default_factory=dict)

    def write(self, w):
        w.u64(self.round_id)
        w.u64(self.period_id)
        w.u32(self.threshold)
        w.u8(self.modulus.bit_length() - 1)
        w.u64(self.bloom_length)
        w.u32(self.hash_count)
        w.u64(self.hash_seed)
        w.u8(int(self.identity_hash))
        w.u32(len(self.partition_bounds))
        for b in self.partition_bounds:
            w.u64(b)
        w.u64(self.levels)
        w.f64(self.w_min)
        w.f64(self.w_max)
        for p in self.probs:
            w.f64(p)
        w.blob(json.dumps(self.extras, sort_keys=True).encode())

    @classmethod
    def read(cls, r):
        round_id, period_id, t, logr = r.u64(), r.u64(), r.u32(), r.u8()
        bl, hc, hs, ident = r.u64(), r.u32(), r.u64(), bool(r.u8())
        bounds = [r.u64() for _ in range(r.u32())]
        levels, w_min, w_max = r.u64(), r.f64(), r.f64()
        probs = tuple(r.f64() for _ in range(4))
        extras = json.loads(r.blob().decode())
        return cls(round_id, period_id, t, 1 << logr, bl, hc, hs, ident, bounds, levels, w_min, w_max, probs, extras)


@_register(0x11)
@dataclass
class UnionResult:
    indices: np.ndarray

    def write(self, w):
        w.blob(encode_index_deltas(self.indices))

    @classmethod
    def read(cls, r):
        return cls(decode_index_deltas(r.blob()))

    def __eq__(self, other):
        return isinstance(other, UnionResult) and np.array_equal(self.indices, other.indices)


@_register(0x12)
@dataclass
class SubmodelRequest:
    client_id: int
    indices: np.ndarray

    def write(self, w):
        w.u32(self.client_id)
        w.blob(encode_index_deltas(self.indices))

    @classmethod
    def read(cls, r):
        return cls(r.u32(), decode_index_deltas(r.blob()))

    def __eq__(self, other):
        return (isinstance(other, SubmodelRequest) and self.client_id == other.client_id
                and np.array_equal(self.indices, other.indices))


@_register(0x13)
@dataclass
class SubmodelResponse:
    rows: np.ndarray  # (k, d) float64

    def write(self, w):
        rows = np.asarray(self.rows, dtype=np.float64)
        w.u32(rows.shape[0])
        w.u32(rows.shape[1])
        w.parts.append(rows.astype("<f8").tobytes())

    @classmethod
    def read(cls, r):
        k, d = r.u32(), r.u32()
        return cls(np.frombuffer(r._take(8 * k * d), dtype="<f8").astype(np.float64).reshape(k, d))

    def __eq__(self, other):
        return isinstance(other, SubmodelResponse) and np.array_equal(self.rows, other.rows)


@_register(0x20)
@dataclass
class RoundAbort:
    """Server notice that the round ended without an update (empty payload)."""

    def write(self, w):
        pass

    @classmethod
    def read(cls, r):
        return cls()


# ---------------------------------------------------------------------------
# framing
# ---------------------------------------------------------------------------


def encode_payload(msg) -> bytes:
    w = _Writer()
    msg.write(w)
    return w.getvalue()


def encode_frame(msg) -> bytes:
    tag = getattr(type(msg), "TAG", None)
    if tag is None:
        raise ProtocolError(f"{type(msg).__name__} is not a wire message")
    payload = encode_payload(msg)
    return FRAME_HEADER.pack(len(payload), tag) + payload


def decode_payload(tag: int, payload: bytes):
    cls = MESSAGE_TYPES.get(tag)
    if cls is None:
        raise ProtocolError(f"unknown message tag 0x{tag:02X}")
    r = _Reader(payload)
    msg = cls.read(r)
    r.done()
    return msg


def decode_frame(frame: bytes):
    """Decode exactly one frame; the buffer must hold nothing else."""
    msg, used = read_frame(frame)
    if used != len(frame):
        raise FramingError(f"{len(frame) - used} bytes after frame")
    return msg


def read_frame(buf: bytes, offset: int = 0):
    """Decode the frame at ``offset``; returns (message, bytes consumed)."""
    if len(buf) - offset < FRAME_HEADER.size:
        raise FramingError("frame header truncated")
    length, tag = FRAME_HEADER.unpack_from(buf, offset)
    end = offset + FRAME_HEADER.size + length
    if end > len(buf):
        raise FramingError(f"frame declares {length} payload bytes, only {len(buf) - offset - FRAME_HEADER.size} present")
    return decode_payload(tag, bytes(buf[offset + FRAME_HEADER.size:end])), end - offset


class FrameBuffer:
    """Incremental splitter for a byte stream carrying back-to-back frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes):
        self._buf += data

    def frames(self):
        """Yield (message, wire_size) for every complete frame buffered."""
        while len(self._buf) >= FRAME_HEADER.size:
            length, _ = FRAME_HEADER.unpack_from(self._buf)
            if length > MAX_PAYLOAD:
                raise FramingError("frame length exceeds limit")
            total = FRAME_HEADER.size + length
            if len(self._buf) < total:
                return
            msg, used = read_frame(bytes(self._buf[:total]))
            del self._buf[:total]
            yield msg, used

    @property
    def pending(self) -> int:
        return len(self._buf)
