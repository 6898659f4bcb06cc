import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sfsl.errors import FramingError, ProtocolError
from sfsl.secure_agg import Share, ShareKind
from sfsl.wire import (
    EncryptedShares,
    FrameBuffer,
    KeyAdvertise,
    KeyDigest,
    MaskedInput,
    RoundAbort,
    RoundConfigMessage,
    SubmodelRequest,
    SubmodelResponse,
    UnionResult,
    UnmaskRequest,
    UnmaskResponse,
    decode_frame,
    decode_index_deltas,
    decode_payload,
    decode_varints,
    encode_frame,
    encode_index_deltas,
    encode_varints,
    read_frame,
)

u32 = st.integers(0, 2**32 - 1)
big = st.integers(2, 2**2048)
ids = st.integers(1, 10**6)
sorted_indices = st.sets(st.integers(1, 2**40), max_size=200).map(lambda s: np.array(sorted(s), dtype=np.int64))


@st.composite
def masked_inputs(draw):
    bits = draw(st.sampled_from([1, 8, 16, 32, 64]))
    R = 2**bits
    vals = draw(st.lists(st.integers(0, R - 1), max_size=100))
    return MaskedInput(draw(ids), R, np.array(vals, dtype=np.uint64))


@st.composite
def shares(draw):
    y = tuple(draw(st.lists(st.integers(0, 2**256 - 190), min_size=1, max_size=3)))
    kind = draw(st.sampled_from(list(ShareKind)))
    return Share(draw(ids), draw(ids), draw(st.integers(1, 1000)), y, kind, draw(st.integers(1, 93)))


@st.composite
def round_configs(draw):
    bounds = sorted(draw(st.sets(st.integers(2, 10**6), max_size=20)))
    return RoundConfigMessage(
        round_id=draw(u32), period_id=draw(u32), threshold=draw(st.integers(1, 1000)),
        modulus=2 ** draw(st.integers(1, 64)), bloom_length=draw(st.integers(1, 10**7)),
        hash_count=draw(st.integers(1, 30)), hash_seed=draw(st.integers(0, 2**64 - 1)),
        identity_hash=draw(st.booleans()), partition_bounds=[1, *bounds],
        levels=draw(st.integers(2, 2**20)), w_min=draw(st.floats(-10, 0)), w_max=draw(st.floats(0.1, 10)),
        probs=tuple(draw(st.floats(0, 1)) for _ in range(4)),
        extras=draw(st.dictionaries(st.text(max_size=8), st.integers() | st.text(max_size=8) | st.booleans(), max_size=5)),
    )


messages = st.one_of(
    st.builds(KeyAdvertise, ids, big, big),
    st.builds(KeyDigest, st.integers(1, 100), st.integers(1, 10**6), st.just(2**32),
              st.lists(st.tuples(ids, big, big), max_size=6)),
    st.builds(EncryptedShares, ids, st.dictionaries(ids, st.binary(max_size=300), max_size=6)),
    masked_inputs(),
    st.builds(UnmaskRequest, st.lists(ids, max_size=20), st.lists(ids, max_size=20)),
    st.builds(UnmaskResponse, ids, st.lists(shares(), max_size=4), st.lists(shares(), max_size=4)),
    round_configs(),
    st.builds(UnionResult, sorted_indices),
    st.builds(SubmodelRequest, ids, sorted_indices),
    st.integers(0, 20).flatmap(lambda k: st.integers(1, 6).flatmap(
        lambda d: st.lists(st.floats(allow_nan=False), min_size=k * d, max_size=k * d).map(
            lambda v: SubmodelResponse(np.array(v, dtype=np.float64).reshape(k, d))))),
    st.just(RoundAbort()),
)


def assert_same(a, b):
    assert type(a) is type(b)
    for f in dataclasses.fields(a):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            np.testing.assert_array_equal(np.asarray(x), np.asarray(y))
            assert np.asarray(x).shape == np.asarray(y).shape
        elif isinstance(x, (list, tuple)) and x and isinstance(x[0], (list, tuple)):
            assert [tuple(e) for e in x] == [tuple(e) for e in y]
        else:
            assert x == y or (isinstance(x, (list, tuple)) and list(x) == list(y))


@given(messages)
def test_roundtrip(msg):
    frame = encode_frame(msg)
    assert int.from_bytes(frame[:4], "little") == len(frame) - 5
    assert_same(msg, decode_frame(frame))


def test_empty_payload_is_five_bytes():
    frame = encode_frame(RoundAbort())
    assert len(frame) == 5
    assert frame[:4] == b"\x00\x00\x00\x00"
    assert isinstance(decode_frame(frame), RoundAbort)


def test_unknown_tag():
    with pytest.raises(ProtocolError):
        decode_frame(b"\x00\x00\x00\x00\xff")
    with pytest.raises(ProtocolError):
        decode_payload(0xFF, b"")


@given(messages, st.data())
def test_truncation_detected(msg, data):
    frame = encode_frame(msg)
    cut = data.draw(st.integers(0, len(frame) - 1))
    with pytest.raises(FramingError):
        read_frame(frame[:cut])


def test_trailing_payload_bytes_rejected():
    frame = bytearray(encode_frame(KeyAdvertise(1, 5, 7)))
    frame += b"\x00"
    frame[0:4] = (len(frame) - 5).to_bytes(4, "little")
    with pytest.raises(ProtocolError):
        decode_frame(bytes(frame))


def test_truncated_field_inside_payload():
    payload = encode_frame(UnmaskRequest([1, 2, 3], []))[5:]
    with pytest.raises(FramingError):
        decode_payload(0x05, payload[:-2])


@given(st.lists(messages, max_size=6), st.integers(1, 50))
def test_frame_buffer_incremental(msgs, chunk):
    stream = b"".join(encode_frame(m) for m in msgs)
    buf = FrameBuffer()
    out = []
    for i in range(0, len(stream), chunk):
        buf.feed(stream[i:i + chunk])
        out.extend(m for m, _ in buf.frames())
    assert buf.pending == 0
    assert len(out) == len(msgs)
    for a, b in zip(msgs, out):
        assert_same(a, b)


@given(st.lists(st.integers(0, 2**64 - 1)))
def test_varint_roundtrip(values):
    assert decode_varints(encode_varints(values)) == values


def test_varint_known_bytes():
    assert encode_varints([0, 127, 128, 300]) == bytes([0x00, 0x7F, 0x80, 0x01, 0xAC, 0x02])


@given(sorted_indices)
def test_index_delta_roundtrip(idx):
    np.testing.assert_array_equal(decode_index_deltas(encode_index_deltas(idx)), idx)


def test_index_deltas_are_compact():
    idx = np.arange(1000, 2000)
    assert len(encode_index_deltas(idx)) < 1100
