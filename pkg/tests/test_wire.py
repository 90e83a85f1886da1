import numpy as np
import pytest
from hypothesis import given, strategies as st

from scmqkd import wire
from scmqkd.wire import (
    BasisDecision, ChannelDisclosure, ChannelMask, ChannelReport, DetectionReport, Error, Finish, Hello,
    MsgType, QberDisclose, Reader, SessionParams, WireError,
)


@pytest.mark.parametrize("value, encoded", [
    (0, b"\x00"), (1, b"\x01"), (127, b"\x7f"), (128, b"\x80\x01"), (300, b"\xac\x02"),
    (16383, b"\xff\x7f"), (16384, b"\x80\x80\x01"),
])
def test_varint_vectors(value, encoded):
    assert wire.encode_varint(value) == encoded
    assert Reader(encoded).varint() == value


def test_varint_negative():
    with pytest.raises(ValueError):
        wire.encode_varint(-1)


def test_varint_truncated():
    with pytest.raises(WireError):
        Reader(b"\x80").varint()


def test_slot_delta_vector():
    assert wire.encode_slots([3, 7, 200]) == b"\x03\x04\xc1\x01"
    assert wire.decode_slots(Reader(b"\x03\x04\xc1\x01"), 3).tolist() == [3, 7, 200]
    with pytest.raises(ValueError):
        wire.encode_slots([5, 5])


def test_mask_lsb_first():
    assert wire.pack_mask([1, 0, 0, 0, 0, 0, 0, 0, 1]) == b"\x01\x01"
    assert wire.pack_mask([0, 1, 1]) == b"\x06"
    assert wire.pack_mask([]) == b""
    with pytest.raises(WireError):
        wire.unpack_mask(Reader(b"\x08"), 3)


def test_frame_vector():
    assert wire.encode_frame(MsgType.FINISH, b"\xaa\xbb") == b"\x00\x00\x00\x02\x06\xaa\xbb"
    assert wire.decode_frame(b"\x00\x00\x00\x02\x06\xaa\xbb") == (MsgType.FINISH, b"\xaa\xbb")
    with pytest.raises(WireError):
        wire.decode_frame(b"\x00\x00\x00\x01\x06")
    with pytest.raises(WireError):
        wire.decode_frame(b"\x00\x00\x00\x00\x42")


def test_hello_vector():
    assert Hello(1, 1).encode() == b"SCMQ\x00\x01\x01"
    assert Hello.decode(b"SCMQ\x00\x02\x00") == Hello(2, 0)
    with pytest.raises(WireError):
        Hello.decode(b"XXXX\x00\x01\x01")


def test_report_vector():
    rep = DetectionReport((ChannelReport((0, 1), np.array([3, 7]), np.array([1, 0])),))
    assert rep.encode() == b"\x00\x01" + b"\x00\x00\x00\x01" + b"\x02" + b"\x03\x04" + b"\x01"


def test_error_vector():
    assert Error(3, "bad").encode() == b"\x03bad"
    assert Error.decode(b"\x03bad") == Error(3, "bad")
    with pytest.raises(WireError):
        Error.decode(b"")


def test_trailing_bytes_rejected():
    with pytest.raises(WireError):
        Hello.decode(b"SCMQ\x00\x01\x01\x00")


slot_lists = st.lists(st.integers(0, 2**40), max_size=50, unique=True).map(sorted)
channel_keys = st.tuples(st.integers(0, 65535), st.integers(0, 65535))


@given(slot_lists)
def test_slots_roundtrip(slots):
    r = Reader(wire.encode_slots(slots))
    assert wire.decode_slots(r, len(slots)).tolist() == slots
    r.done()


@given(st.lists(st.integers(0, 1), max_size=100))
def test_mask_roundtrip(bits):
    packed = wire.pack_mask(bits)
    assert len(packed) == (len(bits) + 7) // 8
    assert wire.unpack_mask(Reader(packed), len(bits)).tolist() == bits


@given(st.binary(min_size=32, max_size=32), st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1),
       st.integers(0, 10**6), st.lists(channel_keys, max_size=8))
def test_session_params_roundtrip(h, seed, n, ppm, chans):
    p = SessionParams(h, seed, n, ppm, tuple(chans))
    assert SessionParams.decode(p.encode()) == p


@st.composite
def reports(draw):
    chans = []
    for key in draw(st.lists(channel_keys, max_size=4)):
        slots = draw(slot_lists)
        bases = draw(st.lists(st.integers(0, 1), min_size=len(slots), max_size=len(slots)))
        chans.append(ChannelReport(key, np.array(slots, dtype=np.int64), np.array(bases, dtype=np.uint8)))
    return DetectionReport(tuple(chans))


@given(reports())
def test_report_roundtrip(rep):
    back = DetectionReport.decode(rep.encode())
    assert len(back.channels) == len(rep.channels)
    for a, b in zip(rep.channels, back.channels):
        assert a.channel == b.channel
        assert a.slots.tolist() == b.slots.tolist() and a.bases.tolist() == b.bases.tolist()


@given(st.lists(st.tuples(channel_keys, st.lists(st.integers(0, 1), max_size=40)), max_size=4))
def test_decision_roundtrip(items):
    dec = BasisDecision(tuple(ChannelMask(k, np.array(m, np.uint8)) for k, m in items))
    back = BasisDecision.decode(dec.encode())
    assert [(m.channel, m.mask.tolist()) for m in back.channels] == [(k, m) for k, m in items]


@given(st.lists(st.tuples(channel_keys, st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), max_size=40)),
                max_size=4))
def test_disclose_roundtrip(items):
    chans = []
    for key, pairs in items:
        sel = np.array([p[0] for p in pairs], np.uint8)
        bits = np.array([p[1] for p in pairs], np.uint8)[sel.astype(bool)]
        chans.append(ChannelDisclosure(key, sel, bits))
    back = QberDisclose.decode(QberDisclose(tuple(chans)).encode())
    for a, b in zip(chans, back.channels):
        assert a.channel == b.channel and a.selected.tolist() == b.selected.tolist()
        assert a.bits.tolist() == b.bits.tolist()


@given(st.lists(st.tuples(channel_keys, st.integers(0, 2**40), st.integers(0, 2**40), st.integers(0, 2**40)),
                max_size=4))
def test_finish_roundtrip(items):
    f = Finish(tuple(items))
    assert Finish.decode(f.encode()) == f


@given(st.sampled_from(list(MsgType)), st.binary(max_size=64))
def test_frame_roundtrip(t, payload):
    assert wire.decode_frame(wire.encode_frame(t, payload)) == (t, payload)


@given(st.binary(max_size=40))
def test_decoders_never_crash(data):
    for mtype in MsgType:
        try:
            wire.decode_payload(mtype, data)
        except WireError:
            pass
