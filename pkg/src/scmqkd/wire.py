"""Framing and payload codecs of the public-discussion protocol.

Frame: 4-byte big-endian payload length, 1-byte message type, payload.
Fixed-width integers are big-endian. Slot lists are unsigned LEB128
varints, the first absolute and the rest as deltas. Bit masks are packed
LSB-first, ``ceil(n/8)`` bytes.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SCMQ"
PROTOCOL_VERSION = 1
MAX_PAYLOAD = 1 << 30
HEADER = struct.Struct(">IB")


class MsgType(enum.IntEnum):
    HELLO = 0x01
    SESSION_PARAMS = 0x02
    DETECTION_REPORT = 0x03
    BASIS_DECISION = 0x04
    QBER_DISCLOSE = 0x05
    FINISH = 0x06
    ERROR = 0x7F


class ErrorCode(enum.IntEnum):
    VERSION_MISMATCH = 1
    PARAMS_MISMATCH = 2
    MALFORMED = 3
    SLOT_OUT_OF_RANGE = 4
    UNEXPECTED_MESSAGE = 5
    RESULT_MISMATCH = 6


class WireError(ValueError):
    """Malformed frame or payload."""


# --- primitives -------------------------------------------------------------


def encode_varint(value: int) -> bytes:
    if value < 0:
        raise ValueError("varints are unsigned")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


class Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise WireError("payload truncated")
        chunk = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        st = struct.Struct(">" + fmt)
        return st.unpack(self.take(st.size))

    def varint(self) -> int:
        shift = value = 0
        while True:
            if self.pos >= len(self.data):
                raise WireError("truncated varint")
            byte = self.data[self.pos]
            self.pos += 1
            value |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return value
            shift += 7
            if shift > 63:
                raise WireError("varint too long")

    def done(self) -> None:
        if self.pos != len(self.data):
            raise WireError(f"{len(self.data) - self.pos} trailing bytes in payload")


def encode_slots(slots) -> bytes:
    out = bytearray()
    prev = 0
    for i, s in enumerate(int(x) for x in slots):
        if i and s <= prev:
            raise ValueError("slot list must be strictly increasing")
        out += encode_varint(s - prev if i else s)
        prev = s
    return bytes(out)


def decode_slots(reader: Reader, count: int) -> np.ndarray:
    if count > len(reader.data) - reader.pos:
        raise WireError("slot count exceeds payload size")
    slots = np.empty(count, dtype=np.int64)
    prev = 0
    for i in range(count):
        d = reader.varint()
        if i and d == 0:
            raise WireError("slot list not strictly increasing")
        prev = prev + d if i else d
        slots[i] = prev
    return slots


def pack_mask(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_mask(reader: Reader, count: int) -> np.ndarray:
    raw = np.frombuffer(reader.take((count + 7) // 8), dtype=np.uint8)
    bits = np.unpackbits(raw, bitorder="little")
    if bits[count:].any():
        raise WireError("non-zero padding bits in mask")
    return bits[:count].astype(np.uint8)


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ValueError("payload too large")
    return HEADER.pack(len(payload), int(msg_type)) + payload


def decode_frame(data: bytes) -> tuple[MsgType, bytes]:
    if len(data) < HEADER.size:
        raise WireError("short frame")
    length, t = HEADER.unpack(data[:HEADER.size])
    if len(data) != HEADER.size + length:
        raise WireError("frame length mismatch")
    try:
        mtype = MsgType(t)
    except ValueError:
        raise WireError(f"unknown message type 0x{t:02x}") from None
    return mtype, bytes(data[HEADER.size:])


# --- payloads ---------------------------------------------------------------


@dataclass(frozen=True)
class Hello:
    version: int
    role: int  # 0 alice, 1 bob

    def encode(self) -> bytes:
        return MAGIC + struct.pack(">HB", self.version, self.role)

    @classmethod
    def decode(cls, payload: bytes) -> "Hello":
        r = Reader(payload)
        if r.take(4) != MAGIC:
            raise WireError("bad HELLO magic")
        version, role = r.unpack("HB")
        r.done()
        return cls(version, role)


@dataclass(frozen=True)
class SessionParams:
    config_hash: bytes  # 32-byte sha256
    seed: int
    n_pulses: int
    disclosure_ppm: int
    channels: tuple

    def encode(self) -> bytes:
        if len(self.config_hash) != 32:
            raise ValueError("config hash must be 32 bytes")
        out = bytearray(self.config_hash)
        out += struct.pack(">QQIH", self.seed % 2**64, self.n_pulses, self.disclosure_ppm, len(self.channels))
        for w, s in self.channels:
            out += struct.pack(">HH", w, s)
        return bytes(out)

    @classmethod
    def decode(cls, payload: bytes) -> "SessionParams":
        r = Reader(payload)
        h = r.take(32)
        seed, n, ppm, count = r.unpack("QQIH")
        chans = tuple(tuple(r.unpack("HH")) for _ in range(count))
        r.done()
        return cls(h, seed, n, ppm, chans)


@dataclass(frozen=True)
class ChannelReport:
    channel: tuple
    slots: np.ndarray
    bases: np.ndarray


@dataclass(frozen=True)
class DetectionReport:
    """Slots with a single click and Bob's basis there; no outcome values."""

    channels: tuple  # of ChannelReport

    def encode(self) -> bytes:
        out = bytearray(struct.pack(">H", len(self.channels)))
        for ch in self.channels:
            out += struct.pack(">HH", *ch.channel)
            out += encode_varint(len(ch.slots))
            out += encode_slots(ch.slots)
            out += pack_mask(ch.bases)
        return bytes(out)

    @classmethod
    def decode(cls, payload: bytes) -> "DetectionReport":
        r = Reader(payload)
        (count,) = r.unpack("H")
        chans = []
        for _ in range(count):
            key = tuple(r.unpack("HH"))
            n = r.varint()
            slots = decode_slots(r, n)
            chans.append(ChannelReport(key, slots, unpack_mask(r, n)))
        r.done()
        return cls(tuple(chans))


@dataclass(frozen=True)
class ChannelMask:
    channel: tuple
    mask: np.ndarray


def _encode_masks(masks) -> bytes:
    out = bytearray(struct.pack(">H", len(masks)))
    for m in masks:
        out += struct.pack(">HH", *m.channel)
        out += encode_varint(len(m.mask))
        out += pack_mask(m.mask)
    return bytes(out)


def _decode_masks(payload: bytes) -> tuple:
    r = Reader(payload)
    (count,) = r.unpack("H")
    masks = []
    for _ in range(count):
        key = tuple(r.unpack("HH"))
        n = r.varint()
        masks.append(ChannelMask(key, unpack_mask(r, n)))
    r.done()
    return tuple(masks)


@dataclass(frozen=True)
class BasisDecision:
    """Keep-mask over the reported slots of each channel."""

    channels: tuple  # of ChannelMask

    def encode(self) -> bytes:
        return _encode_masks(self.channels)

    @classmethod
    def decode(cls, payload: bytes) -> "BasisDecision":
        return cls(_decode_masks(payload))


@dataclass(frozen=True)
class ChannelDisclosure:
    channel: tuple
    selected: np.ndarray  # mask over sifted positions
    bits: np.ndarray      # sender's bits at the selected positions


@dataclass(frozen=True)
class QberDisclose:
    channels: tuple

    def encode(self) -> bytes:
        out = bytearray(struct.pack(">H", len(self.channels)))
        for ch in self.channels:
            out += struct.pack(">HH", *ch.channel)
            out += encode_varint(len(ch.selected))
            out += pack_mask(ch.selected)
            out += pack_mask(ch.bits)
        return bytes(out)

    @classmethod
    def decode(cls, payload: bytes) -> "QberDisclose":
        r = Reader(payload)
        (count,) = r.unpack("H")
        chans = []
        for _ in range(count):
            key = tuple(r.unpack("HH"))
            n = r.varint()
            sel = unpack_mask(r, n)
            bits = unpack_mask(r, int(sel.sum()))
            chans.append(ChannelDisclosure(key, sel, bits))
        r.done()
        return cls(tuple(chans))


@dataclass(frozen=True)
class Finish:
    """Per channel: final key length, disclosed errors, disclosed bits."""

    channels: tuple  # of (channel, key_len, errors, checked)

    def encode(self) -> bytes:
        out = bytearray(struct.pack(">H", len(self.channels)))
        for (w, s), n, e, c in self.channels:
            out += struct.pack(">HH", w, s) + encode_varint(n) + encode_varint(e) + encode_varint(c)
        return bytes(out)

    @classmethod
    def decode(cls, payload: bytes) -> "Finish":
        r = Reader(payload)
        (count,) = r.unpack("H")
        chans = tuple((tuple(r.unpack("HH")), r.varint(), r.varint(), r.varint()) for _ in range(count))
        r.done()
        return cls(chans)


@dataclass(frozen=True)
class Error:
    code: int
    message: str

    def encode(self) -> bytes:
        return struct.pack(">B", self.code) + self.message.encode("utf-8")

    @classmethod
    def decode(cls, payload: bytes) -> "Error":
        if not payload:
            raise WireError("empty ERROR payload")
        return cls(payload[0], payload[1:].decode("utf-8", errors="replace"))


PAYLOADS = {
    MsgType.HELLO: Hello,
    MsgType.SESSION_PARAMS: SessionParams,
    MsgType.DETECTION_REPORT: DetectionReport,
    MsgType.BASIS_DECISION: BasisDecision,
    MsgType.QBER_DISCLOSE: QberDisclose,
    MsgType.FINISH: Finish,
    MsgType.ERROR: Error,
}


def decode_payload(mtype: MsgType, payload: bytes):
    try:
        return PAYLOADS[mtype].decode(payload)
    except (struct.error, UnicodeDecodeError) as exc:
        raise WireError(str(exc)) from exc
