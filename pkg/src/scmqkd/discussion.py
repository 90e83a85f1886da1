"""Two-party public discussion: detection reporting and basis reconciliation.

Alice and Bob each hold only their own side of a session (Alice: bits and
bases; Bob: bases and click outcomes) and exchange framed messages from
:mod:`scmqkd.wire`::

    HELLO <-> HELLO
    A -> B   SESSION_PARAMS      B -> A  SESSION_PARAMS (echo)
    B -> A   DETECTION_REPORT
    A -> B   BASIS_DECISION
    A -> B   QBER_DISCLOSE       B -> A  QBER_DISCLOSE
    A -> B   FINISH              B -> A  FINISH

Neither the report nor the decision carries bit values. Alice listens on
the socket endpoint, Bob connects.
"""
from __future__ import annotations

import enum
import socket
import threading
import time
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import sifting, wire
from .core import Outcome, SystemConfig, config_hash
from .simulator import SessionLog, SessionSpec, run_session, stream
from .wire import ErrorCode, MsgType

ROLE_DISCLOSE = 4
DEFAULT_TIMEOUT = 30.0


class ProtocolFailure(RuntimeError):
    """The session ended in the Failed phase; no key is emitted."""

    def __init__(self, message: str, state: "SessionState" = None):
        super().__init__(message)
        self.state = state


class TransportError(ProtocolFailure):
    """Connection refused, dropped or timed out."""


# --- transports -------------------------------------------------------------


class SocketTransport:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.sent = bytearray()

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc
        self.sent += data

    def recv_exactly(self, n: int, timeout: float) -> bytes:
        self.sock.settimeout(timeout)
        buf = bytearray()
        try:
            while len(buf) < n:
                chunk = self.sock.recv(n - len(buf))
                if not chunk:
                    raise TransportError("connection closed by peer")
                buf += chunk
        except socket.timeout as exc:
            raise TransportError("timed out waiting for peer") from exc
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        return bytes(buf)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class _Buffer:
    def __init__(self):
        self.data = bytearray()
        self.closed = False
        self.cond = threading.Condition()


class PipeTransport:
    """One end of an in-memory byte pipe; see :func:`memory_pipe`."""

    def __init__(self, inbox: _Buffer, outbox: _Buffer):
        self.inbox, self.outbox = inbox, outbox
        self.sent = bytearray()

    def send(self, data: bytes) -> None:
        with self.outbox.cond:
            if self.outbox.closed:
                raise TransportError("pipe closed")
            self.outbox.data += data
            self.outbox.cond.notify_all()
        self.sent += data

    def recv_exactly(self, n: int, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        with self.inbox.cond:
            while len(self.inbox.data) < n:
                if self.inbox.closed:
                    raise TransportError("connection closed by peer")
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TransportError("timed out waiting for peer")
                self.inbox.cond.wait(left)
            out = bytes(self.inbox.data[:n])
            del self.inbox.data[:n]
            return out

    def close(self) -> None:
        for buf in (self.inbox, self.outbox):
            with buf.cond:
                buf.closed = True
                buf.cond.notify_all()


def memory_pipe() -> tuple[PipeTransport, PipeTransport]:
    a_to_b, b_to_a = _Buffer(), _Buffer()
    return PipeTransport(b_to_a, a_to_b), PipeTransport(a_to_b, b_to_a)


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


def listen(endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> SocketTransport:
    """Accept a single connection on ``endpoint``."""
    host, port = parse_endpoint(endpoint)
    with socket.create_server((host, port)) as server:
        server.settimeout(timeout)
        try:
            conn, _ = server.accept()
        except socket.timeout as exc:
            raise TransportError("no peer connected") from exc
    return SocketTransport(conn)


def connect(endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> SocketTransport:
    """Connect to ``endpoint``, retrying until ``timeout`` expires."""
    host, port = parse_endpoint(endpoint)
    deadline = time.monotonic() + timeout
    while True:
        try:
            return SocketTransport(socket.create_connection((host, port), timeout=timeout))
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise TransportError(f"cannot connect to {endpoint}: {exc}") from exc
            time.sleep(0.1)


# --- state machine ----------------------------------------------------------


class SessionPhase(enum.IntEnum):
    INIT = 0
    PARAMS_AGREED = 1
    REPORTING = 2
    RECONCILING = 3
    DISCLOSING = 4
    DONE = 5
    FAILED = 6


_P = SessionPhase
ACCEPTS = {
    "alice": {
        _P.INIT: {MsgType.HELLO, MsgType.SESSION_PARAMS},
        _P.PARAMS_AGREED: {MsgType.DETECTION_REPORT},
        _P.REPORTING: set(),
        _P.RECONCILING: {MsgType.QBER_DISCLOSE},
        _P.DISCLOSING: {MsgType.FINISH},
        _P.DONE: set(),
        _P.FAILED: set(),
    },
    "bob": {
        _P.INIT: {MsgType.HELLO, MsgType.SESSION_PARAMS},
        _P.PARAMS_AGREED: set(),
        _P.REPORTING: {MsgType.BASIS_DECISION},
        _P.RECONCILING: {MsgType.QBER_DISCLOSE},
        _P.DISCLOSING: {MsgType.FINISH},
        _P.DONE: set(),
        _P.FAILED: set(),
    },
}


class SessionState:
    def __init__(self, role: str):
        if role not in ACCEPTS:
            raise ValueError(f"unknown role {role!r}")
        self.role = role
        self.phase = SessionPhase.INIT

    def accepts(self, mtype: MsgType) -> bool:
        if self.phase in (SessionPhase.DONE, SessionPhase.FAILED):
            return False
        return mtype == MsgType.ERROR or mtype in ACCEPTS[self.role][self.phase]

    def advance(self, phase: SessionPhase) -> None:
        if self.phase == SessionPhase.FAILED or phase <= self.phase:
            raise ProtocolFailure(f"illegal transition {self.phase.name} -> {phase.name}", self)
        self.phase = phase

    def fail(self) -> None:
        self.phase = SessionPhase.FAILED


# --- per-side views ---------------------------------------------------------


@dataclass(frozen=True)
class AliceView:
    config: SystemConfig
    n_pulses: int
    seed: int
    channels: list
    bits: np.ndarray
    bases: np.ndarray


@dataclass(frozen=True)
class BobView:
    config: SystemConfig
    n_pulses: int
    seed: int
    channels: list
    bases: np.ndarray
    outcome: np.ndarray


def alice_view(log: SessionLog) -> AliceView:
    return AliceView(log.config, log.n_pulses, log.master_seed, list(log.channels),
                     log.alice_bit, log.alice_basis)


def bob_view(log: SessionLog) -> BobView:
    return BobView(log.config, log.n_pulses, log.master_seed, list(log.channels),
                   log.bob_basis, log.outcome)


# --- payload builders -------------------------------------------------------


def bob_report(view: BobView) -> wire.DetectionReport:
    """Single-click slots and Bob's basis there, per channel."""
    chans = []
    for c, key in enumerate(view.channels):
        o = view.outcome[c]
        slots = np.flatnonzero((o == Outcome.USB) | (o == Outcome.LSB))
        chans.append(wire.ChannelReport(tuple(key), slots, view.bases[c, slots].astype(np.uint8)))
    return wire.DetectionReport(tuple(chans))


def alice_decide(report: wire.DetectionReport, view: AliceView) -> wire.BasisDecision:
    """Keep-mask: 1 where Bob's reported basis equals Alice's."""
    known = {tuple(k): c for c, k in enumerate(view.channels)}
    if [tuple(ch.channel) for ch in report.channels] != [tuple(k) for k in view.channels]:
        raise _Reject(ErrorCode.MALFORMED, "report channels do not match the session")
    masks = []
    for ch in report.channels:
        c = known[tuple(ch.channel)]
        if len(ch.slots) and (ch.slots[0] < 0 or ch.slots[-1] >= view.n_pulses):
            raise _Reject(ErrorCode.SLOT_OUT_OF_RANGE, f"slot outside 0..{view.n_pulses - 1}")
        keep = (view.bases[c, ch.slots] == ch.bases).astype(np.uint8)
        masks.append(wire.ChannelMask(tuple(ch.channel), keep))
    return wire.BasisDecision(tuple(masks))


def disclosure_mask(seed: int, channel, n_sifted: int, disclosure_ppm: int) -> np.ndarray:
    if disclosure_ppm >= 1_000_000:
        return np.ones(n_sifted, np.uint8)
    rng = stream(seed, channel[0], channel[1], ROLE_DISCLOSE, 0)
    return (rng.random(n_sifted) < disclosure_ppm / 1e6).astype(np.uint8)


class _Reject(Exception):
    def __init__(self, code: ErrorCode, message: str):
        super().__init__(message)
        self.code = code


# --- runner -----------------------------------------------------------------


class _Session:
    def __init__(self, role, transport, timeout):
        self.state = SessionState(role)
        self.transport = transport
        self.timeout = timeout

    def send(self, mtype: MsgType, payload) -> None:
        self.transport.send(wire.encode_frame(mtype, payload.encode()))

    def recv(self, *expected: MsgType):
        header = self.transport.recv_exactly(wire.HEADER.size, self.timeout)
        length, t = wire.HEADER.unpack(header)
        if length > wire.MAX_PAYLOAD:
            raise _Reject(ErrorCode.MALFORMED, "frame too large")
        body = self.transport.recv_exactly(length, self.timeout) if length else b""
        try:
            mtype = MsgType(t)
        except ValueError:
            raise _Reject(ErrorCode.MALFORMED, f"unknown message type 0x{t:02x}") from None
        if not self.state.accepts(mtype) or (mtype != MsgType.ERROR and mtype not in expected):
            raise _Reject(ErrorCode.UNEXPECTED_MESSAGE,
                          f"{mtype.name} not valid in {self.state.phase.name}")
        try:
            msg = wire.decode_payload(mtype, body)
        except wire.WireError as exc:
            raise _Reject(ErrorCode.MALFORMED, str(exc)) from exc
        if mtype == MsgType.ERROR:
            raise ProtocolFailure(f"peer reported error {msg.code}: {msg.message}", self.state)
        return msg

    def run(self, body):
        try:
            return body(self)
        except _Reject as exc:
            self.state.fail()
            try:
                self.send(MsgType.ERROR, wire.Error(int(exc.code), str(exc)))
            except ProtocolFailure:
                pass
            raise ProtocolFailure(str(exc), self.state) from exc
        except ProtocolFailure as exc:
            self.state.fail()
            exc.state = self.state
            raise
        finally:
            if self.state.phase == SessionPhase.FAILED:
                self.transport.close()


def _handshake(sess: _Session, role_id: int, version: int) -> None:
    sess.send(MsgType.HELLO, wire.Hello(version, role_id))
    hello = sess.recv(MsgType.HELLO)
    if hello.version != version:
        raise _Reject(ErrorCode.VERSION_MISMATCH, f"peer speaks version {hello.version}, we speak {version}")
    if hello.role == role_id:
        raise _Reject(ErrorCode.MALFORMED, "both peers claim the same role")


def _session_params(view, disclosure: float) -> wire.SessionParams:
    return wire.SessionParams(
        bytes.fromhex(config_hash(view.config)), view.seed % 2**64, view.n_pulses,
        int(round(disclosure * 1_000_000)), tuple(tuple(k) for k in view.channels),
    )


def _final_keys(view, sifted_slots: dict, own_bits: dict, selected: dict, ppm: int) -> dict:
    keys = {}
    for key in view.channels:
        key = tuple(key)
        slots, bits = sifted_slots[key], own_bits[key]
        if ppm < 1_000_000:
            keep = selected[key] == 0
            slots, bits = slots[keep], bits[keep]
        keys[key] = sifting.SiftedKey(key, bits, slots)
    return keys


def _finish_payload(view, keys: dict, errors: dict) -> wire.Finish:
    return wire.Finish(tuple(
        (tuple(k), len(keys[tuple(k)]), *errors[tuple(k)]) for k in view.channels
    ))


def _alice(sess: _Session, view: AliceView, disclosure: float, version: int):
    _handshake(sess, 0, version)
    params = _session_params(view, disclosure)
    sess.send(MsgType.SESSION_PARAMS, params)
    echo = sess.recv(MsgType.SESSION_PARAMS)
    if echo != params:
        raise _Reject(ErrorCode.PARAMS_MISMATCH, "peer session parameters differ")
    sess.state.advance(SessionPhase.PARAMS_AGREED)

    report = sess.recv(MsgType.DETECTION_REPORT)
    sess.state.advance(SessionPhase.REPORTING)
    decision = alice_decide(report, view)
    sess.send(MsgType.BASIS_DECISION, decision)
    sess.state.advance(SessionPhase.RECONCILING)

    index = {tuple(k): c for c, k in enumerate(view.channels)}
    sifted, own, selected, disclosures = {}, {}, {}, []
    for rep, dec in zip(report.channels, decision.channels):
        key = tuple(rep.channel)
        slots = rep.slots[dec.mask.astype(bool)]
        sifted[key] = slots
        own[key] = view.bits[index[key], slots].astype(np.uint8)
        selected[key] = disclosure_mask(view.seed, key, len(slots), params.disclosure_ppm)
        disclosures.append(wire.ChannelDisclosure(key, selected[key], own[key][selected[key].astype(bool)]))
    sess.send(MsgType.QBER_DISCLOSE, wire.QberDisclose(tuple(disclosures)))
    theirs = sess.recv(MsgType.QBER_DISCLOSE)
    errors = _count_errors(theirs, selected, own)
    sess.state.advance(SessionPhase.DISCLOSING)

    keys = _final_keys(view, sifted, own, selected, params.disclosure_ppm)
    mine = _finish_payload(view, keys, errors)
    sess.send(MsgType.FINISH, mine)
    if sess.recv(MsgType.FINISH) != mine:
        raise _Reject(ErrorCode.RESULT_MISMATCH, "peer finished with a different result")
    sess.state.advance(SessionPhase.DONE)
    return keys, errors


def _count_errors(disclose: wire.QberDisclose, selected: dict, own: dict) -> dict:
    got = {tuple(ch.channel): ch for ch in disclose.channels}
    if set(got) != set(selected):
        raise _Reject(ErrorCode.MALFORMED, "disclosure channels do not match")
    errors = {}
    for key, sel in selected.items():
        ch = got[key]
        if not np.array_equal(ch.selected, sel):
            raise _Reject(ErrorCode.MALFORMED, "disclosed positions differ")
        mine = own[key][sel.astype(bool)]
        errors[key] = (int(np.count_nonzero(mine != ch.bits)), int(len(mine)))
    return errors


def _bob(sess: _Session, view: BobView, disclosure: float, version: int):
    _handshake(sess, 1, version)
    params = sess.recv(MsgType.SESSION_PARAMS)
    if params != _session_params(view, disclosure):
        raise _Reject(ErrorCode.PARAMS_MISMATCH, "session parameters (config hash, seed or size) differ")
    sess.send(MsgType.SESSION_PARAMS, params)
    sess.state.advance(SessionPhase.PARAMS_AGREED)

    report = bob_report(view)
    sess.send(MsgType.DETECTION_REPORT, report)
    sess.state.advance(SessionPhase.REPORTING)
    decision = sess.recv(MsgType.BASIS_DECISION)
    if [tuple(m.channel) for m in decision.channels] != [tuple(r.channel) for r in report.channels] or any(
        len(m.mask) != len(r.slots) for m, r in zip(decision.channels, report.channels)
    ):
        raise _Reject(ErrorCode.MALFORMED, "decision does not match the report")
    sess.state.advance(SessionPhase.RECONCILING)

    index = {tuple(k): c for c, k in enumerate(view.channels)}
    sifted, own = {}, {}
    for rep, dec in zip(report.channels, decision.channels):
        key = tuple(rep.channel)
        slots = rep.slots[dec.mask.astype(bool)]
        sifted[key] = slots
        own[key] = (view.outcome[index[key], slots] == Outcome.LSB).astype(np.uint8)
    theirs = sess.recv(MsgType.QBER_DISCLOSE)
    selected = {tuple(ch.channel): ch.selected for ch in theirs.channels}
    if set(selected) != set(sifted) or any(len(selected[k]) != len(sifted[k]) for k in sifted):
        raise _Reject(ErrorCode.MALFORMED, "disclosure does not match the sifted keys")
    errors = _count_errors(theirs, selected, own)
    sess.send(MsgType.QBER_DISCLOSE, wire.QberDisclose(tuple(
        wire.ChannelDisclosure(k, selected[k], own[k][selected[k].astype(bool)]) for k in sifted
    )))
    sess.state.advance(SessionPhase.DISCLOSING)

    keys = _final_keys(view, sifted, own, selected, params.disclosure_ppm)
    mine = _finish_payload(view, keys, errors)
    if sess.recv(MsgType.FINISH) != mine:
        raise _Reject(ErrorCode.RESULT_MISMATCH, "peer finished with a different result")
    sess.send(MsgType.FINISH, mine)
    sess.state.advance(SessionPhase.DONE)
    return keys, errors


def run_protocol(role: str, transport, source: Union[SessionSpec, SessionLog, AliceView, BobView], *,
                 disclosure: float = 1.0, timeout: float = DEFAULT_TIMEOUT,
                 version: int = wire.PROTOCOL_VERSION, threads: Optional[int] = None) -> sifting.SessionResult:
    """Run one side of the discussion and return that side's SessionResult.

    ``source`` may be a SessionSpec (the session is simulated locally and
    only this role's columns are used), a SessionLog, or a ready view.
    """
    if not 0 < disclosure <= 1:
        raise ValueError("disclosure fraction must be in (0, 1]")
    if isinstance(source, SessionSpec):
        source = run_session(source, threads)
    if isinstance(source, SessionLog):
        source = alice_view(source) if role == "alice" else bob_view(source)
    sess = _Session(role, transport, timeout)
    body = _alice if role == "alice" else _bob
    keys, errors = sess.run(lambda s: body(s, source, disclosure, version))
    cfg = source.config
    result = sifting.aggregate(
        source.channels,
        keys if role == "alice" else None,
        keys if role == "bob" else None,
        source.n_pulses, cfg.pulse_rate_hz, cfg.secret_fraction, error_counts=errors,
    )
    result.meta["role"] = role
    result.meta["final_phase"] = sess.state.phase.name
    return result
