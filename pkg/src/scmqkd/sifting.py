"""Basis reconciliation, QBER measurement and superkey aggregation."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import physics
from .core import Outcome
from .simulator import SessionLog


@dataclass(frozen=True)
class SiftedKey:
    channel: tuple
    bits: np.ndarray
    source_slots: np.ndarray

    def __post_init__(self):
        if len(self.bits) != len(self.source_slots):
            raise ValueError("bits and source_slots differ in length")

    def __len__(self):
        return len(self.bits)

    def __eq__(self, other):
        if not isinstance(other, SiftedKey):
            return NotImplemented
        return (tuple(self.channel) == tuple(other.channel)
                and np.array_equal(self.bits, other.bits)
                and np.array_equal(self.source_slots, other.source_slots))

    def to_hex(self) -> str:
        """Bits packed MSB-first into bytes, zero padded at the end."""
        return np.packbits(self.bits.astype(np.uint8)).tobytes().hex()

    @classmethod
    def from_hex(cls, channel, hexstr: str, length: int, source_slots=None) -> "SiftedKey":
        bits = np.unpackbits(np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8))[:length]
        slots = np.arange(length, dtype=np.int64) if source_slots is None else np.asarray(source_slots)
        return cls(tuple(channel), bits.astype(np.uint8), slots)


@dataclass
class SessionResult:
    channels: list
    alice_keys: dict
    bob_keys: dict
    qber_measured: dict
    sifted_rate_bps: dict
    error_counts: dict
    aggregated_rate_bps: float
    secret_rate_bps: float
    gain_db: float
    superkey_alice: Optional[np.ndarray] = None
    superkey_bob: Optional[np.ndarray] = None
    secret_fraction: float = 0.31
    duration_s: float = 0.0
    meta: dict = field(default_factory=dict)


def reconcile(log: SessionLog) -> dict:
    """Per channel (alice_key, bob_key): single clicks in matching bases only."""
    n = log.n_pulses
    for arr in (log.alice_bit, log.alice_basis, log.bob_basis, log.outcome):
        if arr.shape != (len(log.channels), n):
            raise ValueError("malformed session log: array shape does not match n_pulses")
    out = {}
    for c, key in enumerate(log.channels):
        o = log.outcome[c]
        keep = ((o == Outcome.USB) | (o == Outcome.LSB)) & (log.alice_basis[c] == log.bob_basis[c])
        slots = np.flatnonzero(keep)
        alice = log.alice_bit[c, slots].astype(np.uint8)
        bob = (o[slots] == Outcome.LSB).astype(np.uint8)
        out[key] = (SiftedKey(key, alice, slots), SiftedKey(key, bob, slots))
    return out


def measure_qber(alice: SiftedKey, bob: SiftedKey) -> float:
    if len(alice) == 0:
        raise ValueError("cannot measure QBER on an empty key")
    if tuple(alice.channel) != tuple(bob.channel) or not np.array_equal(alice.source_slots, bob.source_slots):
        raise ValueError("keys come from different slots")
    return float(np.count_nonzero(alice.bits != bob.bits)) / len(alice)


def apply_raw_key_cap(key: SiftedKey, cap_bits: Optional[int] = None) -> SiftedKey:
    """Keep the first ``cap_bits`` bits (emulates a bounded raw-key memory)."""
    if cap_bits is None:
        return key
    if cap_bits < 0:
        raise ValueError("cap_bits must be >= 0")
    return SiftedKey(key.channel, key.bits[:cap_bits], key.source_slots[:cap_bits])


def superkey(keys: dict, channels) -> np.ndarray:
    """Interleave per-channel keys in (slot, wavelength, subcarrier) order."""
    slots, order, bits = [], [], []
    for rank, ch in enumerate(channels):
        k = keys[ch]
        slots.append(np.asarray(k.source_slots, dtype=np.int64))
        order.append(np.full(len(k), rank, dtype=np.int64))
        bits.append(np.asarray(k.bits, dtype=np.uint8))
    if not slots:
        return np.zeros(0, np.uint8)
    slots, order, bits = np.concatenate(slots), np.concatenate(order), np.concatenate(bits)
    idx = np.lexsort((order, slots))
    return bits[idx]


def aggregate(channels, alice_keys: Optional[dict], bob_keys: Optional[dict], n_pulses: int,
              pulse_rate_hz: float, secret_fraction: float = 0.31,
              error_counts: Optional[dict] = None) -> SessionResult:
    """Combine per-channel keys into rates, QBERs and the superkey.

    Either key dict may be None when only one side's key is known
    (protocol runs); ``error_counts`` then has to come from the disclosure
    step as ``{channel: (errors, bits_checked)}``.
    """
    channels = list(channels)
    if not channels:
        raise ValueError("need at least one channel")
    duration = n_pulses / pulse_rate_hz
    rates, qbers, errors = {}, {}, {}
    own = alice_keys if alice_keys else bob_keys
    for ch in channels:
        a = own[ch]
        rates[ch] = len(a) / duration
        if error_counts is not None:
            errors[ch], checked = error_counts[ch]
            qbers[ch] = errors[ch] / checked if checked else math.nan
        elif len(a):
            b = bob_keys[ch]
            errors[ch] = int(np.count_nonzero(a.bits != b.bits))
            qbers[ch] = measure_qber(alice_keys[ch], b)
        else:
            errors[ch], qbers[ch] = 0, math.nan
    agg = sum(rates.values())
    gain = physics.multiplexing_gain_db(list(rates.values())) if agg > 0 else math.nan
    return SessionResult(
        channels=channels,
        alice_keys=alice_keys or {},
        bob_keys=bob_keys or {},
        qber_measured=qbers,
        sifted_rate_bps=rates,
        error_counts=errors,
        aggregated_rate_bps=agg,
        secret_rate_bps=secret_fraction * agg,
        gain_db=gain,
        superkey_alice=superkey(alice_keys, channels) if alice_keys else None,
        superkey_bob=superkey(bob_keys, channels) if bob_keys else None,
        secret_fraction=secret_fraction,
        duration_s=duration,
    )


def sift_session(log: SessionLog, cap_bits: Optional[int] = None) -> SessionResult:
    """reconcile + optional raw-key cap + aggregate, in-process."""
    pairs = reconcile(log)
    alice = {k: apply_raw_key_cap(a, cap_bits) for k, (a, _b) in pairs.items()}
    bob = {k: apply_raw_key_cap(b, cap_bits) for k, (_a, b) in pairs.items()}
    return aggregate(log.channels, alice, bob, log.n_pulses, log.config.pulse_rate_hz,
                     log.config.secret_fraction)


def export_keys(result: SessionResult, out_dir, seed: int, cfg_hash: str, side: str = "both") -> list:
    """Write ``key_<side>_w<w>_s<s>.hex`` plus a JSON sidecar per key."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    sides = {"alice": result.alice_keys, "bob": result.bob_keys}
    for name, keys in sides.items():
        if side not in ("both", name) or not keys:
            continue
        for ch in result.channels:
            key = keys[ch]
            stem = f"key_{name}_w{ch[0]}_s{ch[1]}"
            (out_dir / f"{stem}.hex").write_text(key.to_hex() + "\n")
            meta = {
                "channel": list(ch),
                "side": name,
                "length": len(key),
                "seed": seed,
                "config_hash": cfg_hash,
                "bit_packing": "msb-first",
                "sha256": hashlib.sha256(key.bits.tobytes()).hexdigest(),
            }
            (out_dir / f"{stem}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
            written += [f"{stem}.hex", f"{stem}.json"]
    return written
