"""Seeded Monte-Carlo engine for M wavelength x N subcarrier channels.

Random streams are derived with ``numpy.random.SeedSequence`` keyed on
``(wavelength_idx, subcarrier_idx, role, block)`` and fed to a Philox
(counter-based) generator. Slots are processed in fixed blocks of
``BLOCK_SLOTS``, so the output never depends on thread count or on which
other channels exist.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import physics
from .core import (
    Basis, Bit, Outcome, SystemConfig, bob_phase_for, phase_for, validate_config,
)

ROLE_ALICE = 0
ROLE_BOB = 1
ROLE_DETECTOR = 2
ROLE_DRIFT = 3

BLOCK_SLOTS = 1 << 20
_QUARTER_COS = np.array([1.0, 0.0, -1.0, 0.0])


def stream(master_seed: int, w: int, s: int, role: int, block: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed) % 2**64, spawn_key=(w, s, role, block))
    return np.random.Generator(np.random.Philox(ss))


def thread_count() -> int:
    env = os.environ.get("QKD_SIM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SessionSpec:
    config: SystemConfig
    n_pulses: int
    master_seed: int = 0


@dataclass(frozen=True)
class ChannelSettings:
    """Per-channel inputs of the click model."""

    p_signal: float
    noise_per_detector: float
    visibility: float
    dispersion_offset: float
    reference_active: bool

    @classmethod
    def from_config(cls, config: SystemConfig, w: int, s: int) -> "ChannelSettings":
        p_sig, p_x, d_b = physics.click_probabilities(config, w, s)
        return cls(
            p_signal=p_sig,
            noise_per_detector=(p_x + d_b) / 2,
            visibility=config.visibility,
            dispersion_offset=physics.channel_dispersion_offset(config, w, s),
            reference_active=config.link.reference_active,
        )


@dataclass(frozen=True)
class PulseRecord:
    slot_index: int
    alice_bit: dict
    alice_basis: dict
    alice_phase: dict
    bob_basis: dict
    bob_phase: dict


@dataclass(frozen=True)
class DetectionRecord:
    slot_index: int
    outcome: dict


def alice_encode(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform independent (bit, basis) draws for ``n`` slots.

    Alice's phase for a slot is ``(2*bit + basis) * pi/2``.
    """
    bits = rng.integers(0, 2, n, dtype=np.uint8)
    bases = rng.integers(0, 2, n, dtype=np.uint8)
    return bits, bases


def bob_choose(rng: np.random.Generator, n: int) -> np.ndarray:
    """Bob's basis per slot; his phase is ``basis * pi/2``."""
    return rng.integers(0, 2, n, dtype=np.uint8)


def sample_outcomes(alice_bits, alice_bases, bob_bases, ch: ChannelSettings,
                    rng: np.random.Generator, drift_rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw USB/LSB clicks for a vector of slots; returns Outcome codes."""
    n = len(alice_bits)
    quarters = (2 * alice_bits.astype(np.int8) + alice_bases - bob_bases) % 4
    if ch.dispersion_offset == 0.0 and ch.reference_active:
        cos = _QUARTER_COS[quarters]
    else:
        angle = quarters * (math.pi / 2) + ch.dispersion_offset
        if not ch.reference_active:
            if drift_rng is None:
                raise ValueError("inactive reference needs a drift stream")
            angle = angle + drift_rng.uniform(0.0, 2 * math.pi, n)
        cos = np.cos(angle)
    vc = ch.visibility * cos
    p_usb = np.clip(ch.p_signal * (1 + vc) / 2 + ch.noise_per_detector, 0.0, 1.0)
    p_lsb = np.clip(ch.p_signal * (1 - vc) / 2 + ch.noise_per_detector, 0.0, 1.0)
    u = rng.random((2, n))
    return (u[0] < p_usb).astype(np.uint8) + 2 * (u[1] < p_lsb).astype(np.uint8)


def sample_detections(pulse: PulseRecord, config: SystemConfig, rng: np.random.Generator,
                      drift_rng: np.random.Generator | None = None) -> DetectionRecord:
    """Single-slot form of :func:`sample_outcomes` over every channel of ``pulse``."""
    out = {}
    for key in sorted(pulse.alice_bit):
        ch = ChannelSettings.from_config(config, *key)
        code = sample_outcomes(
            np.array([pulse.alice_bit[key]], dtype=np.uint8),
            np.array([pulse.alice_basis[key]], dtype=np.uint8),
            np.array([pulse.bob_basis[key]], dtype=np.uint8),
            ch, rng, drift_rng,
        )[0]
        out[key] = Outcome(int(code))
    return DetectionRecord(pulse.slot_index, out)


@dataclass
class SessionLog:
    """Columnar transcript: arrays are indexed ``[channel, slot]``."""

    config: SystemConfig
    n_pulses: int
    master_seed: int
    channels: list
    alice_bit: np.ndarray
    alice_basis: np.ndarray
    bob_basis: np.ndarray
    outcome: np.ndarray

    def channel_index(self, w: int, s: int) -> int:
        return self.channels.index((w, s))

    def pulse_record(self, slot: int) -> PulseRecord:
        bits, ab, apn, bb, bpn = {}, {}, {}, {}, {}
        for c, key in enumerate(self.channels):
            bit, basis = Bit(int(self.alice_bit[c, slot])), Basis(int(self.alice_basis[c, slot]))
            bits[key], ab[key], apn[key] = bit, basis, phase_for(bit, basis)
            bb[key] = Basis(int(self.bob_basis[c, slot]))
            bpn[key] = bob_phase_for(bb[key])
        return PulseRecord(slot, bits, ab, apn, bb, bpn)

    def detection_record(self, slot: int) -> DetectionRecord:
        return DetectionRecord(slot, {key: Outcome(int(self.outcome[c, slot]))
                                      for c, key in enumerate(self.channels)})

    def click_counts(self) -> dict:
        """Per channel: counts of each Outcome."""
        out = {}
        for c, key in enumerate(self.channels):
            counts = np.bincount(self.outcome[c], minlength=4)
            out[key] = {o: int(counts[o]) for o in Outcome}
        return out

    def sub_log(self, keys) -> "SessionLog":
        idx = [self.channel_index(*k) for k in keys]
        return SessionLog(self.config, self.n_pulses, self.master_seed, list(keys),
                          self.alice_bit[idx], self.alice_basis[idx], self.bob_basis[idx],
                          self.outcome[idx])

    def write_csv(self, path) -> None:
        """One row per slot x channel, slot-major, fixed column order."""
        n, c = self.n_pulses, len(self.channels)
        w = np.array([k[0] for k in self.channels])
        s = np.array([k[1] for k in self.channels])
        table = np.empty((n, c, 7), dtype=np.int64)
        table[:, :, 0] = np.arange(n)[:, None]
        table[:, :, 1] = w
        table[:, :, 2] = s
        table[:, :, 3] = self.alice_bit.T
        table[:, :, 4] = self.alice_basis.T
        table[:, :, 5] = self.bob_basis.T
        table[:, :, 6] = self.outcome.T
        with open(path, "w", newline="") as fh:
            fh.write(",".join(LOG_COLUMNS) + "\r\n")
            np.savetxt(fh, table.reshape(n * c, 7), fmt="%d", delimiter=",", newline="\r\n")


LOG_COLUMNS = ("slot", "wavelength_idx", "subcarrier_idx", "alice_bit", "alice_basis", "bob_basis", "outcome")


def _run_block(config, master_seed, key, settings, block, start, stop):
    w, s = key
    n = stop - start
    bits, abases = alice_encode(stream(master_seed, w, s, ROLE_ALICE, block), n)
    bbases = bob_choose(stream(master_seed, w, s, ROLE_BOB, block), n)
    drift = None if settings.reference_active else stream(master_seed, w, s, ROLE_DRIFT, block)
    outcome = sample_outcomes(bits, abases, bbases, settings,
                              stream(master_seed, w, s, ROLE_DETECTOR, block), drift)
    return bits, abases, bbases, outcome


def run_session(spec: SessionSpec, threads: int | None = None) -> SessionLog:
    if spec.n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    config = validate_config(spec.config)
    keys = config.channels()
    n = int(spec.n_pulses)
    shape = (len(keys), n)
    log = SessionLog(config, n, int(spec.master_seed), keys,
                     np.empty(shape, np.uint8), np.empty(shape, np.uint8),
                     np.empty(shape, np.uint8), np.empty(shape, np.uint8))
    settings = {k: ChannelSettings.from_config(config, *k) for k in keys}
    tasks = [
        (c, key, b, b * BLOCK_SLOTS, min(n, (b + 1) * BLOCK_SLOTS))
        for c, key in enumerate(keys)
        for b in range(math.ceil(n / BLOCK_SLOTS))
    ]

    def work(task):
        c, key, b, start, stop = task
        return task, _run_block(config, spec.master_seed, key, settings[key], b, start, stop)

    with ThreadPoolExecutor(max_workers=threads or thread_count()) as pool:
        for (c, _key, _b, start, stop), (bits, ab, bb, out) in pool.map(work, tasks):
            log.alice_bit[c, start:stop] = bits
            log.alice_basis[c, start:stop] = ab
            log.bob_basis[c, start:stop] = bb
            log.outcome[c, start:stop] = out
    return log


def run_wdm(spec: SessionSpec, threads: int | None = None) -> SessionLog:
    """run_session for M >= 2 carriers; the DWDM itself adds no crosstalk."""
    if len(spec.config.wavelength_channels) < 2:
        raise ValueError("run_wdm needs at least two wavelength channels")
    return run_session(spec, threads)
