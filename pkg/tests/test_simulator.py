import dataclasses
import math

import numpy as np
import pytest

from scmqkd import physics
from scmqkd.core import Basis, Bit, ConfigError, Outcome, bob_phase_for, paper_wdm, phase_for
from scmqkd.simulator import (
    BLOCK_SLOTS, ChannelSettings, PulseRecord, SessionSpec, alice_encode, bob_choose, run_session,
    run_wdm, sample_detections, sample_outcomes, stream,
)

Z3 = 3.0


def within_3sigma(count, n, p):
    sigma = math.sqrt(n * p * (1 - p))
    return abs(count - n * p) <= Z3 * max(sigma, 1e-12)


def test_stream_determinism():
    a = stream(5, 0, 1, 2, 3).random(10)
    b = stream(5, 0, 1, 2, 3).random(10)
    c = stream(5, 0, 1, 2, 4).random(10)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_alice_encode_deterministic_and_uniform():
    b1, k1 = alice_encode(stream(0, 0, 0, 0), 200_000)
    b2, k2 = alice_encode(stream(0, 0, 0, 0), 200_000)
    assert np.array_equal(b1, b2) and np.array_equal(k1, k2)
    for arr in (b1, k1):
        assert within_3sigma(int(arr.sum()), len(arr), 0.5)
    # the four (bit, basis) pairs are equiprobable
    pairs = np.bincount(2 * b1 + k1, minlength=4)
    for c in pairs:
        assert within_3sigma(int(c), len(b1), 0.25)


def test_bob_choose_uniform():
    b = bob_choose(stream(0, 0, 0, 1), 200_000)
    assert within_3sigma(int(b.sum()), len(b), 0.5)


def _settings(cfg, w=0, s=0):
    return ChannelSettings.from_config(cfg, w, s)


def test_ideal_matched_basis_is_deterministic(ideal):
    n = 10_000
    zeros = np.zeros(n, np.uint8)
    rng = stream(0, 0, 0, 2)
    out = sample_outcomes(zeros, zeros, zeros, _settings(ideal), rng)
    assert np.all(out == Outcome.USB)
    out = sample_outcomes(np.ones(n, np.uint8), np.ones(n, np.uint8), np.ones(n, np.uint8), _settings(ideal), rng)
    assert np.all(out == Outcome.LSB)


def test_ideal_mismatched_basis_is_fair(ideal):
    n = 200_000
    zeros = np.zeros(n, np.uint8)
    out = sample_outcomes(zeros, zeros, np.ones(n, np.uint8), _settings(ideal), stream(0, 0, 0, 2))
    # each detector fires with probability 1/2, independently of the other
    assert within_3sigma(int(np.count_nonzero(out & 1)), n, 0.5)
    assert within_3sigma(int(np.count_nonzero(out & 2)), n, 0.5)


def test_sample_detections_single_slot(ideal):
    key = (0, 0)
    pulse = PulseRecord(0, {key: Bit.ONE}, {key: Basis.Z}, {}, {key: Basis.Z}, {})
    rec = sample_detections(pulse, ideal, stream(0, 0, 0, 2))
    assert rec.outcome == {key: Outcome.LSB}


def test_inactive_reference_needs_drift(baseline):
    cfg = baseline.replace(link=dataclasses.replace(baseline.link, reference_active=False))
    z = np.zeros(4, np.uint8)
    with pytest.raises(ValueError):
        sample_outcomes(z, z, z, _settings(cfg), stream(0, 0, 0, 2))


def test_run_session_determinism(baseline):
    spec = SessionSpec(baseline, 50_000, 11)
    a, b = run_session(spec), run_session(spec)
    for name in ("alice_bit", "alice_basis", "bob_basis", "outcome"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_run_session_thread_independent(baseline):
    spec = SessionSpec(baseline, 2 * BLOCK_SLOTS + 17, 4)
    a, b = run_session(spec, threads=1), run_session(spec, threads=5)
    assert a.outcome.tobytes() == b.outcome.tobytes()
    assert a.alice_bit.tobytes() == b.alice_bit.tobytes()


def test_run_session_errors(baseline):
    with pytest.raises(ValueError):
        run_session(SessionSpec(baseline, 0))
    bad = baseline.replace(visibility=2.0)
    with pytest.raises(ConfigError):
        run_session(SessionSpec(bad, 10))


def _expected_detector_probs(cfg, w, s):
    """Oracle: average the per-detector click probability over (bit, a_basis, b_basis)."""
    p_sig, p_x, d_b = physics.click_probabilities(cfg, w, s)
    v = physics.effective_visibility(cfg, w, s)
    noise = (p_x + d_b) / 2
    p_usb = p_lsb = 0.0
    for bit in (0, 1):
        for ka in (0, 1):
            for kb in (0, 1):
                dphi = (2 * bit + ka - kb) * math.pi / 2
                c = math.cos(dphi) if abs(math.cos(dphi)) > 1e-12 else 0.0
                p_usb += (p_sig * (1 + v * c) / 2 + noise) / 8
                p_lsb += (p_sig * (1 - v * c) / 2 + noise) / 8
    return p_usb, p_lsb


def test_baseline_click_fractions(baseline_run):
    log, _result, _t = baseline_run
    n = log.n_pulses
    for c, key in enumerate(log.channels):
        o = log.outcome[c]
        usb = int(np.count_nonzero(o & 1))
        lsb = int(np.count_nonzero(o & 2))
        p_usb, p_lsb = _expected_detector_probs(log.config, *key)
        assert within_3sigma(usb, n, p_usb), key
        assert within_3sigma(lsb, n, p_lsb), key
        # total click fraction against the rate-estimate detection probability
        det = physics.rate_estimate(log.config, *key).detection_prob_per_pulse
        assert det == pytest.approx(0.02240, rel=1e-2)
        single = int(np.count_nonzero((o == Outcome.USB) | (o == Outcome.LSB)))
        p_single = p_usb * (1 - p_lsb) + p_lsb * (1 - p_usb)  # averaged, strictly a bound
        assert abs(single - n * p_single) <= 3 * math.sqrt(n * p_single) + n * 1e-4


def test_double_click_is_product(baseline_run):
    # per-slot probabilities are fixed once the quarter phase is known
    log, _r, _t = baseline_run
    cfg = log.config
    for c, key in enumerate(log.channels):
        ch = ChannelSettings.from_config(cfg, *key)
        q = (2 * log.alice_bit[c].astype(np.int8) + log.alice_basis[c] - log.bob_basis[c]) % 4
        o = log.outcome[c]
        for k, cos in enumerate((1.0, 0.0, -1.0, 0.0)):
            sel = q == k
            n = int(sel.sum())
            pu = ch.p_signal * (1 + ch.visibility * cos) / 2 + ch.noise_per_detector
            pl = ch.p_signal * (1 - ch.visibility * cos) / 2 + ch.noise_per_detector
            assert within_3sigma(int(np.count_nonzero(o[sel] == Outcome.DOUBLE)), n, pu * pl), (key, k)


def test_channel_independence(baseline_run):
    log, _r, _t = baseline_run
    a = (log.outcome[0] != 0).astype(float)
    b = (log.outcome[1] != 0).astype(float)
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) <= 3 / math.sqrt(log.n_pulses)


def test_m1_equivalence_and_stream_isolation():
    wdm = paper_wdm()
    one = wdm.replace(wavelength_channels=wdm.wavelength_channels[:1])
    a = run_session(SessionSpec(one, 100_000, 9))
    b = run_wdm(SessionSpec(wdm, 100_000, 9))
    assert b.channels == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert np.array_equal(a.outcome, b.outcome[:2])
    assert np.array_equal(a.alice_bit, b.alice_bit[:2])
    with pytest.raises(ValueError):
        run_wdm(SessionSpec(one, 10))


def test_wdm_channels_match_closed_form():
    wdm = paper_wdm()
    log = run_wdm(SessionSpec(wdm, 2_000_000, 3))
    n = log.n_pulses
    for c, key in enumerate(log.channels):
        clicks = int(np.count_nonzero(log.outcome[c] & 1))
        p_usb, _ = _expected_detector_probs(wdm, *key)
        assert within_3sigma(clicks, n, p_usb), key


def test_dispersion_raises_error_rate(baseline):
    cfg = baseline.replace(link=dataclasses.replace(baseline.link, dcf_residual_ps_nm=170.0))
    log = run_session(SessionSpec(cfg, 1_000_000, 5))
    for c, key in enumerate(log.channels):
        o = log.outcome[c]
        m = (log.alice_basis[c] == log.bob_basis[c]) & ((o == 1) | (o == 2))
        err = np.count_nonzero(log.alice_bit[c][m] != (o[m] == 2))
        q = physics.channel_qber(cfg, *key)
        assert within_3sigma(int(err), int(m.sum()), q), key


def test_pulse_and_detection_records(baseline):
    log = run_session(SessionSpec(baseline, 100, 0))
    p = log.pulse_record(7)
    assert set(p.alice_bit) == {(0, 0), (0, 1)}
    for key in p.alice_bit:
        assert p.alice_phase[key].isclose(phase_for(p.alice_bit[key], p.alice_basis[key]))
        assert p.bob_phase[key].isclose(bob_phase_for(p.bob_basis[key]))
    d = log.detection_record(7)
    assert all(isinstance(v, Outcome) for v in d.outcome.values())
    assert sum(log.click_counts()[(0, 0)].values()) == 100


def test_session_log_csv(tmp_path, baseline):
    log = run_session(SessionSpec(baseline, 5, 0))
    path = tmp_path / "log.csv"
    log.write_csv(path)
    raw = path.read_bytes()
    lines = raw.split(b"\r\n")
    assert lines[0] == b"slot,wavelength_idx,subcarrier_idx,alice_bit,alice_basis,bob_basis,outcome"
    assert len([l for l in lines if l]) == 1 + 5 * 2
    first = lines[1].split(b",")
    assert first[:3] == [b"0", b"0", b"0"]
    assert int(first[6]) == int(log.outcome[0, 0])
