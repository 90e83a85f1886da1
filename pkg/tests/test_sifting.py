import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import ideal_config
from scmqkd import physics
from scmqkd.core import Outcome, SubcarrierParams, WavelengthChannel
from scmqkd.sifting import (
    SiftedKey, aggregate, apply_raw_key_cap, export_keys, measure_qber, reconcile, sift_session, superkey,
)
from scmqkd.simulator import SessionLog, SessionSpec, run_session


def hand_log(cfg, alice_bit, alice_basis, bob_basis, outcome):
    arr = lambda x: np.array([x], dtype=np.uint8)
    return SessionLog(cfg, len(alice_bit), 0, [(0, 0)], arr(alice_bit), arr(alice_basis), arr(bob_basis),
                      arr(outcome))


def test_reconcile_hand_log(ideal):
    log = hand_log(ideal,
                   alice_bit=[0, 1, 1, 0, 1, 0],
                   alice_basis=[0, 0, 1, 1, 0, 1],
                   bob_basis=[0, 0, 1, 0, 0, 1],
                   outcome=[Outcome.USB, Outcome.LSB, Outcome.DOUBLE, Outcome.USB, Outcome.NONE, Outcome.LSB])
    a, b = reconcile(log)[(0, 0)]
    assert list(a.source_slots) == [0, 1, 5]
    assert list(a.bits) == [0, 1, 0]
    assert list(b.bits) == [0, 1, 1]
    assert measure_qber(a, b) == pytest.approx(1 / 3)


def test_reconcile_malformed(ideal):
    log = hand_log(ideal, [0, 1], [0, 0], [0, 0], [1, 1])
    log.n_pulses = 3
    with pytest.raises(ValueError):
        reconcile(log)


def test_ideal_run_zero_qber():
    cfg = ideal_config()
    log = run_session(SessionSpec(cfg, 100_000, 3))
    a, b = reconcile(log)[(0, 0)]
    assert a == SiftedKey(a.channel, b.bits, b.source_slots)
    assert measure_qber(a, b) == 0.0
    n = log.n_pulses
    # matched pulses always click once; mismatched ones click once with prob 1/2 but are discarded
    assert abs(len(a) - n / 2) <= 3 * math.sqrt(n / 4)


def test_measure_qber_examples():
    slots = np.arange(4)
    a = SiftedKey((0, 0), np.array([0, 1, 1, 0], np.uint8), slots)
    assert measure_qber(a, a) == 0.0
    assert measure_qber(a, SiftedKey((0, 0), 1 - a.bits, slots)) == 1.0
    with pytest.raises(ValueError):
        measure_qber(SiftedKey((0, 0), np.zeros(0, np.uint8), np.zeros(0)), SiftedKey((0, 0), np.zeros(0, np.uint8), np.zeros(0)))
    with pytest.raises(ValueError):
        measure_qber(a, SiftedKey((0, 0), a.bits, slots + 1))


def test_sifted_key_lengths_must_match():
    with pytest.raises(ValueError):
        SiftedKey((0, 0), np.zeros(3, np.uint8), np.arange(2))


def test_raw_key_cap():
    key = SiftedKey((0, 0), np.arange(112_000) % 2, np.arange(112_000) * 3)
    capped = apply_raw_key_cap(key, 4096)
    assert len(capped) == 4096 and np.array_equal(capped.source_slots, key.source_slots[:4096])
    assert apply_raw_key_cap(key) is key
    assert len(apply_raw_key_cap(key, 0)) == 0
    with pytest.raises(ValueError):
        apply_raw_key_cap(key, -1)


@given(st.lists(st.booleans(), max_size=200))
def test_hex_roundtrip(bits):
    key = SiftedKey((1, 0), np.array(bits, dtype=np.uint8), np.arange(len(bits)))
    assert SiftedKey.from_hex((1, 0), key.to_hex(), len(bits)) == key


def test_hex_is_msb_first():
    key = SiftedKey((0, 0), np.array([1, 0, 0, 0, 0, 0, 0, 0, 1], np.uint8), np.arange(9))
    assert key.to_hex() == "8080"


def test_superkey_order():
    k1 = SiftedKey((0, 0), np.array([1, 1], np.uint8), np.array([2, 5]))
    k2 = SiftedKey((0, 1), np.array([0, 0, 0], np.uint8), np.array([2, 3, 9]))
    # (slot, channel) order: (2,k1) (2,k2) (3,k2) (5,k1) (9,k2)
    sk = superkey({(0, 0): k1, (0, 1): k2}, [(0, 0), (0, 1)])
    assert list(sk) == [1, 0, 0, 1, 0]
    assert list(superkey({(0, 0): k1}, [(0, 0)])) == [1, 1]


def test_aggregate_single_channel():
    k = SiftedKey((0, 0), np.array([1, 0, 1], np.uint8), np.array([1, 4, 6]))
    r = aggregate([(0, 0)], {(0, 0): k}, {(0, 0): k}, 10, 1e6)
    assert r.gain_db == 0.0
    assert np.array_equal(r.superkey_alice, k.bits)
    assert r.aggregated_rate_bps == pytest.approx(3e5)
    assert r.secret_rate_bps == 0.31 * r.aggregated_rate_bps


def test_aggregate_bob_only_with_disclosed_counts():
    k = SiftedKey((0, 0), np.array([1, 0, 1, 1], np.uint8), np.arange(4))
    r = aggregate([(0, 0)], None, {(0, 0): k}, 100, 1e6, error_counts={(0, 0): (1, 4)})
    assert r.qber_measured[(0, 0)] == 0.25 and r.superkey_alice is None


def test_aggregate_needs_channel():
    with pytest.raises(ValueError):
        aggregate([], {}, {}, 10, 1e6)


def test_baseline_sifting(baseline_run):
    log, result, _t = baseline_run
    n = log.n_pulses
    assert sum(result.sifted_rate_bps.values()) == pytest.approx(result.aggregated_rate_bps, rel=1e-15)
    for key in result.channels:
        a, b = result.alice_keys[key], result.bob_keys[key]
        assert np.array_equal(a.source_slots, b.source_slots)
        assert np.all(np.diff(a.source_slots) > 0)
        est = physics.rate_estimate(log.config, *key)
        p = 0.5 * est.detection_prob_per_pulse
        # double clicks are dropped, so the oracle length carries the small discard correction
        sigma = math.sqrt(n * p * (1 - p))
        assert len(a) == pytest.approx(n * p, abs=3 * sigma + n * 1e-4)
        assert len(a) == pytest.approx(112_000, rel=0.02)
        q = result.qber_measured[key]
        assert q == pytest.approx(0.0202, abs=0.002)
        q_ref = physics.channel_qber(log.config, *key)
        assert abs(q - q_ref) <= 3 * math.sqrt(q_ref * (1 - q_ref) / len(a))
    assert result.gain_db == pytest.approx(3.0, abs=0.2)


def test_double_click_slots_absent(baseline_run):
    log, result, _t = baseline_run
    c = 0
    doubles = np.flatnonzero(log.outcome[c] == Outcome.DOUBLE)
    assert len(doubles) > 0
    assert not np.isin(doubles, result.alice_keys[log.channels[c]].source_slots).any()


def test_export_keys(tmp_path):
    cfg = ideal_config()
    result = sift_session(run_session(SessionSpec(cfg, 1000, 0)))
    written = export_keys(result, tmp_path, 0, "abc")
    assert sorted(written) == ["key_alice_w0_s0.hex", "key_alice_w0_s0.json", "key_bob_w0_s0.hex",
                               "key_bob_w0_s0.json"]
    meta = json.loads((tmp_path / "key_bob_w0_s0.json").read_text())
    assert meta["length"] == len(result.bob_keys[(0, 0)]) and meta["config_hash"] == "abc"
    hexstr = (tmp_path / "key_bob_w0_s0.hex").read_text().strip()
    assert SiftedKey.from_hex((0, 0), hexstr, meta["length"]).bits.tolist() == result.bob_keys[(0, 0)].bits.tolist()


def test_sift_session_cap(baseline):
    log = run_session(SessionSpec(baseline, 300_000, 0))
    r = sift_session(log, cap_bits=100)
    assert all(len(k) == 100 for k in r.alice_keys.values())
    assert r.aggregated_rate_bps == pytest.approx(200 / 0.3)


def test_gain_equal_rates_grid():
    for n_sub in (1, 2, 3):
        freqs = [10.0, 13.0, 21.0][:n_sub]
        cfg = ideal_config().replace(wavelength_channels=[WavelengthChannel(1550.0, [SubcarrierParams(f, 0.1) for f in freqs])])
        r = sift_session(run_session(SessionSpec(cfg, 200_000, 1)))
        assert r.gain_db == pytest.approx(10 * math.log10(n_sub), abs=0.05)
