"""Analytic tables, Monte-Carlo vs closed-form comparison and sweeps.

These back the ``analytic``, ``compare`` and ``sweep`` commands and are
usable directly from scripts. Each function returns a list of row dicts
whose keys follow the column tuples defined here.
"""
from __future__ import annotations

import dataclasses
import itertools
import math

import numpy as np

from . import physics
from .core import ConfigError, Outcome, SystemConfig, validate_config
from .sifting import SessionResult, sift_session
from .simulator import SessionLog, SessionSpec, run_session

ANALYTIC_COLUMNS = (
    "wavelength_idx", "subcarrier_idx", "frequency_ghz", "transmission", "p_signal",
    "p_raman", "p_filter", "p_imd", "p_phn", "p_x", "dark_count_prob", "v_eff",
    "detection_prob", "qber", "sifted_rate_bps", "secret_rate_bps",
)

RATES_COLUMNS = (
    "wavelength_idx", "subcarrier_idx", "frequency_ghz", "n_pulses", "sifted_bits", "errors",
    "qber_measured", "sifted_rate_bps", "secret_rate_bps", "qber_analytic", "sifted_rate_analytic_bps",
)

SUMMARY_COLUMNS = ("n_channels", "n_pulses", "aggregated_rate_bps", "secret_rate_bps", "gain_db")

COMPARE_COLUMNS = (
    "wavelength_idx", "subcarrier_idx", "metric", "mc_value", "analytic_value", "sigma", "z_score", "pass",
)

SWEEP_TAIL = (
    "source", "wavelength_idx", "subcarrier_idx", "frequency_ghz", "pin_tb_w", "p_raman", "p_filter",
    "p_imd", "p_phn", "p_x", "detection_prob", "qber", "sifted_rate_bps", "secret_rate_bps",
    "aggregated_rate_bps", "gain_db",
)

Z_LIMIT = 3.0


# --- config overrides -------------------------------------------------------


def _coerce(old, value):
    if isinstance(old, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"cannot read {value!r} as a boolean")
        return bool(value)
    if isinstance(old, (int, float)):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"cannot read {value!r} as a number") from None
    return value


def set_field(config: SystemConfig, path: str, value) -> SystemConfig:
    """Return ``config`` with one field replaced.

    ``path`` is a dotted field name (``link.dcf_residual_ps_nm``,
    ``visibility``), ``subcarrier.<field>`` to set a field on every
    subcarrier, ``subcarriers`` to keep the first N subcarriers of every
    carrier, or ``wavelengths`` to keep the first M carriers.
    """
    if path == "subcarriers":
        n = int(float(value))
        if n < 1 or any(n > len(wc.subcarriers) for wc in config.wavelength_channels):
            raise ConfigError(f"subcarriers={n} outside the configured list")
        return config.replace(wavelength_channels=[
            dataclasses.replace(wc, subcarriers=wc.subcarriers[:n]) for wc in config.wavelength_channels
        ])
    if path == "wavelengths":
        m = int(float(value))
        if not 1 <= m <= len(config.wavelength_channels):
            raise ConfigError(f"wavelengths={m} outside the configured list")
        return config.replace(wavelength_channels=config.wavelength_channels[:m])
    head, _, rest = path.partition(".")
    if head == "subcarrier" and rest:
        sample = config.wavelength_channels[0].subcarriers[0]
        if rest not in {f.name for f in dataclasses.fields(sample)}:
            raise ConfigError(f"unknown subcarrier field {rest!r}")
        return config.replace(wavelength_channels=[
            dataclasses.replace(wc, subcarriers=[
                dataclasses.replace(sc, **{rest: _coerce(getattr(sc, rest), value)}) for sc in wc.subcarriers
            ]) for wc in config.wavelength_channels
        ])
    names = {f.name for f in dataclasses.fields(config)}
    if head not in names or head == "wavelength_channels":
        raise ConfigError(f"unknown config field {path!r}")
    if not rest:
        return config.replace(**{head: _coerce(getattr(config, head), value)})
    section = getattr(config, head)
    if rest not in {f.name for f in dataclasses.fields(section)}:
        raise ConfigError(f"unknown config field {path!r}")
    new = dataclasses.replace(section, **{rest: _coerce(getattr(section, rest), value)})
    return config.replace(**{head: new})


def parse_assignment(text: str) -> tuple[str, list[str]]:
    """``field=v1,v2`` -> (field, [v1, v2])."""
    field, sep, values = text.partition("=")
    if not sep or not field or not values:
        raise ConfigError(f"expected field=v1,v2,... got {text!r}")
    return field.strip(), [v.strip() for v in values.split(",") if v.strip()]


# --- analytic ---------------------------------------------------------------


def analytic_rows(config: SystemConfig) -> list[dict]:
    config = validate_config(config)
    t = physics.end_to_end_transmission(config.link, config.filter)
    rows = []
    for w, s in config.channels():
        b = physics.crosstalk_budget(config, w, s)
        est = physics.rate_estimate(config, w, s)
        rows.append({
            "wavelength_idx": w,
            "subcarrier_idx": s,
            "frequency_ghz": config.subcarrier(w, s).frequency_ghz,
            "transmission": t,
            "p_signal": physics.signal_probability(config, w, s),
            "p_raman": b.p_raman,
            "p_filter": b.p_filter,
            "p_imd": b.p_imd,
            "p_phn": b.p_phn,
            "p_x": b.p_x,
            "dark_count_prob": config.detectors.dark_count_prob,
            "v_eff": physics.effective_visibility(config, w, s),
            "detection_prob": est.detection_prob_per_pulse,
            "qber": est.qber,
            "sifted_rate_bps": est.sifted_rate_bps,
            "secret_rate_bps": est.secret_rate_bps,
        })
    return rows


# --- simulate ---------------------------------------------------------------


def simulate(config: SystemConfig, seed: int, n_pulses: int, cap_bits=None, threads=None):
    log = run_session(SessionSpec(config, n_pulses, seed), threads)
    return log, sift_session(log, cap_bits)


def rates_rows(log: SessionLog, result: SessionResult) -> list[dict]:
    rows = []
    cfg = log.config
    for w, s in log.channels:
        est = physics.rate_estimate(cfg, w, s)
        rate = result.sifted_rate_bps[(w, s)]
        rows.append({
            "wavelength_idx": w,
            "subcarrier_idx": s,
            "frequency_ghz": cfg.subcarrier(w, s).frequency_ghz,
            "n_pulses": log.n_pulses,
            "sifted_bits": len(result.alice_keys[(w, s)]),
            "errors": result.error_counts[(w, s)],
            "qber_measured": result.qber_measured[(w, s)],
            "sifted_rate_bps": rate,
            "secret_rate_bps": cfg.secret_fraction * rate,
            "qber_analytic": est.qber,
            "sifted_rate_analytic_bps": est.sifted_rate_bps,
        })
    return rows


def summary_row(result: SessionResult, n_pulses: int) -> dict:
    return {
        "n_channels": len(result.channels),
        "n_pulses": n_pulses,
        "aggregated_rate_bps": result.aggregated_rate_bps,
        "secret_rate_bps": result.secret_rate_bps,
        "gain_db": result.gain_db,
    }


# --- compare ----------------------------------------------------------------


def _z(mc, analytic, sigma):
    if math.isnan(mc):
        return math.nan
    if sigma == 0:
        return 0.0 if mc == analytic else math.inf
    return (mc - analytic) / sigma


def compare_rows(log: SessionLog, result: SessionResult, analytic_config: SystemConfig | None = None) -> list[dict]:
    """Monte-Carlo estimates next to closed-form values with binomial z-scores.

    ``analytic_config`` lets the closed-form side use different parameters
    (a sensitivity check); by default it is the simulated config.
    """
    cfg = validate_config(analytic_config or log.config)
    n = log.n_pulses
    rows = []
    for c, (w, s) in enumerate(log.channels):
        o = log.outcome[c]
        usb = np.count_nonzero((o == Outcome.USB) | (o == Outcome.DOUBLE)) / n
        lsb = np.count_nonzero((o == Outcome.LSB) | (o == Outcome.DOUBLE)) / n
        p_sig, p_x, d_b = physics.click_probabilities(cfg, w, s)
        est = physics.rate_estimate(cfg, w, s)
        per_det = (p_sig + p_x + d_b) / 2
        sd_det = math.sqrt(per_det * (1 - per_det) / n)
        q_a = est.qber
        n_sift = len(result.alice_keys[(w, s)])
        q_mc = result.qber_measured[(w, s)]
        p_sift = est.detection_prob_per_pulse / 2
        metrics = [
            ("click_prob_usb", usb, per_det, sd_det),
            ("click_prob_lsb", lsb, per_det, sd_det),
            ("detection_prob", usb + lsb, est.detection_prob_per_pulse, math.sqrt(2) * sd_det),
            ("qber", q_mc, q_a, math.sqrt(q_a * (1 - q_a) / n_sift) if n_sift else math.nan),
            ("sifted_rate_bps", result.sifted_rate_bps[(w, s)], est.sifted_rate_bps,
             cfg.pulse_rate_hz * math.sqrt(p_sift * (1 - p_sift) / n)),
        ]
        for name, mc, an, sd in metrics:
            z = _z(mc, an, sd) if not math.isnan(sd) else math.nan
            rows.append({
                "wavelength_idx": w, "subcarrier_idx": s, "metric": name,
                "mc_value": float(mc), "analytic_value": float(an), "sigma": float(sd),
                "z_score": float(z), "pass": bool(math.isnan(z) or abs(z) <= Z_LIMIT),
            })
    return rows


# --- sweep ------------------------------------------------------------------


def sweep_grid(sweeps: list[tuple[str, list]]):
    names = [name for name, _ in sweeps]
    for values in itertools.product(*[vals for _, vals in sweeps]):
        yield dict(zip(names, values))


def sweep_rows(config: SystemConfig, sweeps: list[tuple[str, list]], mode: str = "analytic",
               seed: int = 0, n_pulses: int = 100_000, threads=None) -> list[dict]:
    if mode not in ("analytic", "mc", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    if not 1 <= len(sweeps) <= 2:
        raise ConfigError("a sweep names one or two fields")
    rows = []
    for point in sweep_grid(sweeps):
        cfg = config
        for name, value in point.items():
            cfg = set_field(cfg, name, value)
        cfg = validate_config(cfg)
        pin_tb = physics.dbm_to_watts(cfg.reference.power_dbm) * physics.db_to_linear(-cfg.link.bob_loss_db)
        budgets = {k: physics.crosstalk_budget(cfg, *k) for k in cfg.channels()}
        prefix = {name: value for name, value in point.items()}

        def row(source, key, detection, qber, rate, agg, gain):
            b = budgets[key]
            return {**prefix, "source": source, "wavelength_idx": key[0], "subcarrier_idx": key[1],
                    "frequency_ghz": cfg.subcarrier(*key).frequency_ghz, "pin_tb_w": pin_tb,
                    "p_raman": b.p_raman, "p_filter": b.p_filter, "p_imd": b.p_imd, "p_phn": b.p_phn,
                    "p_x": b.p_x, "detection_prob": detection, "qber": qber, "sifted_rate_bps": rate,
                    "secret_rate_bps": cfg.secret_fraction * rate, "aggregated_rate_bps": agg,
                    "gain_db": gain}

        if mode in ("analytic", "both"):
            ests = {k: physics.rate_estimate(cfg, *k) for k in cfg.channels()}
            agg = sum(e.sifted_rate_bps for e in ests.values())
            gain = physics.multiplexing_gain_db([e.sifted_rate_bps for e in ests.values()])
            for k, e in ests.items():
                rows.append(row("analytic", k, e.detection_prob_per_pulse, e.qber, e.sifted_rate_bps, agg, gain))
        if mode in ("mc", "both"):
            log, result = simulate(cfg, seed, n_pulses, threads=threads)
            for c, k in enumerate(log.channels):
                o = log.outcome[c]
                det = (np.count_nonzero(o == Outcome.USB) + np.count_nonzero(o == Outcome.LSB)
                       + 2 * np.count_nonzero(o == Outcome.DOUBLE)) / n_pulses
                rows.append(row("mc", k, det, result.qber_measured[k], result.sifted_rate_bps[k],
                                result.aggregated_rate_bps, result.gain_db))
    return rows


def sweep_columns(sweeps) -> tuple:
    return tuple(name for name, _ in sweeps) + SWEEP_TAIL
