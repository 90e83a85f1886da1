"""Closed-form link, noise and key-rate models.

Probabilities are per detector gate. ``p_x`` and the dark-count term
``d_B`` are totals over the USB/LSB detector pair of one subcarrier, which
is how they enter the QBER expression.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import filterbank
from .core import LinkParams, FilterParams, Phase, ReferenceChannelParams, SystemConfig

SPEED_OF_LIGHT = 299_792_458.0  # m/s


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SidebandProbabilities:
    p_usb: float
    p_lsb: float


@dataclass(frozen=True)
class CrosstalkBudget:
    p_raman: float
    p_filter: float
    p_imd: float
    p_phn: float

    @property
    def p_x(self) -> float:
        return self.p_raman + self.p_filter + self.p_imd + self.p_phn


@dataclass(frozen=True)
class RateEstimate:
    detection_prob_per_pulse: float
    sifted_rate_bps: float
    secret_rate_bps: float
    qber: float


def detection_probabilities(delta_phi, rho, mu, transmission, visibility, dispersion_offset=0.0):
    """Click probabilities of the USB and LSB detectors for one subcarrier.

    ``delta_phi`` and ``dispersion_offset`` may be Phase objects or radians.
    """
    signal = rho * mu * transmission
    if signal > 1.0:
        raise ValueError(f"rho*mu*T = {signal} exceeds 1")
    if signal < 0:
        raise ValueError("negative signal probability")
    total = _as_phase(delta_phi) + _as_phase(dispersion_offset)
    c = total.cos()
    return SidebandProbabilities(signal * (1 + visibility * c) / 2, signal * (1 - visibility * c) / 2)


def _as_phase(x) -> Phase:
    return x if isinstance(x, Phase) else Phase(x)


def end_to_end_transmission(link: LinkParams, flt: FilterParams) -> float:
    loss_db = link.fiber_loss_db + 2 * link.cwdm_insertion_db + flt.insertion_loss_db
    return db_to_linear(-loss_db)


def dispersion_phase_offset(D_ps_nm_km, length_km, wavelength_nm, f_ghz) -> float:
    """Two-sideband dispersion phase pi*lambda^2*D*L*f^2/c, in radians."""
    lam = wavelength_nm * 1e-9
    dl = D_ps_nm_km * length_km * 1e-3  # ps/nm -> s/m
    f = f_ghz * 1e9
    return math.pi * lam**2 * dl * f**2 / SPEED_OF_LIGHT


def channel_dispersion_offset(config: SystemConfig, w: int, s: int) -> float:
    # dcf_residual_ps_nm is the net D*L left after compensation
    return dispersion_phase_offset(
        config.link.dcf_residual_ps_nm, 1.0,
        config.wavelength_channels[w].center_wavelength_nm,
        config.subcarrier(w, s).frequency_ghz,
    )


def raman_click_probability(ref: ReferenceChannelParams, bob_loss_db: float, active: bool) -> float:
    if not active:
        return 0.0
    return ref.raman_coefficient_per_w_per_gate * dbm_to_watts(ref.power_dbm) * db_to_linear(-bob_loss_db)


def signal_probability(config: SystemConfig, w: int, s: int) -> float:
    t = end_to_end_transmission(config.link, config.filter)
    return config.detectors.efficiency * config.subcarrier(w, s).mean_photon_number * t


def crosstalk_budget(config: SystemConfig, w: int, s: int) -> CrosstalkBudget:
    wc = config.wavelength_channels[w]
    matrix = filterbank.build_port_matrix(wc, config.filter)
    il = matrix.intended
    own = (matrix.sideband_port(s, +1), matrix.sideband_port(s, -1))
    p_sig = [signal_probability(config, w, j) for j in range(len(wc.subcarriers))]

    # photons of the other subcarriers; p_sig already contains the filter IL
    p_filter = 0.0
    for j, other in enumerate(wc.subcarriers):
        if j == s:
            continue
        for sign in (+1, -1):
            comp = filterbank.SpectralComponent.sideband(j, sign, other.frequency_ghz)
            row = filterbank.route(matrix, comp)
            p_filter += sum(row[p] for p in own) / il * p_sig[j] / 2

    # each third-order line sits imd_level_db below a mean signal sideband
    imd_line = float(np.mean(p_sig)) / 2 * db_to_linear(-config.crosstalk.imd_level_db)
    p_imd = 0.0
    for comp in filterbank.imd_components([sc.frequency_ghz for sc in wc.subcarriers]):
        row = filterbank.route(matrix, comp)
        p_imd += sum(row[p] for p in own) / il * imd_line

    p_phn = p_sig[s] * db_to_linear(-config.crosstalk.phn_rejection_db) * config.crosstalk.phn_scale
    p_raman = raman_click_probability(config.reference, config.link.bob_loss_db, config.link.reference_active)
    return CrosstalkBudget(p_raman, p_filter, p_imd, p_phn)


def effective_visibility(config: SystemConfig, w: int, s: int) -> float:
    """Visibility after dispersion; zero when the stabilising reference is off."""
    if not config.link.reference_active:
        return 0.0
    return config.visibility * math.cos(channel_dispersion_offset(config, w, s))


def qber_closed_form(v_eff: float, p_signal: float, p_x: float, d_b: float) -> float:
    denom = 2 * (p_signal + p_x + d_b)
    if denom <= 0:
        raise ValueError("no clicks: p_signal + p_x + d_B must be > 0")
    return ((1 - v_eff) * p_signal + p_x + d_b) / denom


def click_probabilities(config: SystemConfig, w: int, s: int) -> tuple[float, float, float]:
    """(p_signal, p_x, d_B) for one subcarrier channel."""
    return (
        signal_probability(config, w, s),
        crosstalk_budget(config, w, s).p_x,
        config.detectors.dark_count_prob,
    )


def max_detector_click_probability(config: SystemConfig, w: int, s: int) -> float:
    p_sig, p_x, d_b = click_probabilities(config, w, s)
    return p_sig * (1 + config.visibility) / 2 + (p_x + d_b) / 2


def channel_qber(config: SystemConfig, w: int, s: int) -> float:
    p_sig, p_x, d_b = click_probabilities(config, w, s)
    return qber_closed_form(effective_visibility(config, w, s), p_sig, p_x, d_b)


def rate_estimate(config: SystemConfig, w: int, s: int) -> RateEstimate:
    p_sig, p_x, d_b = click_probabilities(config, w, s)
    detection = p_sig + p_x + d_b
    sifted = config.pulse_rate_hz * detection * 0.5
    qber = qber_closed_form(effective_visibility(config, w, s), p_sig, p_x, d_b) if detection > 0 else 0.0
    return RateEstimate(detection, sifted, config.secret_fraction * sifted, qber)


def multiplexing_gain_db(per_channel_rates) -> float:
    rates = [float(r) for r in per_channel_rates]
    if not rates or any(r < 0 for r in rates):
        raise ValueError("rates must be non-negative and non-empty")
    best = max(rates)
    if best <= 0:
        raise ValueError("all rates are zero")
    return 10 * math.log10(sum(rates) / best)
