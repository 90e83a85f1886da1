"""Domain types, BB84 phase algebra and configuration handling.

All types are frozen dataclasses; a config is plain data and only
:func:`validate_config` enforces its invariants, so invalid configs can be
built (and reported on) without raising at construction time.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

TWO_PI = 2.0 * math.pi
PHASE_TOL = 1e-12


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``errors`` holds one message per violated invariant.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class Bit(enum.IntEnum):
    ZERO = 0
    ONE = 1


class Basis(enum.IntEnum):
    """Z carries Alice phases {0, pi}; X carries {pi/2, 3pi/2}."""

    Z = 0
    X = 1


class Outcome(enum.IntEnum):
    NONE = 0
    USB = 1
    LSB = 2
    DOUBLE = 3


@dataclass(frozen=True)
class Phase:
    """A phase in radians, canonicalised to [0, 2pi)."""

    radians: float

    def __post_init__(self):
        r = math.fmod(float(self.radians), TWO_PI)
        if r < 0:
            r += TWO_PI
        # snap values a hair below 2pi back to 0
        if TWO_PI - r < PHASE_TOL:
            r = 0.0
        object.__setattr__(self, "radians", r)

    @classmethod
    def quarter(cls, k: int) -> "Phase":
        """Exact multiple of pi/2."""
        return cls(_QUARTERS[k % 4])

    def __add__(self, other: "Phase") -> "Phase":
        return Phase(self.radians + other.radians)

    def __sub__(self, other: "Phase") -> "Phase":
        return Phase(self.radians - other.radians)

    def cos(self) -> float:
        k = self.quarter_index()
        if k is not None:
            return _QUARTER_COS[k]
        return math.cos(self.radians)

    def quarter_index(self) -> Optional[int]:
        """Index k if the phase is k*pi/2 within tolerance, else None."""
        k = round(self.radians / (math.pi / 2))
        if abs(self.radians - k * math.pi / 2) < PHASE_TOL:
            return k % 4
        return None

    def isclose(self, other: "Phase", tol: float = PHASE_TOL) -> bool:
        d = abs(self.radians - other.radians)
        return min(d, TWO_PI - d) < tol


_QUARTERS = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)
_QUARTER_COS = (1.0, 0.0, -1.0, 0.0)


def phase_quarter(bit: int, basis: int) -> int:
    """Alice's phase as a multiple of pi/2: 2*bit + basis."""
    return 2 * int(bit) + int(basis)


def phase_for(bit: Bit, basis: Basis) -> Phase:
    return Phase.quarter(phase_quarter(bit, basis))


def bob_phase_for(basis: Basis) -> Phase:
    return Phase.quarter(int(basis))


def delta_phase(alice: Phase, bob: Phase) -> Phase:
    return alice - bob


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SubcarrierParams:
    frequency_ghz: float
    mean_photon_number: float = 1.0
    modulation_index: float = 0.2


@dataclass(frozen=True)
class WavelengthChannel:
    center_wavelength_nm: float
    subcarriers: tuple[SubcarrierParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "subcarriers", tuple(self.subcarriers))


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 0.1
    dark_count_prob: float = 1e-5
    gate_width_ns: float = 2.5


@dataclass(frozen=True)
class LinkParams:
    fiber_loss_db: float = 4.0
    bob_loss_db: float = 4.5
    cwdm_insertion_db: float = 0.5
    dispersion_ps_nm_km: float = 17.0
    fiber_length_km: float = 11.0
    dcf_residual_ps_nm: float = 0.0
    reference_active: bool = True


def _default_raman_kappa() -> float:
    # Raman clicks equal the dark-count probability at -25 dBm, T_B = 4.5 dB
    return 1e-5 / (10 ** ((-25.0 - 30.0) / 10) * 10 ** (-4.5 / 10))


DEFAULT_RAMAN_KAPPA = _default_raman_kappa()


@dataclass(frozen=True)
class ReferenceChannelParams:
    power_dbm: float = -25.0
    raman_coefficient_per_w_per_gate: float = DEFAULT_RAMAN_KAPPA


@dataclass(frozen=True)
class FilterParams:
    extinction_db: float = 25.0
    insertion_loss_db: float = 1.5
    carrier_reflectivity: float = 0.999


@dataclass(frozen=True)
class CrosstalkParams:
    """Levels of the parametric crosstalk terms.

    ``imd_level_db`` is the power of each third-order product below the
    signal sideband before filtering; the filter extinction is applied on
    top of it. Laser phase noise is ``phn_scale`` times a signal-relative
    floor of ``phn_rejection_db``.
    """

    imd_level_db: float = 23.0
    phn_rejection_db: float = 23.0
    phn_scale: float = 1e-3


@dataclass(frozen=True)
class SystemConfig:
    wavelength_channels: tuple[WavelengthChannel, ...]
    detectors: DetectorParams = field(default_factory=DetectorParams)
    link: LinkParams = field(default_factory=LinkParams)
    reference: ReferenceChannelParams = field(default_factory=ReferenceChannelParams)
    filter: FilterParams = field(default_factory=FilterParams)
    crosstalk: CrosstalkParams = field(default_factory=CrosstalkParams)
    visibility: float = 0.96
    pulse_rate_hz: float = 1e6
    secret_fraction: float = 0.31

    def __post_init__(self):
        object.__setattr__(self, "wavelength_channels", tuple(self.wavelength_channels))

    def channels(self) -> list[tuple[int, int]]:
        """All (wavelength_idx, subcarrier_idx) pairs in lexicographic order."""
        return [
            (w, s)
            for w, wc in enumerate(self.wavelength_channels)
            for s in range(len(wc.subcarriers))
        ]

    def subcarrier(self, w: int, s: int) -> SubcarrierParams:
        return self.wavelength_channels[w].subcarriers[s]

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


def to_dict(config: SystemConfig) -> dict:
    d = dataclasses.asdict(config)
    d["wavelength_channels"] = [
        {"center_wavelength_nm": wc["center_wavelength_nm"], "subcarriers": list(wc["subcarriers"])}
        for wc in d["wavelength_channels"]
    ]
    return d


_SECTIONS = {
    "detectors": DetectorParams,
    "link": LinkParams,
    "reference": ReferenceChannelParams,
    "filter": FilterParams,
    "crosstalk": CrosstalkParams,
}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError([f"{where}: unknown key '{k}'" for k in unknown])
    missing = sorted(
        f.name for f in dataclasses.fields(cls)
        if f.name not in data
        and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    )
    if missing:
        raise ConfigError([f"{where}: missing key '{k}'" for k in missing])
    return cls(**data)


def from_dict(data: dict) -> SystemConfig:
    """Build a config from its JSON form. Unknown keys are an error."""
    if not isinstance(data, dict):
        raise ConfigError("config: expected an object")
    top = {f.name for f in dataclasses.fields(SystemConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError([f"config: unknown key '{k}'" for k in unknown])
    if "wavelength_channels" not in data:
        raise ConfigError("config: missing 'wavelength_channels'")
    kwargs = dict(data)
    channels = []
    for i, wc in enumerate(data["wavelength_channels"]):
        wc = dict(wc) if isinstance(wc, dict) else wc
        subs = [
            _build(SubcarrierParams, sc, f"wavelength_channels[{i}].subcarriers[{j}]")
            for j, sc in enumerate(wc.get("subcarriers", []) if isinstance(wc, dict) else [])
        ]
        if isinstance(wc, dict):
            wc["subcarriers"] = subs
        channels.append(_build(WavelengthChannel, wc, f"wavelength_channels[{i}]"))
    kwargs["wavelength_channels"] = channels
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build(cls, data[name], name)
    return SystemConfig(**kwargs)


def load_config(path) -> SystemConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def save_config(config: SystemConfig, path) -> None:
    Path(path).write_text(json.dumps(to_dict(config), indent=2) + "\n")


def config_hash(config: SystemConfig) -> str:
    canonical = json.dumps(to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def paper_baseline() -> SystemConfig:
    """Two subcarriers (10, 15 GHz) on one carrier, 6.5 dB total loss."""
    return load_config(Path(__file__).parent / "data" / "paper_baseline.json")


def paper_wdm() -> SystemConfig:
    """The two-carrier, two-subcarrier (M*N = 4) set-up."""
    return load_config(Path(__file__).parent / "data" / "paper_wdm.json")


def _check_range(errors, name, value, lo=None, hi=None, lo_open=False, hi_open=False):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or math.isnan(value):
        errors.append(f"{name}: not a number ({value!r})")
        return
    if lo is not None and (value < lo or (lo_open and value == lo)):
        errors.append(f"{name}: {value} out of range")
    elif hi is not None and (value > hi or (hi_open and value == hi)):
        errors.append(f"{name}: {value} out of range")


def validate_config(config: SystemConfig) -> SystemConfig:
    """Check every invariant of ``config``; return it unchanged if valid.

    Raises ConfigError listing each violation.
    """
    errors: list[str] = []
    if not config.wavelength_channels:
        errors.append("wavelength_channels: need at least one wavelength channel")
    for i, wc in enumerate(config.wavelength_channels):
        where = f"wavelength_channels[{i}]"
        _check_range(errors, f"{where}.center_wavelength_nm", wc.center_wavelength_nm, 0, lo_open=True)
        if not wc.subcarriers:
            errors.append(f"{where}: need at least one subcarrier")
        freqs = []
        for j, sc in enumerate(wc.subcarriers):
            sw = f"{where}.subcarriers[{j}]"
            _check_range(errors, f"{sw}.frequency_ghz", sc.frequency_ghz, 0, lo_open=True)
            mu = sc.mean_photon_number
            if not isinstance(mu, (int, float)) or isinstance(mu, bool) or not 0 < mu <= 1:
                errors.append(f"{sw}.mean_photon_number: mean photon number {mu!r} not in (0, 1]")
            _check_range(errors, f"{sw}.modulation_index", sc.modulation_index, 0, 1, lo_open=True)
            freqs.append(sc.frequency_ghz)
        dupes = sorted({f for f in freqs if freqs.count(f) > 1})
        for f in dupes:
            errors.append(f"{where}: duplicate subcarrier frequency {f} GHz")

    d = config.detectors
    _check_range(errors, "detectors.efficiency", d.efficiency, 0, 1, lo_open=True)
    _check_range(errors, "detectors.dark_count_prob", d.dark_count_prob, 0, 1)
    _check_range(errors, "detectors.gate_width_ns", d.gate_width_ns, 0, lo_open=True)

    link = config.link
    for name in ("fiber_loss_db", "bob_loss_db", "cwdm_insertion_db", "fiber_length_km"):
        _check_range(errors, f"link.{name}", getattr(link, name), 0)
    _check_range(errors, "link.dispersion_ps_nm_km", link.dispersion_ps_nm_km)
    _check_range(errors, "link.dcf_residual_ps_nm", link.dcf_residual_ps_nm)
    if not isinstance(link.reference_active, bool):
        errors.append("link.reference_active: must be a boolean")

    _check_range(errors, "reference.power_dbm", config.reference.power_dbm)
    _check_range(errors, "reference.raman_coefficient_per_w_per_gate",
                 config.reference.raman_coefficient_per_w_per_gate, 0)

    flt = config.filter
    _check_range(errors, "filter.extinction_db", flt.extinction_db, 0)
    _check_range(errors, "filter.insertion_loss_db", flt.insertion_loss_db, 0)
    _check_range(errors, "filter.carrier_reflectivity", flt.carrier_reflectivity, 0, 1)

    xt = config.crosstalk
    _check_range(errors, "crosstalk.imd_level_db", xt.imd_level_db, 0)
    _check_range(errors, "crosstalk.phn_rejection_db", xt.phn_rejection_db, 0)
    _check_range(errors, "crosstalk.phn_scale", xt.phn_scale, 0)

    _check_range(errors, "visibility", config.visibility, 0, 1, lo_open=True)
    _check_range(errors, "pulse_rate_hz", config.pulse_rate_hz, 0, lo_open=True)
    _check_range(errors, "secret_fraction", config.secret_fraction, 0, 1, lo_open=True)

    if errors:
        raise ConfigError(errors)

    # derived quantities need the physics models; only run on sane inputs
    from . import filterbank, physics

    for w, wc in enumerate(config.wavelength_channels):
        try:
            filterbank.imd_frequencies([sc.frequency_ghz for sc in wc.subcarriers])
        except ConfigError as exc:
            errors.extend(f"wavelength_channels[{w}]: {e}" for e in exc.errors)
            continue
        matrix = filterbank.build_port_matrix(wc, config.filter)
        if max(matrix.row_sums().values()) > 1.0 + 1e-12:
            errors.append(f"wavelength_channels[{w}]: filter port matrix has gain (row sum > 1)")
    if errors:
        raise ConfigError(errors)

    for w, s in config.channels():
        p_max = physics.max_detector_click_probability(config, w, s)
        if p_max > 1.0:
            errors.append(f"channel ({w},{s}): click probability {p_max:.4g} > 1")
    if errors:
        raise ConfigError(errors)
    return config
