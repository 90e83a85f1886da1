"""Effective port model of the three-stage FBG sideband filter.

Stage 1 reflects the carrier to its own port, stage 2 splits the upper
from the lower half of the spectrum and stage 3 picks out each sideband.
The stages are collapsed into one matrix set by insertion loss, extinction
and carrier reflectivity:

* a sideband reaches its own port with ``10**(-IL/10)``;
* it leaks into another port of the same half at ``ER`` below that;
* leakage across halves passes two rejecting stages, ``ER**2`` below;
* the carrier port reflects ``R`` of the carrier, and the ``1 - R`` that
  gets through is then rejected like any other off-band component.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .core import ConfigError, FilterParams, WavelengthChannel


@dataclass(frozen=True)
class SpectralComponent:
    """A line in the optical spectrum at ``offset_ghz`` from the carrier.

    ``kind`` is "carrier", "sideband" or "intermod". Sidebands carry the
    subcarrier index and sign (+1 for USB, -1 for LSB).
    """

    kind: str
    offset_ghz: float
    subcarrier: int | None = None
    sign: int = 0

    @classmethod
    def carrier(cls) -> "SpectralComponent":
        return cls("carrier", 0.0)

    @classmethod
    def sideband(cls, subcarrier: int, sign: int, frequency_ghz: float) -> "SpectralComponent":
        if sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        return cls("sideband", sign * frequency_ghz, subcarrier, sign)

    @classmethod
    def intermod(cls, offset_ghz: float) -> "SpectralComponent":
        return cls("intermod", offset_ghz, None, 1 if offset_ghz > 0 else -1)

    @property
    def half(self) -> int:
        return 0 if self.offset_ghz == 0 else (1 if self.offset_ghz > 0 else -1)


@dataclass(frozen=True)
class PortMatrix:
    ports: tuple[SpectralComponent, ...]
    transmission: dict
    filter: FilterParams

    @property
    def intended(self) -> float:
        return 10 ** (-self.filter.insertion_loss_db / 10)

    @property
    def extinction(self) -> float:
        return 10 ** (-self.filter.extinction_db / 10)

    def sideband_port(self, subcarrier: int, sign: int) -> SpectralComponent:
        for p in self.ports:
            if p.kind == "sideband" and p.subcarrier == subcarrier and p.sign == sign:
                return p
        raise KeyError((subcarrier, sign))

    def row_sums(self) -> dict:
        sums: dict = {}
        for (comp, _port), t in self.transmission.items():
            sums[comp] = sums.get(comp, 0.0) + t
        return sums


def _leak(component: SpectralComponent, port: SpectralComponent, flt: FilterParams) -> float:
    il = 10 ** (-flt.insertion_loss_db / 10)
    er = 10 ** (-flt.extinction_db / 10)
    refl = flt.carrier_reflectivity
    if port.kind == "carrier":
        if component.kind == "carrier":
            return refl
        return il * er
    # sideband port
    if component.kind == "carrier":
        return (1.0 - refl) * il * er
    if component.offset_ghz == port.offset_ghz:
        return il
    if component.half == port.half:
        return il * er
    return il * er * er


def build_port_matrix(channel: WavelengthChannel, flt: FilterParams) -> PortMatrix:
    """Port matrix for one wavelength channel: carrier port + 2N sideband ports."""
    if not channel.subcarriers:
        raise ConfigError("filterbank needs at least one subcarrier")
    ports = [SpectralComponent.carrier()]
    for i, sc in enumerate(channel.subcarriers):
        ports.append(SpectralComponent.sideband(i, +1, sc.frequency_ghz))
        ports.append(SpectralComponent.sideband(i, -1, sc.frequency_ghz))
    ports = tuple(ports)
    transmission = {(c, p): _leak(c, p, flt) for c in ports for p in ports}
    return PortMatrix(ports, transmission, flt)


def route(matrix: PortMatrix, component: SpectralComponent) -> dict:
    """Transmission of ``component`` into every port of ``matrix``."""
    if component.kind not in ("carrier", "sideband", "intermod"):
        raise ValueError(f"unknown spectral component kind {component.kind!r}")
    if component.kind == "intermod" and component.offset_ghz == 0:
        raise ValueError("intermodulation product at the carrier frequency")
    return {p: _leak(component, p, matrix.filter) for p in matrix.ports}


def imd_frequencies(frequencies_ghz) -> list[float]:
    """Positive frequencies of the third-order products of the subcarrier tones.

    Covers 2*f_i - f_j and f_i + f_j - f_k (all indices distinct). Products
    at or below zero fold back onto the carrier sideband pair at ``|f|``;
    any product landing on a signal subcarrier raises ConfigError.
    """
    freqs = [float(f) for f in frequencies_ghz]
    products = set()
    for i, j in itertools.permutations(range(len(freqs)), 2):
        products.add(2 * freqs[i] - freqs[j])
    for i, j, k in itertools.permutations(range(len(freqs)), 3):
        if i < j:
            products.add(freqs[i] + freqs[j] - freqs[k])
    products = {round(abs(p), 9) for p in products}
    products.discard(0.0)
    signal = {round(f, 9) for f in freqs}
    collisions = sorted(products & signal)
    if collisions:
        raise ConfigError(
            [f"intermodulation product at {c:g} GHz collides with a signal subcarrier" for c in collisions]
        )
    return sorted(products)


def imd_components(frequencies_ghz) -> list[SpectralComponent]:
    out = []
    for f in imd_frequencies(frequencies_ghz):
        out.append(SpectralComponent.intermod(f))
        out.append(SpectralComponent.intermod(-f))
    return out
