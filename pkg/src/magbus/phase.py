"""Phase-shifter control of the bus modes and microstrip standing-wave geometry.

The empirical phase laws are expressed in phase-shifter control degrees; the
round-trip doubling of the physical phase is already contained in the fitted
slopes, so no extra factor is applied here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy import constants

from .errors import ConfigError
from .model import (
    BusParams,
    ModeParams,
    SystemConfig,
    mhz_to_rad_ns,
    rad_ns_to_mhz,
    unwrap,
    validate,
)

#: Minimum conductor thickness (mm); the thickness correction diverges at t = 0.
MIN_THICKNESS_MM = 1e-9

_C_MM_PER_NS = constants.c * 1e-6


class LinearLaw(NamedTuple):
    """``f(phi) = slope * phi + intercept`` with phi in degrees, f in MHz."""

    slope_mhz_per_deg: float
    intercept_mhz: float

    def __call__(self, phi):
        return self.slope_mhz_per_deg * np.asarray(phi, dtype=float) + self.intercept_mhz

    def inverse(self, f_mhz):
        if self.slope_mhz_per_deg == 0:
            raise ConfigError("cannot invert a zero-slope phase law")
        return (np.asarray(f_mhz, dtype=float) - self.intercept_mhz) / self.slope_mhz_per_deg


@dataclass(frozen=True)
class PhaseModel:
    """Bus frequency laws, maximum magnon-bus coupling (rad/ns) and YIG offset (deg)."""

    bus1: LinearLaw
    bus2: LinearLaw
    g_mt_max: float
    phi0: float = 0.0

    def __post_init__(self):
        if not self.g_mt_max >= 0:
            raise ConfigError("g_mt_max must be ≥ 0")
        for law in (self.bus1, self.bus2):
            if not all(math.isfinite(x) for x in law):
                raise ConfigError("phase-law coefficients must be finite")


#: Measured laws: 0.319 and 0.308 MHz/deg, g_mt_max / 2 pi = 10 MHz.
REFERENCE_PHASE_MODEL = PhaseModel(
    bus1=LinearLaw(0.319, 4981.6),
    bus2=LinearLaw(0.308, 4928.9),
    g_mt_max=mhz_to_rad_ns(10.0),
    phi0=0.0,
)


def omega_t_of_phase(model: PhaseModel, phi):
    """Bus angular frequencies ``(omega_t1, omega_t2)`` in rad/ns at setting ``phi``."""
    return mhz_to_rad_ns(model.bus1(phi)), mhz_to_rad_ns(model.bus2(phi))


def phase_for_bus1_frequency(model: PhaseModel, f_mhz: float) -> float:
    """Setting (deg) that puts the first bus at ``f_mhz``."""
    return float(model.bus1.inverse(f_mhz))


def g_mt_of_phase(model: PhaseModel, phi):
    """``g_mt_max |sin(phi + phi0)|`` with angles in degrees."""
    # reduce first so exact multiples of 180 give exactly zero
    theta = np.mod(np.asarray(phi, dtype=float) + model.phi0, 180.0)
    return model.g_mt_max * np.sin(np.radians(theta))


def spatial_phase_offset(x_mm: float, lambda_g_mm: float) -> float:
    """Offset ``360 x / lambda_g`` (deg) of a sample at distance ``x`` from an antinode."""
    if not lambda_g_mm > 0:
        raise ConfigError("guided wavelength must be > 0")
    return 360.0 * x_mm / lambda_g_mm


# --- microstrip -----------------------------------------------------------


@dataclass(frozen=True)
class MicrostripGeometry:
    eps_r: float
    h: float
    w: float
    t: float

    def __post_init__(self):
        for name in ("eps_r", "h", "w", "t"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"microstrip {name} must be > 0")


#: FR4 board of the device: eps_r 4.1, 0.874 mm substrate, 1.943 mm trace, 36 um copper+gold.
REFERENCE_MICROSTRIP = MicrostripGeometry(eps_r=4.1, h=0.874, w=1.943, t=0.036)


class MicrostripResult(NamedTuple):
    eps_eff: float
    w_eff: float
    lambda_g: float
    node_spacing: float
    node_antinode_spacing: float


def effective_width(geometry: MicrostripGeometry) -> float:
    """Hammerstad-Jensen thickness-corrected strip width (mm)."""
    w, h = geometry.w, geometry.h
    t = max(geometry.t, MIN_THICKNESS_MM)
    if w / h <= 1.0:
        return w + t / math.pi * (1.0 + math.log(4.0 * math.pi * w / t))
    return w + t / math.pi * (1.0 + math.log(2.0 * h / t))


def microstrip(geometry: MicrostripGeometry, f_mhz: float) -> MicrostripResult:
    """Quasi-static effective permittivity and guided-wavelength spacings (mm)."""
    if not f_mhz > 0:
        raise ConfigError("frequency must be > 0")
    w_eff = effective_width(geometry)
    er = geometry.eps_r
    eps_eff = 0.5 * (er + 1.0) + 0.5 * (er - 1.0) / math.sqrt(1.0 + 12.0 * geometry.h / w_eff)
    lambda_g = _C_MM_PER_NS / (f_mhz * 1e-3 * math.sqrt(eps_eff))
    return MicrostripResult(eps_eff, w_eff, lambda_g, lambda_g / 2.0, lambda_g / 4.0)


# --- configs at a phase setting -------------------------------------------


@dataclass(frozen=True)
class PhaseTemplate:
    """Everything a config needs except the phase-controlled parameters.

    ``bus_losses`` holds ``(gamma_int, gamma_ext)`` in rad/ns for the first and
    (optionally) second bus law; a single entry is reused for both buses.
    """

    cavity: ModeParams
    magnon: ModeParams
    bus_losses: tuple[tuple[float, float], ...]
    g_ct: float
    shared_port: bool = True

    @classmethod
    def from_config(cls, config: SystemConfig) -> "PhaseTemplate":
        return cls(config.cavity, config.magnon,
                   tuple((b.gamma_int, b.gamma_ext) for b in config.buses),
                   config.g_ct, config.shared_port)

    def with_magnon(self, omega: float) -> "PhaseTemplate":
        return replace(self, magnon=replace(self.magnon, omega=float(omega)))


def build_config_at_phase(base, model: PhaseModel, phi: float,
                          drop_threshold: float | None = 100.0) -> SystemConfig:
    """Config at phase setting ``phi`` (deg).

    Bus frequencies follow the linear laws and ``g_mt`` the sinusoidal law.
    The second bus is dropped when its detuning from the cavity exceeds
    ``drop_threshold * gamma_t``; ``None`` always keeps it.
    """
    if isinstance(base, SystemConfig):
        base = PhaseTemplate.from_config(base)
    if not isinstance(base, PhaseTemplate) or not base.bus_losses:
        raise ConfigError("template missing bus placeholders")
    w1, w2 = omega_t_of_phase(model, phi)
    losses = list(base.bus_losses) + [base.bus_losses[0]] * (2 - len(base.bus_losses))
    buses = [BusParams(float(w1), *losses[0]), BusParams(float(w2), *losses[1])]
    if drop_threshold is not None:
        if abs(buses[1].omega_t - base.cavity.omega) > drop_threshold * buses[1].gamma_t:
            buses = buses[:1]
    cfg = SystemConfig(base.cavity, base.magnon, tuple(buses), base.g_ct,
                       float(g_mt_of_phase(model, phi)), base.shared_port)
    return validate(cfg)


# --- JSON blocks ----------------------------------------------------------


def phase_model_from_dict(data: dict) -> PhaseModel:
    """``{bus1:{slope_mhz_per_deg,intercept_mhz}, bus2:{...}, g_mt_max_mhz, phi0_deg}``."""
    try:
        laws = [LinearLaw(float(unwrap(data[k]["slope_mhz_per_deg"])),
                          float(unwrap(data[k]["intercept_mhz"]))) for k in ("bus1", "bus2")]
        g_max = mhz_to_rad_ns(float(unwrap(data["g_mt_max_mhz"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid phase_model block: {exc!r}") from None
    return PhaseModel(laws[0], laws[1], g_max, float(unwrap(data.get("phi0_deg", 0.0))))


def phase_model_to_dict(model: PhaseModel) -> dict:
    return {
        "bus1": {"slope_mhz_per_deg": model.bus1.slope_mhz_per_deg,
                 "intercept_mhz": model.bus1.intercept_mhz},
        "bus2": {"slope_mhz_per_deg": model.bus2.slope_mhz_per_deg,
                 "intercept_mhz": model.bus2.intercept_mhz},
        "g_mt_max_mhz": rad_ns_to_mhz(model.g_mt_max),
        "phi0_deg": model.phi0,
    }


def microstrip_from_dict(data: dict) -> MicrostripGeometry:
    """``{eps_r, h_mm, w_mm, t_mm}``."""
    try:
        return MicrostripGeometry(float(unwrap(data["eps_r"])), float(unwrap(data["h_mm"])),
                                  float(unwrap(data["w_mm"])), float(unwrap(data["t_mm"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid microstrip block: {exc!r}") from None
