"""Parameter types, unit conversions and the linear mode-coupling matrices.

Units
-----
Internally every frequency and rate is an angular quantity in rad/ns and
every time is in ns.  Configuration files carry linear frequencies
``f = omega / 2 pi`` in MHz, times in ns, lengths in mm and phases in degrees.

Damping convention
------------------
A rate ``gamma`` is the energy decay rate: the *amplitude* of an isolated mode
decays as ``exp(-gamma t / 2)``.  The equations of motion are::

    da/dt = -i w_c a - i g_ct t - (gamma_c / 2) a
    dm/dt = -i w_m m - i g_mt t - (gamma_m / 2) m
    dt/dt = -i w_t t - i g_ct a - i g_mt m - (gamma_t / 2) t + sqrt(gamma_ext) a_in

with ``gamma_t = gamma_int + gamma_ext`` and ``a_out = a_in - sqrt(gamma_ext) t``.
Mode ordering in every state vector is ``[a, m, t1]`` or ``[a, m, t1, t2]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from scipy import constants

from .errors import ConfigError

TWO_PI = 2.0 * math.pi
_MHZ_TO_RAD_NS = TWO_PI * 1e-3

#: Mode labels in state-vector order.
MODE_NAMES = ("a", "m", "t1", "t2")


def mhz_to_rad_ns(f_mhz):
    """Linear frequency in MHz to angular frequency in rad/ns."""
    if np.ndim(f_mhz):
        return np.asarray(f_mhz, dtype=float) * _MHZ_TO_RAD_NS
    return float(f_mhz) * _MHZ_TO_RAD_NS


def rad_ns_to_mhz(omega):
    """Angular frequency in rad/ns to linear frequency in MHz."""
    if np.ndim(omega):
        return np.asarray(omega, dtype=float) / _MHZ_TO_RAD_NS
    return float(omega) / _MHZ_TO_RAD_NS


@dataclass(frozen=True)
class ModeParams:
    """A lossy harmonic mode: angular frequency and energy decay rate (rad/ns)."""

    omega: float
    gamma: float


@dataclass(frozen=True)
class BusParams:
    """A transmission-line bus mode with internal and port losses (rad/ns)."""

    omega_t: float
    gamma_int: float
    gamma_ext: float

    @property
    def gamma_t(self) -> float:
        return self.gamma_int + self.gamma_ext


@dataclass(frozen=True)
class SystemConfig:
    """Cavity, magnon and one or two bus modes with their couplings.

    ``shared_port`` controls how two buses see their common port.  When True
    (default) the port also produces the cross-damping term
    ``-sqrt(gamma_ext1 gamma_ext2)/2`` between the buses, which makes the
    four-mode model passive and power conserving.  When False the buses only
    share the drive and the output sum, without cross-damping.  With a single
    bus the flag has no effect.
    """

    cavity: ModeParams
    magnon: ModeParams
    buses: tuple[BusParams, ...]
    g_ct: float
    g_mt: float
    shared_port: bool = True

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))

    @property
    def n_modes(self) -> int:
        return 2 + len(self.buses)

    @property
    def mode_names(self) -> tuple[str, ...]:
        return MODE_NAMES[: self.n_modes]

    def with_magnon(self, omega: float) -> "SystemConfig":
        return replace(self, magnon=replace(self.magnon, omega=float(omega)))

    def with_cavity(self, omega: float) -> "SystemConfig":
        return replace(self, cavity=replace(self.cavity, omega=float(omega)))

    def with_bus(self, index: int, **changes) -> "SystemConfig":
        buses = list(self.buses)
        buses[index] = replace(buses[index], **changes)
        return replace(self, buses=tuple(buses))

    def single_bus(self) -> "SystemConfig":
        """The same system with only the first bus mode."""
        return replace(self, buses=self.buses[:1])


def _check_finite(value, path):
    if not isinstance(value, (int, float, np.floating, np.integer)) or not math.isfinite(value):
        raise ConfigError(f"{path} must be a finite number, got {value!r}")


def validate(config: SystemConfig) -> SystemConfig:
    """Check every model invariant and return ``config`` unchanged.

    Raises
    ------
    ConfigError
        Naming the field path of the first violated invariant.
    """
    for name in ("cavity", "magnon"):
        mode = getattr(config, name)
        _check_finite(mode.omega, f"{name}.omega")
        _check_finite(mode.gamma, f"{name}.gamma")
        if mode.omega <= 0:
            raise ConfigError(f"{name}.omega must be > 0")
        if mode.gamma < 0:
            raise ConfigError(f"{name}.gamma must be ≥ 0")
    if len(config.buses) < 1:
        raise ConfigError("buses: at least 1 bus mode required")
    if len(config.buses) > 2:
        raise ConfigError("buses: at most 2 bus modes allowed")
    for i, bus in enumerate(config.buses):
        for attr in ("omega_t", "gamma_int", "gamma_ext"):
            _check_finite(getattr(bus, attr), f"buses[{i}].{attr}")
        if bus.omega_t <= 0:
            raise ConfigError(f"buses[{i}].omega_t must be > 0")
        if bus.gamma_int < 0:
            raise ConfigError(f"buses[{i}].gamma_int must be ≥ 0")
        if bus.gamma_ext < 0:
            raise ConfigError(f"buses[{i}].gamma_ext must be ≥ 0")
    for attr in ("g_ct", "g_mt"):
        _check_finite(getattr(config, attr), attr)
        if getattr(config, attr) < 0:
            raise ConfigError(f"{attr} must be ≥ 0")
    return config


def coupling_matrix(config: SystemConfig) -> np.ndarray:
    """Non-Hermitian matrix ``M`` of ``dx/dt = -i M x + sqrt(gamma_ext) a_in``.

    Diagonal entries are ``omega_n - i gamma_n / 2``; the eigenvalues of ``M``
    are the complex mode frequencies.
    """
    n = config.n_modes
    M = np.zeros((n, n), dtype=complex)
    M[0, 0] = config.cavity.omega - 0.5j * config.cavity.gamma
    M[1, 1] = config.magnon.omega - 0.5j * config.magnon.gamma
    for j, bus in enumerate(config.buses, start=2):
        M[j, j] = bus.omega_t - 0.5j * bus.gamma_t
        M[0, j] = M[j, 0] = config.g_ct
        M[1, j] = M[j, 1] = config.g_mt
    if len(config.buses) == 2 and config.shared_port:
        cross = -0.5j * math.sqrt(config.buses[0].gamma_ext * config.buses[1].gamma_ext)
        M[2, 3] = M[3, 2] = cross
    return M


def port_vector(config: SystemConfig) -> np.ndarray:
    """Real vector of port couplings ``sqrt(gamma_ext)`` (zero on a and m)."""
    v = np.zeros(config.n_modes)
    for j, bus in enumerate(config.buses, start=2):
        v[j] = math.sqrt(bus.gamma_ext)
    return v


# --- physical conversions -------------------------------------------------


class QRates(NamedTuple):
    """Damping rates (rad/ns) from quality factors, with the reciprocal residual."""

    gamma_t: float
    gamma_int: float
    gamma_ext: float
    residual: float


def q_to_gamma(f0_mhz: float, q_loaded: float, q_internal: float, q_coupling: float) -> QRates:
    """Convert loaded/internal/coupling Q at ``f0_mhz`` to rates ``gamma = 2 pi f0 / Q``.

    ``residual`` is ``|1/Q_L - 1/Q_i - 1/Q_c| * Q_L``, zero for a consistent set.
    """
    for name, value in (("f0", f0_mhz), ("q_loaded", q_loaded),
                        ("q_internal", q_internal), ("q_coupling", q_coupling)):
        if not value > 0:
            raise ConfigError(f"{name} must be > 0, got {value!r}")
    w0 = mhz_to_rad_ns(f0_mhz)
    residual = abs(1.0 / q_loaded - 1.0 / q_internal - 1.0 / q_coupling) * q_loaded
    return QRates(w0 / q_loaded, w0 / q_internal, w0 / q_coupling, residual)


def gamma_to_q(f0_mhz: float, gamma_t: float, gamma_int: float, gamma_ext: float):
    """Inverse of :func:`q_to_gamma`: returns ``(Q_L, Q_i, Q_c)``."""
    if not f0_mhz > 0 or not (gamma_t > 0 and gamma_int > 0 and gamma_ext > 0):
        raise ConfigError("f0 and all rates must be > 0")
    w0 = mhz_to_rad_ns(f0_mhz)
    return w0 / gamma_t, w0 / gamma_int, w0 / gamma_ext


#: Free-electron gyromagnetic ratio, MHz/T.
GYRO_MHZ_PER_T = constants.physical_constants["electron gyromag. ratio in MHz/T"][0]


def field_to_magnon_freq(b0_tesla: float, gyro_mhz_per_t: float = GYRO_MHZ_PER_T):
    """Linear field law ``omega_m = 2 pi * gyro * B0``, returned in rad/ns."""
    if gyro_mhz_per_t <= 0:
        raise ConfigError("gyromagnetic ratio must be > 0")
    if np.any(np.asarray(b0_tesla) < 0):
        raise ConfigError("magnetic field must be ≥ 0")
    return mhz_to_rad_ns(np.multiply(gyro_mhz_per_t, b0_tesla))


def magnon_freq_to_field(omega_m: float, gyro_mhz_per_t: float = GYRO_MHZ_PER_T):
    """Field in tesla that puts the magnon at ``omega_m`` (rad/ns)."""
    if gyro_mhz_per_t <= 0:
        raise ConfigError("gyromagnetic ratio must be > 0")
    return rad_ns_to_mhz(omega_m) / gyro_mhz_per_t


def amplitude_from_power(power_dbm: float, f_mhz: float) -> float:
    """Drive amplitude ``|a_in|`` in sqrt(photons/ns) for a tone of given power.

    ``|a_in|^2 = P / (h f)`` is the incident photon flux.
    """
    if not f_mhz > 0:
        raise ConfigError("frequency must be > 0")
    power_w = 1e-3 * 10.0 ** (power_dbm / 10.0)
    flux_per_s = power_w / (constants.h * f_mhz * 1e6)
    return math.sqrt(flux_per_s * 1e-9)


# --- JSON config schema ---------------------------------------------------


def unwrap(value: Any) -> Any:
    """Strip an inline provenance wrapper ``{"value": x, "_provenance": ...}``."""
    if isinstance(value, dict) and "value" in value:
        return value["value"]
    return value


def _number(block: dict, key: str, path: str, default=None) -> float:
    if key not in block or block[key] is None:
        if default is not None:
            return default
        raise ConfigError(f"{path}.{key} is required")
    value = unwrap(block[key])
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key} must be a number, got {value!r}") from None


def config_from_dict(data: dict) -> SystemConfig:
    """Build and validate a :class:`SystemConfig` from the MHz JSON schema."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    try:
        cavity, magnon = data["cavity"], data["magnon"]
        buses = data["buses"]
    except KeyError as exc:
        raise ConfigError(f"missing config block {exc.args[0]!r}") from None
    if not isinstance(buses, list):
        raise ConfigError("buses must be a list")
    cfg = SystemConfig(
        cavity=ModeParams(mhz_to_rad_ns(_number(cavity, "f_mhz", "cavity")),
                          mhz_to_rad_ns(_number(cavity, "gamma_mhz", "cavity"))),
        magnon=ModeParams(mhz_to_rad_ns(_number(magnon, "f_mhz", "magnon")),
                          mhz_to_rad_ns(_number(magnon, "gamma_mhz", "magnon"))),
        buses=tuple(
            BusParams(mhz_to_rad_ns(_number(b, "f_mhz", f"buses[{i}]")),
                      mhz_to_rad_ns(_number(b, "gamma_int_mhz", f"buses[{i}]")),
                      mhz_to_rad_ns(_number(b, "gamma_ext_mhz", f"buses[{i}]")))
            for i, b in enumerate(buses)
        ),
        g_ct=mhz_to_rad_ns(_number(data, "g_ct_mhz", "config")),
        g_mt=mhz_to_rad_ns(_number(data, "g_mt_mhz", "config")),
        shared_port=bool(unwrap(data.get("shared_port", True))),
    )
    return validate(cfg)


def config_to_dict(config: SystemConfig) -> dict:
    """Serialize to the MHz JSON schema (inverse of :func:`config_from_dict`)."""
    return {
        "cavity": {"f_mhz": rad_ns_to_mhz(config.cavity.omega),
                   "gamma_mhz": rad_ns_to_mhz(config.cavity.gamma)},
        "magnon": {"f_mhz": rad_ns_to_mhz(config.magnon.omega),
                   "gamma_mhz": rad_ns_to_mhz(config.magnon.gamma)},
        "buses": [{"f_mhz": rad_ns_to_mhz(b.omega_t),
                   "gamma_int_mhz": rad_ns_to_mhz(b.gamma_int),
                   "gamma_ext_mhz": rad_ns_to_mhz(b.gamma_ext)} for b in config.buses],
        "g_ct_mhz": rad_ns_to_mhz(config.g_ct),
        "g_mt_mhz": rad_ns_to_mhz(config.g_mt),
        "shared_port": config.shared_port,
    }


def load_json(path) -> dict:
    with open(Path(path), encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_config(path) -> SystemConfig:
    return config_from_dict(load_json(path))


@dataclass(frozen=True)
class ReferenceDevice:
    """Published parameter set of the remote cavity-magnon device (MHz).

    ``g_mt_mhz`` is the maximum magnon-bus coupling; ``f_bus_mhz`` is the
    derived centre frequency ``Q_L * gamma_t / 2 pi`` of the characterised
    bus mode.
    """

    f_c_mhz: float = 5012.0
    gamma_c_mhz: float = 1.68
    gamma_m_mhz: float = 2.0
    g_ct_mhz: float = 4.9
    g_mt_mhz: float = 10.0
    gamma_t_mhz: float = 50.8
    gamma_int_mhz: float = 9.16
    gamma_ext_mhz: float = 41.7
    q_loaded: float = 98.6
    q_internal: float = 547.4
    q_coupling: float = 120.3
    g_eff_time_domain_mhz: float = 0.75

    @property
    def f_bus_mhz(self) -> float:
        return self.q_loaded * self.gamma_t_mhz

    def config(self, f_m_mhz: float | None = None, f_t_mhz: float | None = None,
               g_mt_mhz: float | None = None) -> SystemConfig:
        """Single-bus config; the bus defaults to resonance with the cavity."""
        return validate(SystemConfig(
            cavity=ModeParams(mhz_to_rad_ns(self.f_c_mhz), mhz_to_rad_ns(self.gamma_c_mhz)),
            magnon=ModeParams(mhz_to_rad_ns(self.f_c_mhz if f_m_mhz is None else f_m_mhz),
                              mhz_to_rad_ns(self.gamma_m_mhz)),
            buses=(BusParams(mhz_to_rad_ns(self.f_c_mhz if f_t_mhz is None else f_t_mhz),
                             mhz_to_rad_ns(self.gamma_int_mhz),
                             mhz_to_rad_ns(self.gamma_ext_mhz)),),
            g_ct=mhz_to_rad_ns(self.g_ct_mhz),
            g_mt=mhz_to_rad_ns(self.g_mt_mhz if g_mt_mhz is None else g_mt_mhz),
        ))


REFERENCE = ReferenceDevice()
