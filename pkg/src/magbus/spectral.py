"""Frequency-domain response of the cavity-magnon-bus system.

Steady states come from the driven linear system ``(M - w I) x = -i v a_in``
(see :func:`magbus.model.coupling_matrix`), the reflection coefficient from
``S11 = 1 - v.x / a_in``.  Both are also available in closed form; the two
routes are cross-checked when ``check=True`` or ``MAGBUS_DEBUG`` is set.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, SingularSystemError, TraceFormatError
from .model import (
    SystemConfig,
    coupling_matrix,
    mhz_to_rad_ns,
    port_vector,
    rad_ns_to_mhz,
    validate,
)

DEBUG = bool(os.environ.get("MAGBUS_DEBUG"))

#: Floor used when writing ``20 log10 |S11|`` of an exact zero.
DB_FLOOR = -300.0


def _fmt(x: float) -> str:
    # repr is the shortest string that round-trips the double exactly
    return repr(float(x))


# --- steady state ---------------------------------------------------------


@dataclass(frozen=True)
class SteadyState:
    """Driven steady-state amplitudes at probe frequency ``omega`` (rad/ns).

    The detunings ``Delta_n = omega_n - omega`` are available through
    :meth:`detunings`.
    """

    a: complex
    m: complex
    t1: complex
    t2: complex | None
    omega: float
    a_in: complex
    a_out: complex
    residual: float

    @property
    def amplitudes(self) -> np.ndarray:
        vals = [self.a, self.m, self.t1] + ([self.t2] if self.t2 is not None else [])
        return np.array(vals, dtype=complex)

    @property
    def s11(self) -> complex:
        return self.a_out / self.a_in

    def detunings(self, config: SystemConfig) -> np.ndarray:
        diag = np.real(np.diag(coupling_matrix(config)))
        return diag - self.omega


def steady_state(config: SystemConfig, omega: float, a_in: complex = 1.0) -> SteadyState:
    """Solve the driven linear system at a single probe frequency.

    Raises
    ------
    SingularSystemError
        When the system matrix is singular, which requires zero damping on an
        exactly degenerate mode.
    """
    validate(config)
    n = config.n_modes
    A = coupling_matrix(config) - omega * np.eye(n)
    v = port_vector(config)
    rhs = -1j * v * a_in
    try:
        x = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise SingularSystemError(
            f"steady-state system singular at omega={omega!r} rad/ns") from None
    if not np.all(np.isfinite(x)) or np.linalg.cond(A) > 1e15:
        raise SingularSystemError(
            f"steady-state system singular at omega={omega!r} rad/ns")
    residual = float(np.max(np.abs(A @ x - rhs))) if n else 0.0
    a_out = a_in - v @ x
    return SteadyState(
        a=complex(x[0]), m=complex(x[1]), t1=complex(x[2]),
        t2=complex(x[3]) if n == 4 else None,
        omega=float(omega), a_in=complex(a_in), a_out=complex(a_out),
        residual=residual,
    )


def _mode_susceptibility_sum(config: SystemConfig, omega):
    """``g_ct^2/(i Dc + gc/2) + g_mt^2/(i Dm + gm/2)``."""
    omega = np.asarray(omega, dtype=complex)
    dc = 1j * (config.cavity.omega - omega) + 0.5 * config.cavity.gamma
    dm = 1j * (config.magnon.omega - omega) + 0.5 * config.magnon.gamma
    return config.g_ct ** 2 / dc + config.g_mt ** 2 / dm


def s11_closed_form(config: SystemConfig, omega):
    """Reflection coefficient from the closed-form continued fraction.

    For one bus::

        S11 = 1 - g_ext / (i D_t + g_t/2 + g_ct^2/(i D_c + g_c/2) + g_mt^2/(i D_m + g_m/2))

    For two buses the 2x2 bus block ``[[d1 + K, K + c], [K + c, d2 + K]]`` is
    inverted explicitly, with ``d_j = i D_tj + g_tj/2``, ``K`` the
    susceptibility sum above and ``c`` the shared-port cross damping
    (zero when ``shared_port`` is False).
    """
    omega = np.asarray(omega, dtype=float)
    K = _mode_susceptibility_sum(config, omega)
    b1 = config.buses[0]
    d1 = 1j * (b1.omega_t - omega) + 0.5 * b1.gamma_t
    if len(config.buses) == 1:
        return 1.0 - b1.gamma_ext / (d1 + K)
    b2 = config.buses[1]
    d2 = 1j * (b2.omega_t - omega) + 0.5 * b2.gamma_t
    v1, v2 = math.sqrt(b1.gamma_ext), math.sqrt(b2.gamma_ext)
    c = 0.5 * v1 * v2 if config.shared_port else 0.0
    num = v1 * v1 * (d2 + K) + v2 * v2 * (d1 + K) - 2.0 * v1 * v2 * (K + c)
    den = (d1 + K) * (d2 + K) - (K + c) ** 2
    return 1.0 - num / den


def s11_from_solve(config: SystemConfig, omega):
    """Reflection coefficient via the linear solve and ``a_out = a_in - v.x``."""
    omega_arr = np.atleast_1d(np.asarray(omega, dtype=float))
    validate(config)
    n = config.n_modes
    M = coupling_matrix(config)
    v = port_vector(config)
    A = M[None, :, :] - omega_arr[:, None, None] * np.eye(n)[None]
    try:
        x = np.linalg.solve(A, np.broadcast_to(-1j * v, (len(omega_arr), n))[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise SingularSystemError("steady-state system singular on probe grid") from None
    out = 1.0 - x @ v
    return out if np.ndim(omega) else complex(out[0])


def s11(config: SystemConfig, omega, check: bool | None = None):
    """Reflection coefficient ``S11(omega)``; ``omega`` may be an array (rad/ns).

    With ``check`` (or the ``MAGBUS_DEBUG`` environment variable) the closed
    form is compared against the linear-solve route and an ``AssertionError``
    is raised on a mismatch above 1e-12.
    """
    validate(config)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = s11_closed_form(config, omega)
    if not np.all(np.isfinite(out)):
        raise SingularSystemError("S11 undefined: singular steady-state system")
    if check or (check is None and DEBUG):
        ref = s11_from_solve(config, omega)
        err = np.max(np.abs(np.asarray(out) - ref))
        if err > 1e-12 * max(1.0, float(np.max(np.abs(ref)))):
            raise AssertionError(f"closed-form and solved S11 disagree by {err:.3e}")
    return complex(out) if np.ndim(out) == 0 else out


# --- adiabatic elimination ------------------------------------------------


def _require_single_bus(config: SystemConfig):
    validate(config)
    if len(config.buses) != 1:
        raise ConfigError("operation requires a single-bus config")
    return config.buses[0]


def reduced_system(config: SystemConfig, omega: float, a_in: complex = 1.0):
    """The 2x2 cavity-magnon system left after eliminating the bus.

    Returns ``(Z, rhs)`` with ``Z = [[z_c, g_eff], [g_eff, z_m]]``,
    ``z_n = -D_n + i g_n/2 + g_nt^2 / (D_t - i g_t/2)`` and
    ``rhs = sqrt(g_ext) / (i D_t + g_t/2) * [g_ct, g_mt] * a_in``.
    """
    bus = _require_single_bus(config)
    dt = bus.omega_t - omega
    denom = dt - 0.5j * bus.gamma_t
    z_c = -(config.cavity.omega - omega) + 0.5j * config.cavity.gamma + config.g_ct ** 2 / denom
    z_m = -(config.magnon.omega - omega) + 0.5j * config.magnon.gamma + config.g_mt ** 2 / denom
    g_eff = config.g_ct * config.g_mt / denom
    Z = np.array([[z_c, g_eff], [g_eff, z_m]], dtype=complex)
    drive = math.sqrt(bus.gamma_ext) / (1j * dt + 0.5 * bus.gamma_t) * a_in
    rhs = np.array([config.g_ct * drive, config.g_mt * drive], dtype=complex)
    return Z, rhs


def reduced_two_mode(config: SystemConfig, omega: float, a_in: complex = 1.0):
    """Cavity and magnon amplitudes ``(a, m)`` from the eliminated 2x2 system."""
    Z, rhs = reduced_system(config, omega, a_in)
    det = Z[0, 0] * Z[1, 1] - Z[0, 1] * Z[1, 0]
    if det == 0 or not np.isfinite(det):
        raise SingularSystemError(f"reduced 2x2 system singular at omega={omega!r}")
    a = (rhs[0] * Z[1, 1] - Z[0, 1] * rhs[1]) / det
    m = (Z[0, 0] * rhs[1] - Z[1, 0] * rhs[0]) / det
    return complex(a), complex(m)


@dataclass(frozen=True)
class EffectiveCoupling:
    """Bus-mediated coupling ``g_eff = g_coh + i gamma_diss`` (rad/ns)."""

    g_eff: complex
    g_coh: float
    gamma_diss: float


def effective_coupling(config: SystemConfig, omega: float) -> EffectiveCoupling:
    """Split ``g_ct g_mt / (D_t - i g_t/2)`` into coherent and dissipative parts."""
    bus = _require_single_bus(config)
    dt = bus.omega_t - omega
    half = 0.5 * bus.gamma_t
    gg = config.g_ct * config.g_mt
    denom = dt * dt + half * half
    g_coh = gg * dt / denom
    gamma_diss = gg * half / denom
    return EffectiveCoupling(complex(g_coh, gamma_diss), float(g_coh), float(gamma_diss))


# --- eigenstructure -------------------------------------------------------


@dataclass(frozen=True)
class HybridEigenpair:
    """Analytic eigenfrequencies of the two-mode effective Hamiltonian.

    ``sqrt_argument`` is ``(Delta/2 - i dgamma/4)^2 - Gamma^2``; ``regime`` is
    ``"repulsion"`` (split real parts), ``"attraction"`` (equal real parts) or
    ``"exceptional"`` from the sign of its real part.  An exact coalescence
    needs the whole complex argument to vanish, which for real ``Gamma``
    happens only when ``Delta * dgamma == 0``.
    """

    omega_plus: complex
    omega_minus: complex
    gamma_c_prime: float
    gamma_m_prime: float
    Gamma: float
    sqrt_argument: complex
    regime: str

    @property
    def splitting(self) -> complex:
        return self.omega_plus - self.omega_minus


DAMPING_SHIFTS = {"full": 4.0, "half": 2.0}


def renormalized_dampings(config: SystemConfig, damping_shift: str = "full"):
    """Return ``(gamma_c', gamma_m', Gamma)`` in the resonant, strongly damped limit.

    ``damping_shift="full"`` adds ``4 g_nt^2 / g_t``: the imaginary part of the
    bus self-energy at ``D_t = 0`` expressed as an energy rate, consistent with
    the elimination above.  ``"half"`` adds ``2 g_nt^2 / g_t`` instead.
    ``Gamma = 2 g_ct g_mt / g_t`` in both cases.
    """
    bus = _require_single_bus(config)
    try:
        k = DAMPING_SHIFTS[damping_shift]
    except KeyError:
        raise ValueError(f"damping_shift must be one of {sorted(DAMPING_SHIFTS)}") from None
    gt = bus.gamma_t
    if gt <= 0:
        raise ConfigError("bus gamma_t must be > 0 for adiabatic elimination")
    gc = config.cavity.gamma + k * config.g_ct ** 2 / gt
    gm = config.magnon.gamma + k * config.g_mt ** 2 / gt
    return gc, gm, 2.0 * config.g_ct * config.g_mt / gt


def effective_hamiltonian(config: SystemConfig, damping_shift: str = "full") -> np.ndarray:
    """``[[w_c - i g_c'/2, i Gamma], [i Gamma, w_m - i g_m'/2]]``."""
    gc, gm, G = renormalized_dampings(config, damping_shift)
    return np.array([[config.cavity.omega - 0.5j * gc, 1j * G],
                     [1j * G, config.magnon.omega - 0.5j * gm]])


def classify_regime(sqrt_argument: complex, Gamma: float) -> str:
    tol = 1e-9 * Gamma * Gamma
    re = sqrt_argument.real
    if re > tol:
        return "repulsion"
    if re < -tol:
        return "attraction"
    return "exceptional"


def hybrid_eigenfrequencies(config: SystemConfig, damping_shift: str = "full",
                            verify: bool = True) -> HybridEigenpair:
    """Closed-form ``w_pm = w_bar - i g_bar +- sqrt((D/2 - i dg/4)^2 - Gamma^2)``.

    ``w_bar`` and ``D`` are the mean and difference of cavity and magnon
    frequencies, ``g_bar = (g_c' + g_m')/4`` and ``dg = g_c' - g_m'``.  With
    ``verify`` the pair is checked against a numeric eigensolve of
    :func:`effective_hamiltonian` to 1e-12 (relative to the frequency scale).
    """
    bus = _require_single_bus(config)
    if bus.gamma_t < 10.0 * max(config.cavity.gamma, config.magnon.gamma):
        warnings.warn("bus damping is not much larger than cavity/magnon damping; "
                      "the two-mode eigenfrequencies are a poor approximation",
                      RuntimeWarning, stacklevel=2)
    gc, gm, G = renormalized_dampings(config, damping_shift)
    wc, wm = config.cavity.omega, config.magnon.omega
    w_bar = 0.5 * (wc + wm)
    g_bar = 0.25 * (gc + gm)
    arg = complex(0.5 * (wc - wm), -0.25 * (gc - gm)) ** 2 - G * G
    root = np.sqrt(arg)
    centre = complex(w_bar, -g_bar)
    pair = HybridEigenpair(complex(centre + root), complex(centre - root), gc, gm, G,
                           complex(arg), classify_regime(complex(arg), G))
    if verify:
        ev = np.linalg.eigvals(effective_hamiltonian(config, damping_shift))
        scale = max(abs(wc), abs(wm), 1.0)
        # near a coalescence the eigenvalues are only sqrt(eps)-conditioned
        eps = np.finfo(float).eps
        split = abs(pair.splitting)
        tol = 1e-12 * scale + min(10 * eps * scale ** 2 / max(split, 1e-300),
                                  10 * math.sqrt(eps) * scale)
        for w in (pair.omega_plus, pair.omega_minus):
            if np.min(np.abs(ev - w)) > tol:
                raise AssertionError("closed-form eigenfrequencies disagree with eigensolve")
    return pair


def full_numeric_eigenvalues(config: SystemConfig) -> np.ndarray:
    """Complex eigenfrequencies of the full 3- or 4-mode coupling matrix.

    Sorted by decreasing imaginary part (longest-lived first).
    """
    validate(config)
    ev = np.linalg.eigvals(coupling_matrix(config))
    return ev[np.argsort(-ev.imag, kind="stable")]


def anti_pt_residual(config: SystemConfig, damping_shift: str = "full") -> float:
    """``|g_c' - g_m'| / (g_c' + g_m')``; zero when the rotating-frame H is anti-PT."""
    gc, gm, _ = renormalized_dampings(config, damping_shift)
    total = gc + gm
    return abs(gc - gm) / total if total > 0 else 0.0


# --- sweeps ---------------------------------------------------------------


SWEEP_AXES = ("f_m", "B0", "phi", "f_t", "g_mt", "f_c")


def sweep_config(base, axis: str, value: float, *, phase_model=None,
                 gyro_mhz_per_t: float | None = None, **phase_kwargs) -> SystemConfig:
    """Config for one sweep point.

    Axes: ``f_m`` magnon frequency (MHz), ``B0`` bias field (T), ``phi``
    phase-shifter setting (deg, needs ``phase_model`` and a
    :class:`~magbus.phase.PhaseTemplate` or config as ``base``), ``f_t`` first
    bus frequency (MHz), ``g_mt`` magnon-bus coupling (MHz), ``f_c`` cavity
    frequency (MHz).
    """
    if axis == "f_m":
        return base.with_magnon(mhz_to_rad_ns(value))
    if axis == "B0":
        from .model import GYRO_MHZ_PER_T, field_to_magnon_freq
        return base.with_magnon(field_to_magnon_freq(value, gyro_mhz_per_t or GYRO_MHZ_PER_T))
    if axis == "f_t":
        return base.with_bus(0, omega_t=mhz_to_rad_ns(value))
    if axis == "g_mt":
        from dataclasses import replace
        return replace(base, g_mt=mhz_to_rad_ns(value))
    if axis == "f_c":
        return base.with_cavity(mhz_to_rad_ns(value))
    if axis == "phi":
        from .phase import build_config_at_phase
        if phase_model is None:
            raise ConfigError("phase sweep requires a phase model")
        return build_config_at_phase(base, phase_model, value, **phase_kwargs)
    raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


@dataclass(frozen=True)
class SpectrumGrid:
    """Complex S11 on a (sweep value x probe frequency) grid.

    ``s11[i, j]`` is the response at ``sweep_values[i]`` and
    ``probe_omega[j]`` (rad/ns): rows follow the sweep axis, columns the probe
    axis.
    """

    axis: str
    sweep_values: np.ndarray
    probe_omega: np.ndarray
    s11: np.ndarray

    def __post_init__(self):
        if self.s11.shape != (len(self.sweep_values), len(self.probe_omega)):
            raise ValueError("s11 shape does not match the axes")

    @property
    def probe_f_mhz(self) -> np.ndarray:
        return rad_ns_to_mhz(self.probe_omega)

    def db(self) -> np.ndarray:
        mag = np.abs(self.s11)
        with np.errstate(divide="ignore"):
            out = 20.0 * np.log10(mag)
        return np.where(mag > 0, out, DB_FLOOR)

    def csv_text(self) -> str:
        """``# axis=<name>`` then one row per grid point, sweep-major."""
        db = self.db()
        f = self.probe_f_mhz
        lines = [f"# axis={self.axis}",
                 "sweep_value,probe_f_mhz,s11_re,s11_im,s11_abs_db"]
        for i, sv in enumerate(self.sweep_values):
            for j in range(len(f)):
                z = self.s11[i, j]
                lines.append(",".join(_fmt(x) for x in (sv, f[j], z.real, z.imag, db[i, j])))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        Path(path).write_text(self.csv_text(), encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "SpectrumGrid":
        axis = "sweep"
        rows = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if line[1:].strip().startswith("axis="):
                        axis = line[1:].strip()[5:]
                    continue
                if line.startswith("sweep_value"):
                    continue
                try:
                    rows.append([float(x) for x in line.split(",")])
                except ValueError:
                    raise TraceFormatError(f"unparseable row {line!r}", lineno) from None
        data = np.array(rows)
        sweep = np.array(list(dict.fromkeys(data[:, 0])))
        probe = np.array(list(dict.fromkeys(data[:, 1])))
        s = (data[:, 2] + 1j * data[:, 3]).reshape(len(sweep), len(probe))
        return cls(axis, sweep, mhz_to_rad_ns(probe), s)


def sweep_spectrum(base, axis: str, sweep_values: Sequence[float], probe_f_mhz: Sequence[float],
                   jobs: int = 1, config_for: Callable | None = None, **sweep_kwargs) -> SpectrumGrid:
    """Evaluate S11 over a sweep axis and a probe-frequency grid.

    Points may be evaluated concurrently (``jobs > 1``); rows are assembled by
    index, so the result does not depend on scheduling.
    """
    sweep_values = np.asarray(sweep_values, dtype=float)
    probe_f = np.asarray(probe_f_mhz, dtype=float)
    for name, arr in (("sweep", sweep_values), ("probe", probe_f)):
        if arr.size == 0:
            raise ConfigError(f"{name} axis is empty")
        if arr.size > 1 and not (np.all(np.diff(arr) > 0) or np.all(np.diff(arr) < 0)):
            raise ConfigError(f"{name} axis must be strictly monotone")
    probe_w = mhz_to_rad_ns(probe_f)
    make = config_for or (lambda v: sweep_config(base, axis, v, **sweep_kwargs))

    def row(i):
        value = sweep_values[i]
        try:
            return s11(make(value), probe_w)
        except (ConfigError, SingularSystemError) as exc:
            raise type(exc)(f"at {axis}={value!r}: {exc}") from exc

    idx = range(len(sweep_values))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(row, idx))
    else:
        rows = [row(i) for i in idx]
    return SpectrumGrid(axis, sweep_values, probe_w, np.vstack(rows))
