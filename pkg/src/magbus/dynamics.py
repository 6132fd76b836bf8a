"""Time-domain response to pulsed drive: RK4 integration and an exact propagator.

The state ``x = [a, m, t1(, t2)]`` obeys ``dx/dt = A x + v a_in(t)`` with
``A = -i (M - w_r I)``, where ``M`` is the coupling matrix and ``w_r`` the frame
frequency (0 in the lab frame, the pulse carrier in the rotating frame).
The reflected field is ``a_out = a_in - v.x``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalInstabilityError, StepSizeError
from .model import (
    SystemConfig,
    coupling_matrix,
    mhz_to_rad_ns,
    port_vector,
    rad_ns_to_mhz,
    validate,
)

#: ADC sampling interval of the ringdown measurement, ns.
DEFAULT_OUTPUT_INTERVAL = 1.63
DEFAULT_DT = {"rotating": 0.01, "lab": 0.001}
DEFAULT_DB_FLOOR = -160.0


@dataclass(frozen=True)
class PulseSpec:
    """Square drive pulse; ``ramp`` > 0 gives raised-cosine edges of that length."""

    duration: float
    carrier_mhz: float
    amplitude: complex = 1.0
    start: float = 0.0
    ramp: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("pulse duration must be > 0")
        if not np.isfinite(self.amplitude):
            raise ConfigError("pulse amplitude must be finite")
        if self.ramp < 0 or 2 * self.ramp > self.duration:
            raise ConfigError("ramp must be between 0 and half the pulse duration")

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def carrier(self) -> float:
        return mhz_to_rad_ns(self.carrier_mhz)

    def envelope(self, t, side: str = "right", tol: float = 0.0) -> np.ndarray:
        """Real envelope in [0, 1].

        At a square edge the value is one-sided: ``side="right"`` gives the
        limit from later times, ``"left"`` from earlier times.  ``tol``
        snaps times within ``tol`` of an edge onto it.
        """
        t = np.asarray(t, dtype=float)
        s, e = self.start, self.end
        if side == "right":
            inside = (t >= s - tol) & (t < e - tol)
        else:
            inside = (t > s + tol) & (t <= e + tol)
        env = inside.astype(float)
        if self.ramp > 0:
            r = self.ramp
            rise = (t > s) & (t < s + r)
            fall = (t > e - r) & (t < e)
            env = np.where(rise, 0.5 * (1 - np.cos(np.pi * (t - s) / r)), env)
            env = np.where(fall, 0.5 * (1 - np.cos(np.pi * (e - t) / r)), env)
        return env


@dataclass(frozen=True)
class ComplexAmplitudeTrace:
    """Sampled mode amplitudes and port fields.

    ``modes[k, j]`` is mode ``j`` (order a, m, t1, t2) at ``times[k]``.  In the
    rotating frame all fields are envelopes relative to ``exp(-i w_r t)``.
    """

    times: np.ndarray
    modes: np.ndarray
    a_in: np.ndarray
    a_out: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times)
        if not (self.modes.shape[0] == len(self.a_in) == len(self.a_out) == n):
            raise ValueError("trace arrays must have equal length")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trace times must be strictly increasing")

    def mode(self, name: str) -> np.ndarray:
        names = ("a", "m", "t1", "t2")
        return self.modes[:, names.index(name)]

    def csv_text(self, a_in_ref: complex | None = None,
                 floor_db: float = DEFAULT_DB_FLOOR) -> str:
        ref = self.metadata.get("amplitude", 1.0) if a_in_ref is None else a_in_ref
        db = to_db(self, ref, floor_db)
        names = ("a", "m", "t1", "t2")[: self.modes.shape[1]]
        header = ["t_ns"] + [f"{n}_{p}" for n in names for p in ("re", "im")]
        header += ["aout_re", "aout_im", "aout_db"]
        lines = [",".join(header)]
        for k, t in enumerate(self.times):
            vals = [t]
            for z in self.modes[k]:
                vals += [z.real, z.imag]
            vals += [self.a_out[k].real, self.a_out[k].imag, db[k]]
            lines.append(",".join(repr(float(x)) for x in vals))
        return "\n".join(lines) + "\n"

    def to_csv(self, path, a_in_ref: complex | None = None,
               floor_db: float = DEFAULT_DB_FLOOR) -> None:
        Path(path).write_text(self.csv_text(a_in_ref, floor_db), encoding="utf-8")


def _frame_frequency(frame: str, pulse: PulseSpec) -> float:
    if frame in ("rotating", "rot"):
        return pulse.carrier
    if frame == "lab":
        return 0.0
    raise ConfigError(f"frame must be 'lab' or 'rotating', got {frame!r}")


def drift_matrix(config: SystemConfig, frame_omega: float = 0.0) -> np.ndarray:
    """``A = -i (M - w_r I)`` of the homogeneous equations."""
    M = coupling_matrix(config)
    return -1j * (M - frame_omega * np.eye(config.n_modes))


def rk4_step(f, t: float, x: np.ndarray, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of ``dx/dt = f(t, x)``."""
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_affine_map(A: np.ndarray, b: np.ndarray, h: float):
    """RK4 step of the linear system ``x' = A x + b s(t)`` as an affine map.

    Returns ``(P, w1, w2, w3)`` such that one step is
    ``x + = P x + w1 s(t) + w2 s(t + h/2) + w3 s(t + h)``.  This is the
    expansion of :func:`rk4_step` for a linear right-hand side, so the two
    agree to rounding.  ``A`` may carry leading batch dimensions.
    """
    n = A.shape[-1]
    eye = np.broadcast_to(np.eye(n), A.shape)
    H = h * A
    H2 = H @ H
    H3 = H2 @ H
    P = eye + H + H2 / 2.0 + H3 / 6.0 + (H3 @ H) / 24.0
    hb = (h * b)[..., None]
    w1 = ((eye + H + H2 / 2.0 + H3 / 4.0) @ hb)[..., 0] / 6.0
    w2 = ((4.0 * eye + 2.0 * H + H2 / 2.0) @ hb)[..., 0] / 6.0
    w3 = hb[..., 0] / 6.0
    return P, w1, w2, w3


def _check_step(configs: Sequence[SystemConfig], pulse: PulseSpec, dt: float,
                frame: str, frame_omega: float) -> None:
    if not dt > 0:
        raise StepSizeError("dt must be > 0")
    if frame == "lab":
        f_max_ghz = max(max(np.abs(np.real(np.diag(coupling_matrix(c))))) for c in configs)
        f_max_ghz = max(f_max_ghz, pulse.carrier) / (2 * math.pi)
        if dt > 1.0 / (20.0 * f_max_ghz) * (1 + 1e-12):
            raise StepSizeError(
                f"lab-frame dt={dt} ns exceeds 1/(20 f_max) = {1 / (20 * f_max_ghz):.4g} ns")
    else:
        rho = max(np.max(np.abs(np.linalg.eigvals(drift_matrix(c, frame_omega)))) for c in configs)
        if rho * dt > 2.0:
            raise StepSizeError(
                f"dt={dt} ns too coarse: |lambda| dt = {rho * dt:.3g} > 2 in the rotating frame")


def integrate_batch(configs: Sequence[SystemConfig], pulse: PulseSpec, t_end: float,
                    dt: float | None = None, frame: str = "rotating",
                    output_interval: float = DEFAULT_OUTPUT_INTERVAL,
                    x0: np.ndarray | None = None) -> list[ComplexAmplitudeTrace]:
    """Integrate several configs with the same mode count and pulse in lock step.

    Each configuration's trajectory only depends on its own parameters; the
    batch is a performance device for sweeps.
    """
    configs = [validate(c) for c in configs]
    if not configs:
        return []
    n = configs[0].n_modes
    if any(c.n_modes != n for c in configs):
        raise ConfigError("batched configs must have the same number of modes")
    frame = "rotating" if frame == "rot" else frame
    w_r = _frame_frequency(frame, pulse)
    dt = DEFAULT_DT[frame] if dt is None else float(dt)
    if not t_end > pulse.end:
        raise ConfigError("t_end must be after the end of the pulse")
    _check_step(configs, pulse, dt, frame, w_r)

    n_steps = int(round(t_end / dt))
    stride = max(1, int(round(output_interval / dt)))
    B = len(configs)
    A = np.stack([drift_matrix(c, w_r) for c in configs])
    v = np.stack([port_vector(c) for c in configs])
    P, w1, w2, w3 = rk4_affine_map(A, v * pulse.amplitude, dt)

    # drive samples at the three RK4 stage times of every step; edges are
    # taken one-sided so a pulse aligned with the grid is integrated exactly
    t_n = np.arange(n_steps) * dt
    tol = 1e-6 * dt
    s1 = pulse.envelope(t_n, "right", tol).astype(complex)
    s2 = pulse.envelope(t_n + 0.5 * dt, "right", tol).astype(complex)
    s3 = pulse.envelope(t_n + dt, "left", tol).astype(complex)
    if frame == "lab":
        s1 *= np.exp(-1j * pulse.carrier * t_n)
        s2 *= np.exp(-1j * pulse.carrier * (t_n + 0.5 * dt))
        s3 *= np.exp(-1j * pulse.carrier * (t_n + dt))
    driven = (s1 != 0) | (s2 != 0) | (s3 != 0)

    x = np.zeros((B, n), dtype=complex) if x0 is None else np.array(
        np.broadcast_to(x0, (B, n)), dtype=complex)
    cols = [P[:, :, j] for j in range(n)]
    n_out = n_steps // stride + 1
    out = np.empty((n_out, B, n), dtype=complex)
    out[0] = x
    k_out = 1
    for i in range(n_steps):
        y = cols[0] * x[:, 0:1]
        for j in range(1, n):
            y = y + cols[j] * x[:, j:j + 1]
        if driven[i]:
            y = y + w1 * s1[i] + w2 * s2[i] + w3 * s3[i]
        x = y
        if (i + 1) % stride == 0:
            if not np.all(np.isfinite(x)):
                raise NumericalInstabilityError(
                    f"non-finite state at t={(i + 1) * dt:.6g} ns", (i + 1) * dt)
            out[k_out] = x
            k_out += 1
    times = np.arange(n_out) * stride * dt
    a_in = pulse.amplitude * pulse.envelope(times, "right", tol)
    if frame == "lab":
        a_in = a_in * np.exp(-1j * pulse.carrier * times)
    traces = []
    for b in range(B):
        modes = out[:, b, :]
        meta = {"dt_ns": dt, "method": "rk4", "frame": frame, "frame_omega": w_r,
                "output_interval_ns": stride * dt, "pulse_start_ns": pulse.start,
                "pulse_end_ns": pulse.end, "carrier_mhz": pulse.carrier_mhz,
                "amplitude": complex(pulse.amplitude)}
        traces.append(ComplexAmplitudeTrace(times, modes, a_in.astype(complex),
                                            a_in - modes @ v[b], meta))
    return traces


def integrate(config: SystemConfig, pulse: PulseSpec, t_end: float, dt: float | None = None,
              frame: str = "rotating", output_interval: float = DEFAULT_OUTPUT_INTERVAL,
              x0: np.ndarray | None = None) -> ComplexAmplitudeTrace:
    """Classical RK4 trajectory of the driven mode amplitudes.

    Parameters
    ----------
    dt : float, optional
        Step in ns; defaults to 10 ps in the rotating frame and 1 ps in the
        lab frame.  Lab-frame steps must satisfy ``dt <= 1/(20 f_max)``.
    frame : {"rotating", "lab"}
        Rotating frame at the pulse carrier, or the lab frame.
    output_interval : float
        Spacing of returned samples (rounded to a whole number of steps).

    Raises
    ------
    StepSizeError, NumericalInstabilityError
    """
    return integrate_batch([config], pulse, t_end, dt, frame, output_interval, x0)[0]


def standard_pulse(config: SystemConfig, amplitude: complex = 1.0,
                   duration: float = 16.0) -> PulseSpec:
    """16 ns square pulse at the cavity frequency, starting at t = 0."""
    return PulseSpec(duration, rad_ns_to_mhz(config.cavity.omega), amplitude)


# --- exact propagation ----------------------------------------------------


class _Propagator:
    def __init__(self, A: np.ndarray, cond_limit: float = 1e8):
        self.A = A
        evals, V = np.linalg.eig(A)
        self.method = "eig"
        if np.linalg.cond(V) > cond_limit:
            self.method = "expm"
        else:
            self.evals, self.V, self.Vinv = evals, V, np.linalg.inv(V)

    def apply(self, taus: np.ndarray, y0: np.ndarray) -> np.ndarray:
        """``exp(A tau) y0`` for each tau; rows of the result follow ``taus``."""
        if self.method == "eig":
            c = self.Vinv @ y0
            return (np.exp(np.outer(taus, self.evals)) * c) @ self.V.T
        return np.array([scipy.linalg.expm(self.A * tau) @ y0 for tau in taus])


def _affine_flow(A, b, s, taus, x0, prop):
    """Solution of ``x' = A x + b s`` (constant ``s``) at offsets ``taus``."""
    if s == 0:
        return prop.apply(taus, x0)
    try:
        x_star = -np.linalg.solve(A, b * s)
        if not np.all(np.isfinite(x_star)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        n = len(x0)
        aug = np.zeros((n + 1, n + 1), dtype=complex)
        aug[:n, :n] = A
        aug[:n, n] = b * s
        y0 = np.append(x0, 1.0)
        return np.array([scipy.linalg.expm(aug * tau) @ y0 for tau in taus])[:, :n]
    return x_star + prop.apply(taus, x0 - x_star)


def exact_oracle(config: SystemConfig, pulse: PulseSpec, times: Sequence[float],
                 frame: str = "rotating") -> ComplexAmplitudeTrace:
    """Exact response to a square pulse by piecewise matrix-exponential propagation.

    Within each constant-drive segment ``x(t) = x* + exp(A (t - t0)) (x(t0) - x*)``
    with ``x*`` the segment's fixed point.  The exponential uses an
    eigendecomposition of ``A``; an ill-conditioned eigenbasis switches to
    ``scipy.linalg.expm`` and is recorded as ``metadata["method"] == "expm"``.
    """
    validate(config)
    if pulse.ramp > 0:
        raise ConfigError("exact propagation needs a piecewise-constant (unramped) pulse")
    frame = "rotating" if frame == "rot" else frame
    _frame_frequency(frame, pulse)
    times = np.asarray(times, dtype=float)
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ConfigError("sample times must be strictly increasing")
    w_c = pulse.carrier
    A = drift_matrix(config, w_c)
    v = port_vector(config)
    b = v * pulse.amplitude
    prop = _Propagator(A)
    n = config.n_modes
    # segments in the carrier frame: [0, start) off, [start, end) on, [end, inf) off
    edges = [(-np.inf, pulse.start, 0.0), (pulse.start, pulse.end, 1.0), (pulse.end, np.inf, 0.0)]
    modes = np.empty((len(times), n), dtype=complex)
    x = np.zeros(n, dtype=complex)
    t_prev = min(0.0, times[0] if times.size else 0.0)
    for lo, hi, s in edges:
        lo = max(lo, t_prev)
        if hi <= lo:
            continue
        sel = (times >= lo) & (times < hi)
        if np.any(sel):
            modes[sel] = _affine_flow(A, b, s, times[sel] - lo, x, prop)
        if np.isfinite(hi):
            x = _affine_flow(A, b, s, np.array([hi - lo]), x, prop)[0]
        t_prev = hi
    a_in = pulse.amplitude * pulse.envelope(times, "right")
    a_out = a_in - modes @ v
    if frame == "lab":
        phase = np.exp(-1j * w_c * times)
        modes = modes * phase[:, None]
        a_in = a_in * phase
        a_out = a_out * phase
    meta = {"method": prop.method, "frame": frame, "frame_omega": w_c if frame != "lab" else 0.0,
            "pulse_start_ns": pulse.start, "pulse_end_ns": pulse.end,
            "carrier_mhz": pulse.carrier_mhz, "amplitude": complex(pulse.amplitude)}
    return ComplexAmplitudeTrace(times, modes, a_in.astype(complex), a_out, meta)


# --- observables ----------------------------------------------------------


def to_db(trace: ComplexAmplitudeTrace, a_in_ref: complex,
          floor_db: float = DEFAULT_DB_FLOOR) -> np.ndarray:
    """``20 log10(|a_out| / |a_in_ref|)`` with values below ``floor_db`` clamped."""
    ref = abs(a_in_ref)
    if ref == 0:
        raise ValueError("reference amplitude must be non-zero")
    mag = np.abs(trace.a_out) / ref
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    return np.maximum(db, floor_db)


@dataclass(frozen=True)
class BeatEstimate:
    """Dominant envelope modulation frequency (MHz) and a confidence in [0, 1]."""

    frequency_mhz: float
    confidence: float
    significant: bool
    resolution_mhz: float
    n_cycles: float


def beat_frequency(trace: ComplexAmplitudeTrace, window: float | None = None,
                   threshold: float = 0.3, pad_factor: int = 16) -> BeatEstimate:
    """Estimate the beat frequency of the post-pulse ``|a_out|`` envelope.

    The analysis segment starts one sample after the pulse ends and lasts
    ``window`` ns (to the end of the trace when None).  The dB envelope is
    linearly detrended, Hann-windowed, zero-padded and Fourier transformed;
    the strongest non-DC peak is refined by parabolic interpolation.

    ``confidence`` is the fraction of the detrended envelope variance carried
    by a sinusoid at that frequency, and zero when the segment holds fewer
    than two periods (a bare difference in decay rates then looks like a
    slow modulation).
    """
    t = trace.times
    pulse_end = trace.metadata.get("pulse_end_ns", 0.0)
    after = np.nonzero(t >= pulse_end - 1e-9)[0]
    if after.size < 2:
        raise ValueError("trace has no post-pulse samples")
    seg = slice(after[0] + 1, None)
    ts = t[seg]
    env = np.abs(trace.a_out[seg])
    if window is not None:
        keep = ts <= ts[0] + window
        ts, env = ts[keep], env[keep]
    if ts.size < 8:
        raise ValueError("post-pulse segment holds fewer than 8 samples")
    step = np.diff(ts)
    if np.ptp(step) > 1e-6 * step.mean():
        raise ValueError("beat analysis needs uniformly sampled times")
    dt = step.mean()
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(np.maximum(env, 1e-300))
    resid = db - np.polyval(np.polyfit(ts, db, 1), ts)

    n_fft = pad_factor * (1 << int(math.ceil(math.log2(ts.size))))
    amp = np.abs(np.fft.rfft(resid * np.hanning(ts.size), n_fft))
    freqs = np.fft.rfftfreq(n_fft, dt)
    k = int(np.argmax(amp[1:])) + 1
    shift = 0.0
    if 1 <= k < len(amp) - 1:
        lm, l0, lp = np.log(amp[k - 1:k + 2] + 1e-300)
        denom = lm - 2 * l0 + lp
        if denom < 0:
            shift = 0.5 * (lm - lp) / denom
    f_cyc_per_ns = (k + shift) * (freqs[1] - freqs[0])

    duration = ts[-1] - ts[0]
    cycles = f_cyc_per_ns * duration
    confidence = 0.0
    total = np.sum((resid - resid.mean()) ** 2)
    if cycles >= 2.0 and total > 0:
        arg = 2 * np.pi * f_cyc_per_ns * ts
        X = np.column_stack([np.cos(arg), np.sin(arg), np.ones_like(ts)])
        coef, *_ = np.linalg.lstsq(X, resid, rcond=None)
        confidence = float(max(0.0, 1.0 - np.sum((resid - X @ coef) ** 2) / total))
    return BeatEstimate(f_cyc_per_ns * 1e3, confidence, confidence >= threshold,
                        1e3 / duration, cycles)
