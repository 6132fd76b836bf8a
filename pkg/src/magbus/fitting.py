"""Resonance and quality-factor extraction from complex reflection traces.

Frequencies are in MHz and linewidths ``kappa = gamma / 2 pi`` in MHz
throughout; the ideal single-port response is
``S11(f) = 1 - kappa_ext / (i (f0 - f) + kappa_t / 2)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import FitError, TraceFormatError

MIN_POINTS = 16
MAX_ITERATIONS = 500
TOLERANCE = 1e-10
MIN_SPAN_LINEWIDTHS = 3.0


@dataclass(frozen=True)
class S11Trace:
    f_mhz: np.ndarray
    s11: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f_mhz, dtype=float)
        s = np.asarray(self.s11, dtype=complex)
        object.__setattr__(self, "f_mhz", f)
        object.__setattr__(self, "s11", s)
        if f.ndim != 1 or f.shape != s.shape:
            raise TraceFormatError("frequency and S11 arrays must be 1-D with equal length")
        if f.size < MIN_POINTS:
            raise TraceFormatError(f"trace needs at least {MIN_POINTS} points, got {f.size}")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(s))):
            raise TraceFormatError("trace contains non-finite values")
        bad = np.nonzero(np.diff(f) <= 0)[0]
        if bad.size:
            raise TraceFormatError(
                f"frequencies must be strictly increasing (sample {bad[0] + 1})")


@dataclass(frozen=True)
class FitResult:
    f0_mhz: float
    q_loaded: float
    q_internal: float
    q_coupling: float
    center: complex
    radius: float
    rms: float
    residual_rms: float
    kappa_t_mhz: float
    kappa_int_mhz: float
    kappa_ext_mhz: float
    external_fraction: float
    reciprocal_residual: float
    delay_ns: float
    prefactor: complex
    coupling_regime: str
    iterations: int

    def to_dict(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            if isinstance(value, complex):
                out[key] = {"re": value.real, "im": value.imag}
            else:
                out[key] = value
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text


def fit_circle(points) -> tuple[complex, float, float]:
    """Algebraic circle fit with the Pratt normalization.

    Minimizes ``sum (A|z|^2 + B x + C y + D)^2`` subject to
    ``B^2 + C^2 - 4AD = 1``.  Returns ``(center, radius, rms)`` where ``rms``
    is the root-mean-square geometric distance to the circle.
    """
    z = np.asarray(points, dtype=complex).ravel()
    if z.size < 3:
        raise FitError("circle fit needs at least 3 points")
    shift = z.mean()
    scale = np.max(np.abs(z - shift))
    if not scale > 0:
        raise FitError("degenerate input: all points coincide")
    w = (z - shift) / scale
    x, y = w.real, w.imag
    Z = np.column_stack([x * x + y * y, x, y, np.ones_like(x)])
    M = Z.T @ Z / len(w)
    N = np.array([[0, 0, 0, -2], [0, 1, 0, 0], [0, 0, 1, 0], [-2, 0, 0, 0]], dtype=float)
    evals, evecs = scipy.linalg.eig(M, N)
    evals = np.real(evals)
    ok = np.isfinite(evals) & (evals > -1e-12 * max(1.0, np.trace(M)))
    if not np.any(ok):
        raise FitError("degenerate input: no admissible circle")
    k = np.flatnonzero(ok)[np.argmin(evals[ok])]
    A, B, C, D = np.real(evecs[:, k])
    if abs(A) < 1e-12 * max(abs(B), abs(C), abs(D)):
        raise FitError("degenerate input: points are collinear")
    c = complex(-B / (2 * A), -C / (2 * A))
    r = math.sqrt(max(B * B + C * C - 4 * A * D, 0.0)) / (2 * abs(A))
    center = shift + scale * c
    radius = scale * r
    if not (np.isfinite(radius) and radius > 0):
        raise FitError("degenerate input: zero-radius circle")
    rms = float(np.sqrt(np.mean((np.abs(z - center) - radius) ** 2)))
    return complex(center), float(radius), rms


def _design(f, f0, kappa_t, delay_us):
    rot = np.exp(-2j * np.pi * f * delay_us)
    return np.column_stack([rot, rot / (1j * (f0 - f) + 0.5 * kappa_t)])


def _project(f, s, f0, kappa_t, delay_us):
    X = _design(f, f0, kappa_t, delay_us)
    coef, *_ = np.linalg.lstsq(X, s, rcond=None)
    return coef, s - X @ coef


def _seed_delay(f, s):
    # the delay that makes the trace most circular
    span = f[-1] - f[0]
    slope = np.polyfit(f, np.unwrap(np.angle(s)), 1)[0] / (-2 * np.pi)
    grid = slope + np.linspace(-2.0, 2.0, 81) / span
    scores = []
    for tau in grid:
        try:
            scores.append(fit_circle(s * np.exp(2j * np.pi * f * tau))[2])
        except FitError:
            scores.append(np.inf)
    return float(grid[int(np.argmin(scores))])


def _seed_resonance(f, s, delay_us):
    z = s * np.exp(2j * np.pi * f * delay_us)
    off = 0.5 * (z[0] + z[-1])
    dev = np.abs(z - off) ** 2
    k = int(np.argmax(dev))
    above = np.nonzero(dev >= 0.5 * dev[k])[0]
    width = f[min(above[-1] + 1, len(f) - 1)] - f[max(above[0] - 1, 0)]
    return float(f[k]), float(max(width, 2 * np.min(np.diff(f))))


def extract_q(trace: S11Trace) -> FitResult:
    """Fit a single-port resonance and return its quality factors.

    The model multiplies the ideal reflection by a complex prefactor and an
    electrical delay ``exp(-2 pi i f tau)``.  For fixed ``(f0, kappa_t, tau)``
    the model is linear in the remaining two complex coefficients, which are
    eliminated by least squares; the three nonlinear parameters are refined
    with bounded Nelder-Mead (500 iterations, 1e-10 relative tolerance).

    Raises
    ------
    FitError
        Flat trace, span under three linewidths, or no convergence.
    """
    f, s = trace.f_mhz, trace.s11
    if np.ptp(np.abs(s)) < 1e-9 * max(np.max(np.abs(s)), 1e-300):
        raise FitError("flat trace: no resonance feature to fit")
    tau0 = _seed_delay(f, s)
    f0s, ks = _seed_resonance(f, s, tau0)
    span = f[-1] - f[0]
    if span < MIN_SPAN_LINEWIDTHS * ks:
        raise FitError(f"span {span:.4g} MHz is under {MIN_SPAN_LINEWIDTHS:g} linewidths")

    def unpack(p):
        return f0s + p[0] * ks, ks * math.exp(p[1]), tau0 + p[2] / ks

    def cost(p):
        _, r = _project(f, s, *unpack(p))
        return float(np.vdot(r, r).real)

    scale = float(np.vdot(s, s).real)
    half = 0.5 * span / ks
    bounds = [((f[0] - f0s) / ks, (f[-1] - f0s) / ks), (-6.0, 4.0), (-half, half)]
    best = None
    for p0 in ([0.0, 0.0, 0.0], [0.0, math.log(0.5), 0.0], [0.0, math.log(2.0), 0.0]):
        res = scipy.optimize.minimize(
            cost, p0, method="Nelder-Mead", bounds=bounds,
            options={"maxiter": MAX_ITERATIONS, "xatol": TOLERANCE,
                     "fatol": TOLERANCE * scale, "adaptive": False})
        if best is None or res.fun < best.fun:
            best = res
    if not best.success:
        raise FitError(f"no convergence after {MAX_ITERATIONS} iterations: {best.message}")

    f0, kappa_t, tau = unpack(best.x)
    (c1, c2), resid = _project(f, s, f0, kappa_t, tau)
    if abs(c1) == 0:
        raise FitError("fit collapsed to a zero baseline")
    kappa_ext = float(np.real(-c2 / c1))
    kappa_int = kappa_t - kappa_ext
    if span < MIN_SPAN_LINEWIDTHS * kappa_t:
        raise FitError(f"span {span:.4g} MHz is under {MIN_SPAN_LINEWIDTHS:g} fitted linewidths")
    if not (kappa_ext > 0 and kappa_int > 0):
        raise FitError("fitted rates are unphysical (negative internal or external loss)")

    normalized = s * np.exp(2j * np.pi * f * tau) / c1
    center, radius, rms = fit_circle(normalized)
    regime = "overcoupled" if abs(center) < radius else "undercoupled"
    ql, qi, qc = f0 / kappa_t, f0 / kappa_int, f0 / kappa_ext
    return FitResult(
        f0_mhz=float(f0), q_loaded=float(ql), q_internal=float(qi), q_coupling=float(qc),
        center=center, radius=radius, rms=rms,
        residual_rms=float(np.sqrt(np.mean(np.abs(resid) ** 2))),
        kappa_t_mhz=float(kappa_t), kappa_int_mhz=float(kappa_int),
        kappa_ext_mhz=kappa_ext, external_fraction=kappa_ext / kappa_t,
        reciprocal_residual=float(1 / ql - 1 / qi - 1 / qc),
        delay_ns=float(tau * 1e3), prefactor=complex(c1), coupling_regime=regime,
        iterations=int(best.nit))


def synthesize_trace(f0_mhz: float, q_loaded: float, q_coupling: float, f_mhz,
                     prefactor: complex = 1.0, delay_ns: float = 0.0) -> S11Trace:
    """Ideal single-port reflection with optional baseline and delay."""
    f = np.asarray(f_mhz, dtype=float)
    kt, ke = f0_mhz / q_loaded, f0_mhz / q_coupling
    s = 1 - ke / (1j * (f0_mhz - f) + 0.5 * kt)
    return S11Trace(f, prefactor * np.exp(-2j * np.pi * f * delay_ns * 1e-3) * s)


_COLUMN_SETS = (("f_mhz", "s11_re", "s11_im"), ("probe_f_mhz", "s11_re", "s11_im"))


def load_trace(path, sweep_value: float | None = None) -> S11Trace:
    """Read a CSV with columns ``f_mhz, s11_re, s11_im`` (header optional).

    Spectrum grid exports are accepted too; a multi-row grid needs
    ``sweep_value`` to select one row.  Lines starting with ``#`` are skipped.
    """
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError:
        raise
    idx = (0, 1, 2)
    sweep_col = None
    rows: list[tuple[float, float, float, float | None]] = []
    with fh:
        header_seen = False
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in row]
            if not header_seen and not rows:
                header_seen = True
                try:
                    [float(c) for c in cells]
                except ValueError:
                    names = [c.lower() for c in cells]
                    for cols in _COLUMN_SETS:
                        if all(c in names for c in cols):
                            idx = tuple(names.index(c) for c in cols)
                            break
                    else:
                        raise TraceFormatError(
                            f"unrecognized header {cells!r}; expected f_mhz,s11_re,s11_im",
                            lineno) from None
                    if "sweep_value" in names:
                        sweep_col = names.index("sweep_value")
                    continue
            try:
                vals = [float(cells[i]) for i in idx]
                sv = float(cells[sweep_col]) if sweep_col is not None else None
            except (ValueError, IndexError):
                raise TraceFormatError(f"cannot parse row {','.join(cells)!r}", lineno) from None
            rows.append((*vals, sv))
    if not rows:
        raise TraceFormatError("no data rows", None)
    if sweep_col is not None:
        values = sorted({r[3] for r in rows})
        if sweep_value is None:
            if len(values) > 1:
                raise TraceFormatError(
                    f"file holds {len(values)} sweep rows; select one with sweep_value", None)
            sweep_value = values[0]
        rows = [r for r in rows if r[3] == sweep_value]
        if not rows:
            raise TraceFormatError(f"sweep value {sweep_value!r} not present", None)
    data = np.array([r[:3] for r in rows])
    return S11Trace(data[:, 0], data[:, 1] + 1j * data[:, 2])


def save_trace(trace: S11Trace, path) -> None:
    lines = ["f_mhz,s11_re,s11_im"]
    lines += [f"{float(f)!r},{float(z.real)!r},{float(z.imag)!r}"
              for f, z in zip(trace.f_mhz, trace.s11)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
