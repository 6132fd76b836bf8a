"""Command-line front end: ``magbus <command> [options]``.

Commands write their products into ``--out`` together with a
``manifest.json`` holding every resolved parameter.  Exit status is 0 on
success, 2 for configuration errors, 3 for numerical failures and 4 for I/O
errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .dynamics import (
    DEFAULT_OUTPUT_INTERVAL,
    PulseSpec,
    beat_frequency,
    integrate_batch,
    to_db,
)
from .errors import (
    ConfigError,
    FitError,
    NumericalInstabilityError,
    SingularSystemError,
    StepSizeError,
    TraceFormatError,
)
from .fitting import extract_q, load_trace
from .heatmap import heatmap_payload, spectrum_image, write_atomic
from .model import (
    SystemConfig,
    config_from_dict,
    config_to_dict,
    load_json,
    rad_ns_to_mhz,
    unwrap,
)
from .phase import (
    REFERENCE_MICROSTRIP,
    PhaseTemplate,
    build_config_at_phase,
    microstrip,
    microstrip_from_dict,
    phase_model_from_dict,
    phase_model_to_dict,
)
from .spectral import (
    SWEEP_AXES,
    hybrid_eigenfrequencies,
    sweep_config,
    sweep_spectrum,
)

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 2, 3, 4
COMMANDS = ("spectrum", "phasemap", "ringdown", "eigen", "microstrip", "fit")
PRESETS = ("regime1", "regime2")
#: Ringdown sweeps integrate this many points per batch whatever ``--jobs`` is,
#: so the arithmetic of every point is independent of the parallelism.
RINGDOWN_CHUNK = 16
DB_WINDOWS = {"spectrum": (-30.0, 0.0), "phasemap": (-30.0, 0.0), "ringdown": (-80.0, 0.0)}


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class SweepAxis:
    name: str
    start: float
    stop: float
    count: int

    @classmethod
    def parse(cls, text: str) -> "SweepAxis":
        try:
            name, rng = text.split("=", 1)
            start, stop, count = rng.split(":")
            axis = cls(name.strip(), float(start), float(stop), int(count))
        except ValueError:
            raise ConfigError(f"bad sweep {text!r}; expected axis=start:stop:count") from None
        if axis.count < 1:
            raise ConfigError(f"sweep {axis.name}: count must be >= 1")
        if axis.start > axis.stop:
            raise ConfigError(f"sweep {axis.name}: start must not exceed stop")
        if axis.count == 1 and axis.start != axis.stop:
            raise ConfigError(f"sweep {axis.name}: a single point needs start == stop")
        return axis

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.count)

    def to_dict(self) -> dict:
        return {"axis": self.name, "start": self.start, "stop": self.stop, "count": self.count}


@dataclass
class JobSpec:
    command: str
    out: Path
    config_path: Path | None = None
    preset: str | None = None
    sweeps: list[SweepAxis] = field(default_factory=list)
    frame: str = "rotating"
    dt_ps: float | None = None
    db_min: float | None = None
    db_max: float | None = None
    jobs: int = 1
    input: Path | None = None
    t_end_ns: float | None = None
    freq_mhz: float = 5000.0
    beat_window_ns: float | None = None


@dataclass
class Resolved:
    """A configuration file resolved into engine objects."""

    raw: dict
    config: SystemConfig
    template: PhaseTemplate
    phase_model: object | None
    phase_deg: float | None
    defaults: dict


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("magbus").joinpath("presets", f"{name}.json").read_text("utf-8")
    return json.loads(text)


def resolve(raw: dict) -> Resolved:
    """Build the system config; a ``phase_deg`` entry overrides bus frequencies and g_mt."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    system = raw.get("system", raw)
    config = config_from_dict(system)
    template = PhaseTemplate.from_config(config)
    model = phase_model_from_dict(raw["phase_model"]) if "phase_model" in raw else None
    phase_deg = None
    if "phase_deg" in raw:
        if model is None:
            raise ConfigError("phase_deg given without a phase_model block")
        phase_deg = float(unwrap(raw["phase_deg"]))
        config = build_config_at_phase(template, model, phase_deg)
    if unwrap(raw.get("single_bus", False)):
        config = config.single_bus()
    defaults = {k: unwrap(v) for k, v in raw.get("defaults", {}).items()}
    return Resolved(raw, config, template, model, phase_deg, defaults)


def _load_job_config(job: JobSpec) -> Resolved:
    if job.config_path is not None and job.preset is not None:
        raise ConfigError("use either --config or --preset, not both")
    if job.config_path is not None:
        return resolve(load_json(job.config_path))
    return resolve(load_preset(job.preset or "regime1"))


def _split_sweeps(job: JobSpec, allowed: Sequence[str], default: str | None,
                  resolved: Resolved, probe: bool):
    sweeps = {s.name: s for s in job.sweeps}
    if len(sweeps) != len(job.sweeps):
        raise ConfigError("each sweep axis may be given only once")
    for name in sweeps:
        if name not in allowed and not (probe and name == "probe"):
            raise ConfigError(f"axis {name!r} not valid for {job.command}; allowed: "
                              f"{list(allowed) + (['probe'] if probe else [])}")
    main = [s for s in sweeps.values() if s.name != "probe"]
    if len(main) > 1:
        raise ConfigError("only one sweep axis besides the probe axis is supported")
    sweep = main[0] if main else None
    if sweep is None and default is not None:
        text = resolved.defaults.get("sweep", default)
        if "=" not in text:
            text = default
        sweep = SweepAxis.parse(text)
        if sweep.name not in allowed:
            sweep = SweepAxis.parse(default)
    probe_axis = sweeps.get("probe")
    if probe and probe_axis is None:
        f_c = rad_ns_to_mhz(resolved.config.cavity.omega)
        text = resolved.defaults.get("probe", f"{f_c - 50}:{f_c + 50}:201")
        probe_axis = SweepAxis.parse(f"probe={text}")
    return sweep, probe_axis


def _pulse(resolved: Resolved) -> PulseSpec:
    block = resolved.raw.get("pulse", {})
    carrier = unwrap(block.get("carrier_mhz", rad_ns_to_mhz(resolved.config.cavity.omega)))
    return PulseSpec(float(unwrap(block.get("duration_ns", 16.0))), float(carrier),
                     complex(unwrap(block.get("amplitude", 1.0))),
                     float(unwrap(block.get("start_ns", 0.0))),
                     float(unwrap(block.get("ramp_ns", 0.0))))


def _sweep_kwargs(resolved: Resolved, axis: str) -> tuple[object, dict]:
    if axis == "phi":
        if resolved.phase_model is None:
            raise ConfigError("phi sweeps need a phase_model block")
        base = resolved.template.with_magnon(resolved.config.magnon.omega)
        return base, {"phase_model": resolved.phase_model}
    return resolved.config, {}


def _manifest_base(job: JobSpec, resolved: Resolved | None) -> dict:
    manifest = {"command": job.command, "version": __version__}
    if job.preset is not None or job.config_path is not None:
        manifest["source"] = {"preset": job.preset,
                              "config": str(job.config_path) if job.config_path else None}
    if resolved is not None:
        manifest["system"] = config_to_dict(resolved.config)
        manifest["system_rad_per_ns"] = {
            "cavity": [resolved.config.cavity.omega, resolved.config.cavity.gamma],
            "magnon": [resolved.config.magnon.omega, resolved.config.magnon.gamma],
            "buses": [[b.omega_t, b.gamma_int, b.gamma_ext] for b in resolved.config.buses],
            "g_ct": resolved.config.g_ct, "g_mt": resolved.config.g_mt}
        if resolved.phase_model is not None:
            manifest["phase_model"] = phase_model_to_dict(resolved.phase_model)
        manifest["phase_deg"] = resolved.phase_deg
    return manifest


def _write_outputs(out: Path, files: dict[str, bytes | str], manifest: dict) -> None:
    """All products are computed before anything is written."""
    out.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, data in files.items():
        payload = data.encode("utf-8") if isinstance(data, str) else data
        write_atomic(out / name, payload)
        entries[name] = hashlib.sha256(payload).hexdigest()
    manifest["outputs"] = entries
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _db_window(job: JobSpec) -> tuple[float, float]:
    lo, hi = DB_WINDOWS.get(job.command, (-30.0, 0.0))
    lo = lo if job.db_min is None else job.db_min
    hi = hi if job.db_max is None else job.db_max
    if not lo < hi:
        raise ConfigError("--db-min must be below --db-max")
    return lo, hi


def _run_spectrum(job: JobSpec) -> dict:
    resolved = _load_job_config(job)
    if job.command == "phasemap":
        sweep, probe = _split_sweeps(job, ("phi",), "phi=0:360:361", resolved, probe=True)
    else:
        sweep, probe = _split_sweeps(job, SWEEP_AXES, "f_m=4962:5062:101", resolved, probe=True)
    base, kwargs = _sweep_kwargs(resolved, sweep.name)
    grid = sweep_spectrum(base, sweep.name, sweep.values(), probe.values(),
                          jobs=job.jobs, **kwargs)
    lo, hi = _db_window(job)
    image, meta = spectrum_image(grid)
    pgm, side = heatmap_payload(image, lo, hi, meta)
    manifest = _manifest_base(job, resolved)
    manifest.update({"sweep": sweep.to_dict(), "probe": probe.to_dict(),
                     "db_window": [lo, hi]})
    name = job.command
    return {"files": {f"{name}.csv": grid.csv_text(), f"{name}.pgm": pgm,
                      f"{name}.json": side}, "manifest": manifest}


def _run_ringdown(job: JobSpec) -> dict:
    resolved = _load_job_config(job)
    sweep, _ = _split_sweeps(job, SWEEP_AXES, None, resolved, probe=False)
    pulse = _pulse(resolved)
    frame = "rotating" if job.frame in ("rot", "rotating") else job.frame
    dt = None if job.dt_ps is None else job.dt_ps * 1e-3
    t_end = job.t_end_ns or float(resolved.defaults.get("t_end_ns", 300.0))
    interval = float(resolved.defaults.get("output_interval_ns", DEFAULT_OUTPUT_INTERVAL))
    if sweep is None:
        values, configs = np.array([np.nan]), [resolved.config]
    else:
        base, kwargs = _sweep_kwargs(resolved, sweep.name)
        values = sweep.values()
        configs = [sweep_config(base, sweep.name, v, **kwargs) for v in values]
        if resolved.raw.get("single_bus") and sweep.name == "phi":
            configs = [c.single_bus() for c in configs]
        n_modes = {c.n_modes for c in configs}
        if len(n_modes) > 1:
            raise ConfigError("sweep changes the number of modes; batch integration needs one")
    chunks = [configs[i:i + RINGDOWN_CHUNK] for i in range(0, len(configs), RINGDOWN_CHUNK)]

    def run(chunk):
        return integrate_batch(chunk, pulse, t_end, dt, frame, interval)

    if job.jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=job.jobs) as pool:
            traces = [t for part in pool.map(run, chunks) for t in part]
    else:
        traces = [t for chunk in chunks for t in run(chunk)]

    manifest = _manifest_base(job, resolved)
    manifest.update({
        "pulse": {"duration_ns": pulse.duration, "carrier_mhz": pulse.carrier_mhz,
                  "amplitude": [pulse.amplitude.real, pulse.amplitude.imag],
                  "start_ns": pulse.start, "ramp_ns": pulse.ramp},
        "frame": frame, "dt_ns": traces[0].metadata["dt_ns"], "t_end_ns": t_end,
        "output_interval_ns": traces[0].metadata["output_interval_ns"]})
    ref = pulse.amplitude
    if sweep is None:
        text = traces[0].csv_text(ref)
        return {"files": {"trace.csv": text}, "manifest": manifest}

    lo, hi = _db_window(job)
    db = np.vstack([to_db(t, ref) for t in traces])
    times = traces[0].times
    lines = [f"# axis={sweep.name}", "sweep_value,t_ns,aout_re,aout_im,aout_db"]
    for i, sv in enumerate(values):
        a = traces[i].a_out
        for k, t in enumerate(times):
            lines.append(",".join(_fmt(x) for x in (sv, t, a[k].real, a[k].imag, db[i, k])))
    beats = ["sweep_value,beat_mhz,confidence,significant,eigen_splitting_mhz"]
    for sv, tr, cfg in zip(values, traces, configs):
        b = beat_frequency(tr, job.beat_window_ns)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                e = hybrid_eigenfrequencies(cfg, verify=False)
            split = abs(e.splitting.real) / (2 * np.pi) * 1e3
        except ConfigError:
            split = float("nan")
        beats.append(",".join([_fmt(sv), _fmt(b.frequency_mhz), _fmt(b.confidence),
                               str(bool(b.significant)).lower(), _fmt(split)]))
    meta = {"x_axis": sweep.name, "x_first": float(values[0]), "x_last": float(values[-1]),
            "y_axis": "t_ns", "y_first": float(times[0]), "y_last": float(times[-1])}
    pgm, side = heatmap_payload(db.T, lo, hi, meta)
    manifest.update({"sweep": sweep.to_dict(), "db_window": [lo, hi]})
    return {"files": {"ringdown.csv": "\n".join(lines) + "\n",
                      "beats.csv": "\n".join(beats) + "\n",
                      "ringdown.pgm": pgm, "ringdown.json": side}, "manifest": manifest}


def _run_eigen(job: JobSpec) -> dict:
    resolved = _load_job_config(job)
    sweep, _ = _split_sweeps(job, SWEEP_AXES, "f_m=4962:5062:101", resolved, probe=False)
    base, kwargs = _sweep_kwargs(resolved, sweep.name)
    lines = ["sweep_value,plus_re_mhz,plus_im_mhz,minus_re_mhz,minus_im_mhz,"
             "gamma_c_prime_mhz,gamma_m_prime_mhz,Gamma_mhz,regime"]
    caught = set()
    for v in sweep.values():
        cfg = sweep_config(base, sweep.name, v, **kwargs)
        if resolved.raw.get("single_bus") or cfg.n_modes > 3:
            cfg = cfg.single_bus()
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            e = hybrid_eigenfrequencies(cfg)
        caught.update(str(x.message) for x in w)
        k = 1e3 / (2 * np.pi)
        lines.append(",".join(_fmt(x) for x in (
            v, e.omega_plus.real * k, e.omega_plus.imag * k, e.omega_minus.real * k,
            e.omega_minus.imag * k, e.gamma_c_prime * k, e.gamma_m_prime * k, e.Gamma * k))
            + f",{e.regime}")
    manifest = _manifest_base(job, resolved)
    manifest.update({"sweep": sweep.to_dict(), "warnings": sorted(caught)})
    return {"files": {"eigen.csv": "\n".join(lines) + "\n"}, "manifest": manifest}


def _run_microstrip(job: JobSpec) -> dict:
    geometry = REFERENCE_MICROSTRIP
    raw = None
    if job.config_path is not None or job.preset is not None:
        raw = load_json(job.config_path) if job.config_path else load_preset(job.preset)
        if "microstrip" in raw:
            geometry = microstrip_from_dict(raw["microstrip"])
    r = microstrip(geometry, job.freq_mhz)
    result = {"f_mhz": job.freq_mhz, "eps_eff": r.eps_eff, "w_eff_mm": r.w_eff,
              "lambda_g_mm": r.lambda_g, "node_spacing_mm": r.node_spacing,
              "node_antinode_spacing_mm": r.node_antinode_spacing}
    print(f"eps_eff = {r.eps_eff:.4f}")
    print(f"w_eff = {r.w_eff:.4f} mm")
    print(f"lambda_g = {r.lambda_g:.3f} mm")
    print(f"lambda_g/2 = {r.node_spacing:.3f} mm")
    print(f"lambda_g/4 = {r.node_antinode_spacing:.3f} mm")
    manifest = _manifest_base(job, None)
    manifest["geometry"] = {"eps_r": geometry.eps_r, "h_mm": geometry.h,
                            "w_mm": geometry.w, "t_mm": geometry.t}
    manifest["f_mhz"] = job.freq_mhz
    return {"files": {"microstrip.json": json.dumps(result, indent=2, sort_keys=True) + "\n"},
            "manifest": manifest}


def _run_fit(job: JobSpec) -> dict:
    if job.input is None:
        raise ConfigError("fit needs --input TRACE.csv")
    result = extract_q(load_trace(job.input))
    print(f"f0 = {result.f0_mhz:.4f} MHz  Q_L = {result.q_loaded:.2f}  "
          f"Q_i = {result.q_internal:.2f}  Q_c = {result.q_coupling:.2f}  "
          f"({result.coupling_regime})")
    manifest = _manifest_base(job, None)
    manifest["input"] = str(job.input)
    return {"files": {"fit.json": result.to_json() + "\n"}, "manifest": manifest}


_RUNNERS = {"spectrum": _run_spectrum, "phasemap": _run_spectrum, "ringdown": _run_ringdown,
            "eigen": _run_eigen, "microstrip": _run_microstrip, "fit": _run_fit}


def run(job: JobSpec) -> int:
    """Execute a job; returns the process exit status."""
    try:
        if job.command not in _RUNNERS:
            raise ConfigError(f"unknown command {job.command!r}")
        if job.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        product = _RUNNERS[job.command](job)
        _write_outputs(Path(job.out), product["files"], product["manifest"])
    except (ConfigError, TraceFormatError, StepSizeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularSystemError, NumericalInstabilityError, FitError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magbus", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--preset", choices=PRESETS, help="bundled parameter set")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--sweep", action="append", default=[], metavar="AXIS=START:STOP:COUNT",
                   help=f"repeatable; axes {', '.join(SWEEP_AXES)}, phi, probe")
    p.add_argument("--frame", choices=("lab", "rot"), default="rot")
    p.add_argument("--dt-ps", type=float)
    p.add_argument("--t-end-ns", type=float)
    p.add_argument("--db-min", type=float)
    p.add_argument("--db-max", type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--input", type=Path, help="trace CSV for fit")
    p.add_argument("--freq-mhz", type=float, default=5000.0, help="microstrip frequency")
    p.add_argument("--beat-window-ns", type=float)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sweeps = [SweepAxis.parse(s) for s in args.sweep]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    job = JobSpec(command=args.command, out=args.out, config_path=args.config,
                  preset=args.preset, sweeps=sweeps, frame=args.frame, dt_ps=args.dt_ps,
                  db_min=args.db_min, db_max=args.db_max, jobs=args.jobs, input=args.input,
                  t_end_ns=args.t_end_ns, freq_mhz=args.freq_mhz,
                  beat_window_ns=args.beat_window_ns)
    return run(job)


if __name__ == "__main__":
    sys.exit(main())
