"""16-bit PGM heatmaps with JSON sidecars, and atomic file output."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAXVAL = 65535


def write_atomic(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_pixels(values, db_min: float, db_max: float) -> np.ndarray:
    """Linear map of ``[db_min, db_max]`` onto ``[0, 65535]`` with clamping."""
    if not db_min < db_max:
        raise ConfigError("heatmap scale needs db_min < db_max")
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.size == 0:
        raise ConfigError("heatmap needs a non-empty 2-D grid")
    if np.any(np.isnan(v)):
        raise ConfigError("heatmap grid contains NaN")
    frac = (np.clip(v, db_min, db_max) - db_min) / (db_max - db_min)
    return np.rint(frac * MAXVAL).astype(np.uint16)


def pgm_bytes(pixels: np.ndarray) -> bytes:
    rows, cols = pixels.shape
    header = f"P5\n{cols} {rows}\n{MAXVAL}\n".encode("ascii")
    return header + pixels.astype(">u2").tobytes(order="C")


def read_pgm(path) -> np.ndarray:
    """Parse a 16-bit binary PGM as written by :func:`render_heatmap`."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows, maxval = (int(x) for x in fields[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw[pos + 1:], dtype=dtype, count=rows * cols).reshape(rows, cols)


def heatmap_payload(values, db_min: float, db_max: float,
                    metadata: dict | None = None) -> tuple[bytes, str]:
    """PGM bytes and sidecar JSON text for ``values``."""
    pixels = to_pixels(values, db_min, db_max)
    side = {"rows": int(pixels.shape[0]), "cols": int(pixels.shape[1]), "maxval": MAXVAL,
            "db_min": float(db_min), "db_max": float(db_max)}
    side.update(metadata or {})
    return pgm_bytes(pixels), json.dumps(side, indent=2, sort_keys=True) + "\n"


def render_heatmap(values, path, db_min: float, db_max: float,
                   metadata: dict | None = None) -> Path:
    """Write ``values`` (row-major, first row on top) as a P5 PGM plus ``.json`` sidecar."""
    pgm, side = heatmap_payload(values, db_min, db_max, metadata)
    path = Path(path)
    write_atomic(path, pgm)
    write_atomic(path.with_suffix(".json"), side)
    return path


def spectrum_image(grid) -> tuple[np.ndarray, dict]:
    """Orient a spectrum grid for display: probe frequency descending down the
    rows, sweep value ascending across the columns."""
    db = grid.db().T
    f = grid.probe_f_mhz
    sweep = np.asarray(grid.sweep_values)
    if f.size > 1 and f[1] > f[0]:
        db, f = db[::-1], f[::-1]
    if sweep.size > 1 and sweep[1] < sweep[0]:
        db, sweep = db[:, ::-1], sweep[::-1]
    meta = {"x_axis": grid.axis, "x_first": float(sweep[0]), "x_last": float(sweep[-1]),
            "y_axis": "probe_f_mhz", "y_first": float(f[0]), "y_last": float(f[-1])}
    return db, meta
