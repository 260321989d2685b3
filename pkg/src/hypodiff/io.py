"""Report and ensemble serialization.

Binary ensemble layout (all little-endian):
  magic   4 bytes  b"HYPD"
  version u32      1
  d       u32      state dimension
  n_paths u64
  n_times u64
  times   f64 * n_times
  states  f64 * (n_paths * n_times * d), C order (path, time, component)
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .simulate import Ensemble

MAGIC = b"HYPD"
VERSION = 1


def write_ensemble_binary(ensemble: Ensemble, path) -> None:
    path = Path(path)
    p, t, d = ensemble.states.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, d))
        fh.write(struct.pack("<QQ", p, t))
        fh.write(np.ascontiguousarray(ensemble.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ensemble.states, dtype="<f8").tobytes())


def read_ensemble_binary(path) -> Ensemble:
    with open(Path(path), "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"not an ensemble file (magic {magic!r})")
        version, d = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported ensemble version {version}")
        p, t = struct.unpack("<QQ", fh.read(16))
        times = np.frombuffer(fh.read(8 * t), dtype="<f8")
        states = np.frombuffer(fh.read(8 * p * t * d), dtype="<f8")
    return Ensemble(times.copy(), states.reshape(p, t, d).copy())


def write_ensemble_csv(ensemble: Ensemble, path, max_paths: int | None = None) -> None:
    """Rows (path_id, t, x1..xd), one per path and grid time."""
    p, t, d = ensemble.states.shape
    n = p if max_paths is None else min(p, max_paths)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "t"] + [f"x{i + 1}" for i in range(d)])
        for pid in range(n):
            for k in range(t):
                writer.writerow(
                    [pid, repr(float(ensemble.times[k]))]
                    + [repr(float(v)) for v in ensemble.states[pid, k]]
                )


def write_csv(path, header, rows) -> None:
    """Generic CSV writer; floats are rendered with full repr precision."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                repr(float(v)) if isinstance(v, (float, np.floating)) else v
                for v in row
            ])


def write_density_grid_csv(path, d, rows) -> None:
    """Density samples with columns (s, x1..xd, t, y1..yd, p)."""
    header = (
        ["s"] + [f"x{i + 1}" for i in range(d)]
        + ["t"] + [f"y{i + 1}" for i in range(d)] + ["p"]
    )
    write_csv(path, header, rows)


def write_report(path, payload: dict) -> None:
    """Deterministic JSON: sorted keys, fixed layout, one key per line."""
    with open(Path(path), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_coerce)
        fh.write("\n")


def _coerce(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")
