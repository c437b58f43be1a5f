"""Trajectory CSV and JSON sidecar I/O.

Floats are written with ``repr`` (shortest round-trip decimal), so reading a
file back reproduces the arrays bit for bit.  The ``t`` column is derived from
``s`` and printed as mantissa/exponent text because t = e^s overflows doubles
on long runs; ``s`` is the authoritative time column.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .geometry import observable_columns, observables_from_frames

__all__ = ["format_t", "trajectory_columns", "write_trajectory", "read_trajectory", "write_json"]

_LOG10_E = 1 / math.log(10)


def format_t(s: float) -> str:
    """e^s as text, valid far beyond the float range."""
    if s < 700:
        return repr(math.exp(s))
    x = s * _LOG10_E
    e = math.floor(x)
    return f"{10 ** (x - e)!r}e{e}"


def center_names(K: int, d: int) -> list[str]:
    return [f"z{k}_{i}" for k in range(K) for i in range(d)]


def trajectory_columns(traj: Trajectory, kernel=None, clock=None) -> dict:
    """Ordered column name -> array mapping (observables only for (1,3) runs with a clock)."""
    cols = {"t": [format_t(float(v)) for v in traj.s], "s": traj.s}
    flat = traj.centers.reshape(traj.n_frames, -1)
    for j, name in enumerate(center_names(traj.K, traj.d)):
        cols[name] = flat[:, j]
    is_13 = traj.K == 4 and [int(v) for v in traj.signs] == [1, -1, -1, -1]
    if is_13 and kernel is not None and clock is not None:
        obs = observables_from_frames(traj.s, traj.centers, kernel, clock)
        cols.update(observable_columns(obs))
    return cols


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def write_trajectory(path, traj: Trajectory, kernel=None, clock=None, extra_meta: dict | None = None) -> Path:
    """Write the CSV plus ``<path>.json`` with model, signs and integrator statistics."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = trajectory_columns(traj, kernel, clock)
    names = list(cols)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(traj.n_frames):
            w.writerow([cols["t"][i]] + [repr(float(cols[n][i])) for n in names[1:]])
    meta = {
        "K": traj.K,
        "d": traj.d,
        "signs": [int(v) for v in traj.signs],
        "model": traj.model,
        "stats": traj.stats,
        "collision": traj.collision,
        "collision_s": traj.collision_s,
        "columns": names,
    }
    if extra_meta:
        meta.update(extra_meta)
    write_json(path.with_suffix(path.suffix + ".json"), meta)
    return path


def read_trajectory(path) -> tuple[Trajectory, dict]:
    """Inverse of :func:`write_trajectory`; returns the trajectory and the sidecar dict."""
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    K, d = int(meta["K"]), int(meta["d"])
    names = center_names(K, d)
    with path.open(newline="") as fh:
        rows = csv.DictReader(fh)
        s, z = [], []
        for row in rows:
            s.append(float(row["s"]))
            z.append([float(row[n]) for n in names])
    traj = Trajectory(
        s=np.array(s),
        centers=np.array(z).reshape(len(s), K, d),
        signs=np.array(meta["signs"]),
        model=meta["model"],
        stats=meta["stats"],
        collision=bool(meta["collision"]),
        collision_s=meta["collision_s"],
    )
    return traj, meta
