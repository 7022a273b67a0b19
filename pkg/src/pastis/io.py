"""Trajectory files: CSV ``t,x1..xd`` plus a JSON sidecar with the metadata."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .sde_sim import Trajectory
from .spde_sim import GridSpec


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_suffix(p.suffix + ".json") if p.suffix != ".json" else p


def _check_dir(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")


def write_trajectory(path, traj: Trajectory, meta: dict | None = None) -> None:
    """Write the CSV and ``<path>.json``; both are deterministic for equal inputs."""
    _check_dir(path)
    d = traj.states.shape[1]
    cols = [f"x{i + 1}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *cols])
        for k, row in enumerate(traj.states):
            w.writerow([repr(k * traj.dt), *map(repr, row.tolist())])
    info = {"dt": traj.dt, "n": traj.n, "d": d, "columns": ["t", *cols]}
    if traj.grid is not None:
        info["grid"] = traj.grid.describe()
    info.update({k: v for k, v in traj.meta.items() if _jsonable(v)})
    if meta:
        info.update(meta)
    with open(sidecar_path(path), "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def read_trajectory(path) -> Trajectory:
    """Parse a trajectory CSV; dt comes from the sidecar when present, else from the t column."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such trajectory file: {path}")
    rows = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise DataFormatError(f"{path}: line 1: file is empty") from None
        if not header or header[0].strip() != "t" or len(header) < 2:
            raise DataFormatError(f"{path}: line 1: expected header 't,x1,...'")
        width = len(header)
        for lineno, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataFormatError(f"{path}: line {lineno}: expected {width} fields, found {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: non-numeric field") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataFormatError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    if len(rows) < 2:
        raise DataFormatError(f"{path}: need at least 2 data rows, found {len(rows)}")
    arr = np.array(rows)
    info = {}
    side = sidecar_path(path)
    if side.is_file():
        with open(side) as fh:
            info = json.load(fh)
    dt = float(info.get("dt", arr[1, 0] - arr[0, 0]))
    if not dt > 0:
        raise DataFormatError(f"{path}: line 3: time column is not increasing")
    grid = GridSpec(**info["grid"]) if "grid" in info else None
    meta = {k: v for k, v in info.items() if k not in ("dt", "grid", "columns", "n", "d")}
    return Trajectory(arr[:, 1:], dt, grid=grid, meta=meta)


def write_json(path, obj) -> None:
    _check_dir(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")
    os.replace(tmp, path)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
