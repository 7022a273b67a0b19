"""Stochastic Gray-Scott model on a periodic square lattice.

Fields are stored as (2, nx, ny) stacks, u first. Flattened trajectories put
all of u (row-major) before all of v, so cell (i, j) of v sits at column
nx*ny + i*ny + j.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NonFinite
from .sde_sim import Trajectory, make_rng

_CHUNK_CELLS = 1 << 22


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    dx: float = 1.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grid needs at least 3 cells per side")
        if not self.dx > 0:
            raise ValueError("dx must be positive")

    @property
    def cells(self) -> int:
        return self.nx * self.ny

    @property
    def volume(self) -> float:
        """Cell volume dx^2 that scales the per-cell noise."""
        return self.dx * self.dx

    def describe(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "dx": self.dx}


@dataclass(frozen=True)
class GrayScottParams:
    Du: float = 0.2097
    Dv: float = 0.105
    F: float = 0.029
    k: float = 0.057
    D: float = 0.001

    def __post_init__(self):
        if min(self.Du, self.Dv, self.F, self.k, self.D) < 0:
            raise ValueError("Gray-Scott parameters must be non-negative")

    def describe(self) -> dict:
        return {"Du": self.Du, "Dv": self.Dv, "F": self.F, "k": self.k, "D": self.D}


@dataclass(frozen=True, eq=False)
class FieldTrajectory:
    snapshots: np.ndarray  # (N, 2 * nx * ny)
    dt: float
    grid: GridSpec

    def fields(self, row: int) -> tuple[np.ndarray, np.ndarray]:
        uv = self.snapshots[row].reshape(2, self.grid.nx, self.grid.ny)
        return uv[0], uv[1]


# --- periodic stencils (also used by the field basis library) ---------------

def laplacian_periodic(field: np.ndarray, dx: float, axes=(-2, -1)) -> np.ndarray:
    """Five-point Laplacian with periodic wrap."""
    a, b = axes
    return (np.roll(field, 1, a) + np.roll(field, -1, a) + np.roll(field, 1, b)
            + np.roll(field, -1, b) - 4.0 * field) / (dx * dx)


def d_x(field, dx, axes=(-2, -1)):
    a = axes[0]
    return (np.roll(field, -1, a) - np.roll(field, 1, a)) / (2.0 * dx)


def d_y(field, dx, axes=(-2, -1)):
    b = axes[1]
    return (np.roll(field, -1, b) - np.roll(field, 1, b)) / (2.0 * dx)


def d_xx(field, dx, axes=(-2, -1)):
    a = axes[0]
    return (np.roll(field, -1, a) - 2.0 * field + np.roll(field, 1, a)) / (dx * dx)


def d_yy(field, dx, axes=(-2, -1)):
    b = axes[1]
    return (np.roll(field, -1, b) - 2.0 * field + np.roll(field, 1, b)) / (dx * dx)


def d_xy(field, dx, axes=(-2, -1)):
    return d_y(d_x(field, dx, axes), dx, axes)


STENCILS = {
    "dx": d_x,
    "dy": d_y,
    "dxx": d_xx,
    "dyy": d_yy,
    "dxy": d_xy,
    "laplacian": laplacian_periodic,
}


def default_initial_fields(grid: GridSpec, seed=0, patch: float = 0.2, jitter: float = 0.01):
    """(u, v) = (1, 0) with a centred square where (u, v) = (0.5, 0.25).

    The patch covers ``patch`` of each side; a small seeded jitter breaks the
    square symmetry so patterns can develop.
    """
    u = np.ones((grid.nx, grid.ny))
    v = np.zeros((grid.nx, grid.ny))
    hx = max(1, int(round(grid.nx * patch / 2)))
    hy = max(1, int(round(grid.ny * patch / 2)))
    cx, cy = grid.nx // 2, grid.ny // 2
    sl = (slice(cx - hx, cx + hx), slice(cy - hy, cy + hy))
    u[sl] = 0.5
    v[sl] = 0.25
    if jitter:
        rng = make_rng(seed)
        u[sl] += jitter * rng.standard_normal(u[sl].shape)
        v[sl] += jitter * rng.standard_normal(v[sl].shape)
    return u, v


def simulate_gray_scott(
    params: GrayScottParams,
    grid: GridSpec,
    u0,
    v0,
    dt_sim: float,
    n_steps: int,
    seed,
    *,
    record_stride: int = 1,
) -> FieldTrajectory:
    """Euler-Maruyama on the lattice; per-cell noise sqrt(2 D / dV) dW."""
    u = np.array(u0, dtype=float).reshape(grid.nx, grid.ny)
    v = np.array(v0, dtype=float).reshape(grid.nx, grid.ny)
    if not dt_sim > 0 or n_steps < 1 or record_stride < 1:
        raise ValueError("need dt_sim > 0, n_steps >= 1, record_stride >= 1")
    if dt_sim * max(params.Du, params.Dv) / grid.volume > 0.25:
        warnings.warn("time step exceeds the explicit stencil stability guideline", RuntimeWarning, stacklevel=2)

    amp = math.sqrt(2.0 * params.D / grid.volume) * math.sqrt(dt_sim)
    rng = make_rng(seed)
    n_rec = n_steps // record_stride
    out = np.empty((n_rec + 1, 2, grid.nx, grid.ny))
    out[0, 0], out[0, 1] = u, v
    per_step = 2 * grid.cells
    chunk = max(record_stride, (max(1, _CHUNK_CELLS // per_step) // record_stride) * record_stride)
    done = rec = 0
    while done < n_steps:
        n = min(chunk, n_steps - done)
        z = rng.standard_normal((n, 2, grid.nx, grid.ny))
        u, v = _kernels.gray_scott_steps(u, v, params.Du, params.Dv, params.F, params.k, grid.dx,
                                         dt_sim, amp, z, record_stride, out[1 + rec: 1 + rec + n // record_stride])
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise NonFinite(f"Gray-Scott fields blew up after {done + n} steps")
        rec += n // record_stride
        done += n
    return FieldTrajectory(out.reshape(n_rec + 1, -1), dt_sim * record_stride, grid)


def to_trajectory(ft: FieldTrajectory) -> Trajectory:
    return Trajectory(ft.snapshots, ft.dt, grid=ft.grid)


def from_trajectory(traj: Trajectory) -> FieldTrajectory:
    if traj.grid is None:
        raise ValueError("trajectory carries no grid")
    return FieldTrajectory(traj.states, traj.dt, traj.grid)


def write_pgm(path, field: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    """Binary greyscale PGM of one field, linearly mapped to 0..255."""
    f = np.asarray(field, dtype=float)
    lo = f.min() if lo is None else lo
    hi = f.max() if hi is None else hi
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.clip((f - lo) * scale, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())
