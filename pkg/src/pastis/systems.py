"""Benchmark systems: generator, candidate library and true model in one bundle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import BasisLibrary, gray_scott_library, lv_library, polynomial_library, true_model
from .sde_sim import DriftSpec, NoiseSpec, Trajectory, add_measurement_noise, simulate, spawn_seeds
from .spde_sim import GrayScottParams, GridSpec, default_initial_fields, simulate_gray_scott, to_trajectory

OU3_A = np.array([[1.0, 0, 0], [0, 1, 0], [-1, 0, 1]])

OU10_A = np.array([
    [1, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [0, 1, 0, 0, 0, 0, 0, 0, 1, 0],
    [0, 0, 1, -1, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 1, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 1, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 1, 0, 0, 0, 0],
    [-1, 0, 0, 0, 0, 0, 1, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 1, 0, 0],
    [0, -1, 0, 0, 0, -1, 1, 0, 1, 0],
    [0, 0, 1, 0, 0, 1, 0, 1, 0, 1],
], dtype=float)

LV7_A = np.array([
    [1, 1, 1, 0, 0, 0, -1],
    [-1, 1, 1, 0, 0, 0, 0],
    [1, -1, 1, 1, 1, 0, 0],
    [0, 0, -1, 1, 1, 0, 0],
    [0, 0, 1, -1, 1, 1, 0],
    [0, 0, 0, 0, -1, 1, 1],
    [1, 0, 0, 0, 0, -1, 1],
], dtype=float)


@dataclass
class SDESystem:
    name: str
    drift: DriftSpec
    noise: NoiseSpec
    library: BasisLibrary
    x0: np.ndarray
    dt_sim: float = 1e-3
    stride: int = 10
    burn_in_time: float = 10.0
    truth: tuple = field(init=False)

    def __post_init__(self):
        self.truth = true_model(self.drift, self.library)

    @property
    def n_star(self) -> int:
        return len(self.truth[0])

    def trajectory(self, tau: float, seed, *, dt: Optional[float] = None, sigma: float = 0.0,
                   dt_sim: Optional[float] = None) -> Trajectory:
        """Sample of duration ``tau`` at interval ``dt`` (a multiple of dt_sim).

        Seed children: 0 drives the dynamics, 1 the measurement noise.
        """
        dt_sim = dt_sim or self.dt_sim
        dt = dt or dt_sim * self.stride
        stride = max(1, int(round(dt / dt_sim)))
        if abs(stride * dt_sim - dt) > 1e-9 * dt:
            raise ValueError(f"dt={dt} is not a multiple of dt_sim={dt_sim}")
        n_obs = max(1, int(round(tau / dt)))
        s_dyn, s_meas = spawn_seeds(seed, 2)
        traj = simulate(self.drift, self.noise, self.x0, dt_sim, n_obs * stride, s_dyn,
                        burn_in=int(round(self.burn_in_time / dt_sim)), record_stride=stride)
        if sigma > 0:
            traj = add_measurement_noise(traj, sigma, s_meas)
        traj.meta["system"] = self.name
        return traj


def ou1(D: float = 1.0) -> SDESystem:
    """d = 1 Ornstein-Uhlenbeck, drift -x, library {1, x}."""
    return SDESystem("ou1", DriftSpec.ou(np.array([[1.0]])), NoiseSpec.additive(D), polynomial_library(1, 1),
                     np.zeros(1))


def ou3(D: float = 100.0) -> SDESystem:
    """d = 3 Ornstein-Uhlenbeck, n* = 4 of an affine library with n0 = 12."""
    return SDESystem("ou3", DriftSpec.ou(OU3_A), NoiseSpec.additive(D), polynomial_library(3, 1), np.zeros(3))


def ou10(D: float = 100.0) -> SDESystem:
    """d = 10 Ornstein-Uhlenbeck, n* = 19 of n0 = 110."""
    return SDESystem("ou10", DriftSpec.ou(OU10_A), NoiseSpec.additive(D), polynomial_library(10, 1), np.zeros(10))


def lorenz(D: float = 100.0) -> SDESystem:
    """Stochastic Lorenz, n* = 7 of the degree-2 library with n0 = 30."""
    return SDESystem("lorenz", DriftSpec.lorenz(), NoiseSpec.additive(D), polynomial_library(3, 2),
                     np.array([1.0, 1.0, 25.0]))


def lotka_volterra(D0: float = 0.05) -> SDESystem:
    """d = 7 competitive Lotka-Volterra with multiplicative noise, n* = 32 of n0 = 56."""
    r = np.ones(7)
    x_star = np.linalg.solve(LV7_A, r)
    return SDESystem("lv7", DriftSpec.lotka_volterra(r, LV7_A), NoiseSpec.multiplicative(D0), lv_library(7),
                     x_star, burn_in_time=0.0)


SDE_SYSTEMS = {"ou1": ou1, "ou3": ou3, "ou10": ou10, "lorenz": lorenz, "lv7": lotka_volterra}


@dataclass
class GrayScottSystem:
    name: str = "gray_scott"
    params: GrayScottParams = field(default_factory=GrayScottParams)
    grid: GridSpec = field(default_factory=lambda: GridSpec(32, 32))
    dt_sim: float = 1e-3
    stride: int = 10
    burn_in_time: float = 0.0
    library: BasisLibrary = field(default_factory=gray_scott_library)

    def __post_init__(self):
        self.truth = true_model(self.params, self.library)

    @property
    def n_star(self) -> int:
        return len(self.truth[0])

    def trajectory(self, tau: float, seed, *, dt: Optional[float] = None, sigma: float = 0.0,
                   dt_sim: Optional[float] = None) -> Trajectory:
        dt_sim = dt_sim or self.dt_sim
        dt = dt or dt_sim * self.stride
        stride = max(1, int(round(dt / dt_sim)))
        n_obs = max(1, int(round(tau / dt)))
        s_ic, s_dyn, s_meas, s_burn = spawn_seeds(seed, 4)
        u, v = default_initial_fields(self.grid, s_ic)
        if self.burn_in_time > 0:
            nb = int(round(self.burn_in_time / dt_sim))
            ft = simulate_gray_scott(self.params, self.grid, u, v, dt_sim, nb, s_burn, record_stride=nb)
            u, v = ft.fields(-1)
        ft = simulate_gray_scott(self.params, self.grid, u, v, dt_sim, n_obs * stride, s_dyn,
                                 record_stride=stride)
        traj = to_trajectory(ft)
        if sigma > 0:
            traj = add_measurement_noise(traj, sigma, s_meas)
        traj.meta["system"] = self.name
        return traj


def gray_scott(nx: int = 32, burn_in_time: float = 0.0, **params) -> GrayScottSystem:
    return GrayScottSystem(params=GrayScottParams(**params), grid=GridSpec(nx, nx), burn_in_time=burn_in_time)


def get_system(name: str, **kw):
    if name == "gray_scott":
        return gray_scott(**kw)
    try:
        return SDE_SYSTEMS[name](**kw)
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {', '.join([*SDE_SYSTEMS, 'gray_scott'])}") from None
