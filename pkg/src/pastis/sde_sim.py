"""Euler-Maruyama simulation of polynomial-drift SDEs and data degradation.

Every supported drift (Lorenz, Ornstein-Uhlenbeck, Lotka-Volterra, or a
linear combination of library functions) is polynomial, so all of them are
lowered to one monomial table and run through the same kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, EmptyResult, NonFinite

if TYPE_CHECKING:
    from .basis import BasisLibrary

# number of Euler steps drawn per RNG call; bounds memory for long runs
_CHUNK = 1 << 16
LV_FLOOR = 1e-12


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; normals come from numpy's ziggurat sampler."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def spawn_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """Independent child streams derived from a master seed or SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return ss.spawn(n)


@dataclass(frozen=True)
class DriftSpec:
    """Drift field f(x). Build with the classmethods rather than directly."""

    kind: str
    d: int
    params: dict = field(default_factory=dict, compare=False)

    @classmethod
    def lorenz(cls, sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> "DriftSpec":
        return cls("lorenz", 3, {"sigma": float(sigma), "rho": float(rho), "beta": float(beta)})

    @classmethod
    def ou(cls, A) -> "DriftSpec":
        A = _square(A, "OU damping matrix")
        return cls("ou", A.shape[0], {"A": A})

    @classmethod
    def lotka_volterra(cls, r, A) -> "DriftSpec":
        A = _square(A, "interaction matrix")
        r = np.broadcast_to(np.asarray(r, dtype=float), (A.shape[0],)).copy()
        _finite(r, "growth vector")
        return cls("lv", A.shape[0], {"r": r, "A": A})

    @classmethod
    def linear(cls, library: "BasisLibrary", alpha) -> "DriftSpec":
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (library.n0,):
            raise DimensionMismatch(f"alpha has shape {alpha.shape}, library has {library.n0} functions")
        if library.kind != "sde":
            raise DimensionMismatch("linear drifts need an SDE library")
        _finite(alpha, "alpha")
        return cls("linear", library.d, {"library": library, "alpha": alpha})

    def terms(self) -> list[tuple[int, tuple[int, ...], float]]:
        """The drift as (component, exponents, coefficient) monomial terms."""
        d = self.d
        unit = lambda *idx: tuple(sum(1 for i in idx if i == k) for k in range(d))  # noqa: E731
        p = self.params
        if self.kind == "lorenz":
            s, rho, beta = p["sigma"], p["rho"], p["beta"]
            return [
                (0, unit(0), -s), (0, unit(2), s),
                (1, unit(0, 2), 1.0), (1, unit(1), -beta),
                (2, unit(0), rho), (2, unit(0, 1), -1.0), (2, unit(2), -1.0),
            ]
        if self.kind == "ou":
            A = p["A"]
            return [(b, unit(j), -A[b, j]) for b in range(d) for j in range(d) if A[b, j] != 0]
        if self.kind == "lv":
            r, A = p["r"], p["A"]
            out = [(i, unit(i), r[i]) for i in range(d) if r[i] != 0]
            out += [(i, unit(i, j), -A[i, j]) for i in range(d) for j in range(d) if A[i, j] != 0]
            return out
        lib, alpha = p["library"], p["alpha"]
        return [(f.component, f.exponents, a) for f, a in zip(lib.functions, alpha) if a != 0]

    def polynomial(self) -> tuple[np.ndarray, np.ndarray]:
        """Exponent table E (m x d) and coefficient matrix C (d x m)."""
        monos: dict[tuple[int, ...], int] = {}
        entries = []
        for comp, exps, coef in self.terms():
            k = monos.setdefault(tuple(exps), len(monos))
            entries.append((comp, k, coef))
        m = max(len(monos), 1)
        E = np.zeros((m, self.d), dtype=np.int64)
        for exps, k in monos.items():
            E[k] = exps
        C = np.zeros((self.d, m))
        for comp, k, coef in entries:
            C[comp, k] += coef
        return E, C

    def __call__(self, x) -> np.ndarray:
        """Evaluate f at one state (d,) or many states (T, d)."""
        E, C = self.polynomial()
        x = np.asarray(x, dtype=float)
        phi = np.prod(x[..., None, :] ** E, axis=-1)
        return phi @ C.T

    def describe(self) -> dict[str, Any]:
        p = self.params
        if self.kind == "lorenz":
            return {"kind": "lorenz", **p}
        if self.kind == "ou":
            return {"kind": "ou", "A": p["A"].tolist()}
        if self.kind == "lv":
            return {"kind": "lv", "r": p["r"].tolist(), "A": p["A"].tolist()}
        return {"kind": "linear", "library": p["library"].to_json(), "alpha": p["alpha"].tolist()}

    @classmethod
    def from_description(cls, desc: dict) -> "DriftSpec":
        kind = desc["kind"]
        if kind == "lorenz":
            return cls.lorenz(desc.get("sigma", 10.0), desc.get("rho", 28.0), desc.get("beta", 8.0 / 3.0))
        if kind == "ou":
            return cls.ou(desc["A"])
        if kind == "lv":
            return cls.lotka_volterra(desc["r"], desc["A"])
        if kind == "linear":
            from .basis import BasisLibrary

            return cls.linear(BasisLibrary.from_json(desc["library"]), desc["alpha"])
        raise ValueError(f"unknown drift kind {kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """Itô noise term. ``value`` is D (scalar or matrix) or D0 for multiplicative."""

    kind: str
    value: Any

    @classmethod
    def additive(cls, D) -> "NoiseSpec":
        D = np.asarray(D, dtype=float)
        if D.ndim == 0:
            if not D >= 0:
                raise ValueError("diffusion constant must be >= 0")
            return cls("scalar", float(D))
        D = _square(D, "diffusion matrix")
        if not np.allclose(D, D.T):
            raise ValueError("diffusion matrix must be symmetric")
        if np.linalg.eigvalsh(D).min() < -1e-12 * max(1.0, np.abs(D).max()):
            raise ValueError("diffusion matrix must be positive semi-definite")
        return cls("matrix", D)

    @classmethod
    def multiplicative(cls, D0: float) -> "NoiseSpec":
        if not D0 >= 0:
            raise ValueError("D0 must be >= 0")
        return cls("multiplicative", float(D0))

    def matrix(self, d: int, x=None) -> np.ndarray:
        """Diffusion tensor D(x) (x only matters for multiplicative noise)."""
        if self.kind == "scalar":
            return self.value * np.eye(d)
        if self.kind == "matrix":
            return np.asarray(self.value)
        return self.value * np.diag(np.asarray(x, dtype=float) ** 2)

    def describe(self) -> dict[str, Any]:
        v = self.value.tolist() if isinstance(self.value, np.ndarray) else self.value
        return {"kind": self.kind, "value": v}

    @classmethod
    def from_description(cls, desc: dict) -> "NoiseSpec":
        if desc["kind"] == "multiplicative":
            return cls.multiplicative(desc["value"])
        return cls.additive(desc["value"])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled states (N x d) with sampling interval dt.

    ``grid`` is set when the columns are a flattened two-field lattice.
    """

    states: np.ndarray
    dt: float
    grid: Any = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 2:
            raise EmptyResult(f"a trajectory needs at least 2 rows, got shape {s.shape}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.isfinite(s).all():
            raise NonFinite("trajectory contains non-finite entries")
        object.__setattr__(self, "states", s)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def tau(self) -> float:
        """Duration covered by the increments, (N - 1) * dt."""
        return (self.n - 1) * self.dt

    def replace(self, states) -> "Trajectory":
        return Trajectory(states, self.dt, self.grid, dict(self.meta))

    def segment(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.states[start:stop], self.dt, self.grid, dict(self.meta))


def _square(A, what: str) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{what} must be square, got {A.shape}")
    _finite(A, what)
    return A


def _finite(a, what: str):
    if not np.isfinite(a).all():
        raise ValueError(f"{what} has non-finite entries")


def simulate(
    drift: DriftSpec,
    noise: NoiseSpec,
    x0,
    dt_sim: float,
    n_steps: int,
    seed,
    *,
    burn_in: int = 0,
    record_stride: int = 1,
) -> Trajectory:
    """Euler-Maruyama integration, x_{k+1} = x_k + f dt + g sqrt(dt) xi_k.

    ``burn_in`` steps are integrated first and discarded. With
    ``record_stride`` > 1 only every stride-th state is kept, which equals
    ``subsample(simulate(...), stride)`` without materialising the fine path.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != drift.d:
        raise DimensionMismatch(f"x0 has length {x0.size}, drift has dimension {drift.d}")
    if not np.isfinite(x0).all():
        raise NonFinite("x0 is not finite")
    if not dt_sim > 0 or n_steps < 1 or record_stride < 1 or burn_in < 0:
        raise ValueError("need dt_sim > 0, n_steps >= 1, record_stride >= 1, burn_in >= 0")

    E, C = drift.polynomial()
    d = drift.d
    if noise.kind == "multiplicative":
        kind, L, mult = _kernels.MULTIPLICATIVE, np.zeros((d, d)), math.sqrt(2.0 * noise.value)
    else:
        kind, L, mult = _kernels.ADDITIVE, _noise_factor(noise.matrix(d)), 0.0
    floor = LV_FLOOR if drift.kind == "lv" else 0.0
    rng = make_rng(seed)

    x = x0.copy()
    clamps = 0
    if burn_in:
        x, clamps = _run(x, E, C, L, mult, kind, dt_sim, burn_in, 1, None, floor, rng, clamps)

    n_rec = n_steps // record_stride
    out = np.empty((n_rec + 1, d))
    out[0] = x
    x, clamps = _run(x, E, C, L, mult, kind, dt_sim, n_steps, record_stride, out[1:], floor, rng, clamps)
    meta = {"dt_sim": dt_sim, "record_stride": record_stride, "clamped": clamps}
    return Trajectory(out, dt_sim * record_stride, meta=meta)


def _noise_factor(D: np.ndarray) -> np.ndarray:
    """L with L L^T = 2 D (eigen-factorisation tolerates singular D)."""
    w, V = np.linalg.eigh(2.0 * D)
    return V * np.sqrt(np.clip(w, 0.0, None))


def _run(x, E, C, L, mult, kind, dt, n_steps, stride, out, floor, rng, clamps):
    d = x.size
    chunk = max(stride, (_CHUNK // stride) * stride)
    done = 0
    rec = 0
    scratch = np.empty((chunk // stride + 1, d))
    while done < n_steps:
        n = min(chunk, n_steps - done)
        z = rng.standard_normal((n, d))
        target = scratch if out is None else out[rec: rec + n // stride]
        x, c = _kernels.em_poly(x, E, C, L, mult, kind, dt, z, stride, target, floor)
        clamps += int(c)
        if not np.isfinite(x).all():
            raise NonFinite(f"state blew up after {done + n} Euler steps")
        rec += n // stride
        done += n
    return x, clamps


def subsample(traj: Trajectory, stride: int) -> Trajectory:
    """Keep rows 0, stride, 2*stride, ...; the sampling interval scales by stride."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    kept = traj.states[::stride]
    if kept.shape[0] < 2:
        raise EmptyResult(f"stride {stride} leaves {kept.shape[0]} row(s) of {traj.n}")
    return Trajectory(kept, traj.dt * stride, traj.grid, dict(traj.meta))


def add_measurement_noise(traj: Trajectory, sigma: float, seed) -> Trajectory:
    """y_t = x_t + eta_t with eta iid N(0, sigma^2) per row and component."""
    if not sigma >= 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return traj.replace(traj.states.copy())
    eta = make_rng(seed).standard_normal(traj.states.shape)
    return traj.replace(traj.states + sigma * eta)


def increments(traj: Trajectory) -> np.ndarray:
    """Row k is states[k + 1] - states[k]."""
    return np.diff(traj.states, axis=0)
