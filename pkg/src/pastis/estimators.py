"""Drift and diffusion estimators, likelihoods and drift-error metrics.

All drift estimators here are linear in the basis coefficients, so each
reduces to a (possibly non-symmetric) Gram matrix G and a projection vector
Y computed once for the whole library. A model is then a sub-block solve.
Likelihoods are quadratic in the coefficients and are stored the same way:

    l(alpha) = -tau * (c - 2 alpha.Yl + alpha.H.alpha) - (tau / 2) alpha.kappa

``LibraryStats`` caches these blocks per trajectory, which is what makes
model search cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import BasisLibrary, ModelBasis
from .errors import DomainError, InsufficientData, SingularGram, SingularWeight
from .sde_sim import Trajectory

RCOND_MIN = 1e-12
ESTIMATORS = ("aml", "trapeze", "shift", "stratonovich")
_FIELD_CHUNK_VALUES = 1 << 23


# --- diffusion ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiffusionEstimate:
    """Constant diffusion estimate D.

    ``scalar`` marks the lattice case, where D stands for D * identity on the
    whole flattened field and ``matrix`` is 1 x 1.
    """

    matrix: np.ndarray
    method: str
    scalar: bool = False

    @property
    def indefinite(self) -> bool:
        return bool(np.linalg.eigvalsh(self.matrix).min() <= 0)

    def weight(self) -> np.ndarray:
        """(4 D)^-1, or a 1 x 1 array for the scalar case."""
        D = np.asarray(self.matrix, dtype=float)
        if not np.isfinite(D).all():
            raise SingularWeight("diffusion estimate is not finite")
        s = np.linalg.svd(D, compute_uv=False)
        if s.size == 0 or s.max() <= 0 or s.min() / s.max() < RCOND_MIN:
            raise SingularWeight(f"diffusion estimate ({self.method}) is not invertible")
        return np.linalg.inv(4.0 * D)

    def to_json(self) -> dict:
        return {"method": self.method, "scalar": self.scalar, "matrix": np.asarray(self.matrix).tolist()}


def _need(traj: Trajectory, rows: int, what: str):
    if traj.n < rows:
        raise InsufficientData(f"{what} needs at least {rows} samples, got {traj.n}")


def _outer_mean(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A.T @ B / A.shape[0]


def diffusion_simple(traj: Trajectory) -> DiffusionEstimate:
    """<dx dx^T> / (2 dt) over all increments."""
    dx = np.diff(traj.states, axis=0)
    if traj.grid is not None:
        return DiffusionEstimate(np.array([[np.mean(dx * dx) / (2 * traj.dt)]]), "simple", True)
    return DiffusionEstimate(_outer_mean(dx, dx) / (2 * traj.dt), "simple")


def diffusion_3pt(traj: Trajectory) -> DiffusionEstimate:
    """<(dx_t - dx_{t-1})(dx_t - dx_{t-1})^T> / (4 dt); drift bias cancels to leading order."""
    _need(traj, 3, "three-point diffusion")
    dx = np.diff(traj.states, axis=0)
    q = dx[1:] - dx[:-1]
    if traj.grid is not None:
        return DiffusionEstimate(np.array([[np.mean(q * q) / (4 * traj.dt)]]), "three_point", True)
    return DiffusionEstimate(_outer_mean(q, q) / (4 * traj.dt), "three_point")


def diffusion_vestergaard(traj: Trajectory) -> DiffusionEstimate:
    """<dy dy^T>/(2 dt) + sym<dy_{t+dt} dy_t^T>/dt; cancels white measurement noise."""
    _need(traj, 3, "Vestergaard diffusion")
    dy = np.diff(traj.states, axis=0)
    a, b = dy[:-1], dy[1:]
    if traj.grid is not None:
        val = np.mean(a * a) / (2 * traj.dt) + np.mean(b * a) / traj.dt
        return DiffusionEstimate(np.array([[val]]), "vestergaard", True)
    cross = _outer_mean(b, a)
    D = _outer_mean(a, a) / (2 * traj.dt) + (cross + cross.T) / (2 * traj.dt)
    return DiffusionEstimate(D, "vestergaard")


def _instant_3pt(dx: np.ndarray, dt: float, rows: slice) -> np.ndarray:
    # D_hat(t) for t in rows, needs dx[t-1]
    t = np.arange(rows.start, rows.stop)
    q = dx[t] - dx[t - 1]
    return q[:, :, None] * q[:, None, :] / (4 * dt)


def _instant_vestergaard(dy: np.ndarray, dt: float, rows: slice) -> np.ndarray:
    t = np.arange(rows.start, rows.stop)
    a, b = dy[t], dy[t + 1]
    cross = b[:, :, None] * a[:, None, :]
    return a[:, :, None] * a[:, None, :] / (2 * dt) + (cross + cross.transpose(0, 2, 1)) / (2 * dt)


# --- feature moments ---------------------------------------------------------

class _SDEFeatures:
    """Moment sums for single-component monomial bases."""

    def __init__(self, traj: Trajectory, library: BasisLibrary):
        if library.d != traj.d:
            raise DomainError(f"library dimension {library.d} does not match trajectory dimension {traj.d}")
        self.lib = library
        self.phi = library.monomial_values(traj.states)
        self.V = np.diff(traj.states, axis=0) / traj.dt
        self._dphi = None
        self._states = traj.states

    @property
    def dphi(self):
        if self._dphi is None:
            self._dphi = self.lib.monomial_gradients(self._states)
        return self._dphi

    def pair(self, a: int, b: int, rows: slice) -> np.ndarray:
        L = self.phi[rows.start + a: rows.stop + a]
        R = self.phi[rows.start + b: rows.stop + b]
        return L.T @ R / L.shape[0]

    def vec(self, a: int, rows: slice) -> np.ndarray:
        L = self.phi[rows.start + a: rows.stop + a]
        return L.T @ self.V[rows] / L.shape[0]

    def vv(self, rows: slice) -> np.ndarray:
        V = self.V[rows]
        return V.T @ V / V.shape[0]

    def gram(self, raw: np.ndarray, W: np.ndarray) -> np.ndarray:
        m, c = self.lib.mono_of, self.lib.comp_of
        return W[np.ix_(c, c)] * raw[np.ix_(m, m)]

    def yvec(self, raw: np.ndarray, W: np.ndarray) -> np.ndarray:
        return (raw @ W)[self.lib.mono_of, self.lib.comp_of]

    def scalar(self, raw: np.ndarray, W: np.ndarray) -> float:
        return float(np.sum(W * raw))

    def correction(self, P: np.ndarray, rows: slice) -> np.ndarray:
        """kappa_i = < sum_c P_t[beta_i, c] d_c phi_i(x_t) > for per-row matrices P."""
        K = np.einsum("tbc,tmc->mb", P, self.dphi[rows], optimize=True) / P.shape[0]
        return K[self.lib.mono_of, self.lib.comp_of]


class _FieldFeatures:
    """Moment sums for lattice bases, accumulated over time chunks."""

    def __init__(self, traj: Trajectory, library: BasisLibrary):
        if traj.grid is None:
            raise DomainError("field libraries need a trajectory produced on a grid")
        self.lib = library
        self.grid = traj.grid
        self.states = traj.states
        self.dt = traj.dt
        n = library.n0 * traj.grid.cells
        self.chunk = max(1, _FIELD_CHUNK_VALUES // max(n, 1))
        self.groups = [np.flatnonzero(library.target_of == t) for t in (0, 1)]

    def _vals(self, lo, hi):
        return self.lib.field_values(self.states[lo:hi], self.grid)

    def pair(self, a: int, b: int, rows: slice) -> np.ndarray:
        n0 = self.lib.n0
        out = np.zeros((n0, n0))
        for lo in range(rows.start, rows.stop, self.chunk):
            hi = min(lo + self.chunk, rows.stop)
            A = self._vals(lo + a, hi + a)
            B = A if a == b else self._vals(lo + b, hi + b)
            for g in self.groups:
                if g.size:
                    Ag = A[:, g].transpose(1, 0, 2).reshape(g.size, -1)
                    Bg = B[:, g].transpose(1, 0, 2).reshape(g.size, -1)
                    out[np.ix_(g, g)] += Ag @ Bg.T
        return out / (rows.stop - rows.start)

    def _increments(self, lo, hi):
        dv = (self.states[lo + 1:hi + 1] - self.states[lo:hi]) / self.dt
        return dv.reshape(hi - lo, 2, -1)

    def vec(self, a: int, rows: slice) -> np.ndarray:
        out = np.zeros(self.lib.n0)
        for lo in range(rows.start, rows.stop, self.chunk):
            hi = min(lo + self.chunk, rows.stop)
            A = self._vals(lo + a, hi + a)
            V = self._increments(lo, hi)
            out += np.einsum("tkc,tkc->k", A, V[:, self.lib.target_of])
        return out / (rows.stop - rows.start)

    def vv(self, rows: slice) -> np.ndarray:
        V = np.diff(self.states[rows.start:rows.stop + 1], axis=0) / self.dt
        return np.array([[np.sum(V * V) / V.shape[0]]])

    def gram(self, raw, W):
        return float(W[0, 0]) * raw

    def yvec(self, raw, W):
        return float(W[0, 0]) * raw

    def scalar(self, raw, W):
        return float(W[0, 0] * raw[0, 0])

    def correction(self, P, rows):  # pragma: no cover - guarded by callers
        raise DomainError("gradient corrections are not available for field libraries")


# --- sufficient statistics -----------------------------------------------------

@dataclass
class QuadStats:
    """Estimator and likelihood blocks for a whole library."""

    G: np.ndarray                # estimator Gram (solve uses this raw form)
    Y: np.ndarray                # estimator projection
    H: np.ndarray                # likelihood quadratic block
    Yl: np.ndarray               # likelihood linear block
    c: float                     # likelihood constant <v W v>
    tau: float                   # duration used by the likelihood rows
    diffusion: DiffusionEstimate
    corr: Optional[np.ndarray] = None   # subtracted from Y before solving
    kappa: Optional[np.ndarray] = None  # linear likelihood correction
    G_std: Optional[np.ndarray] = None  # symmetric <b_i W b_j>, reported in fits

    def solve(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            return np.zeros(0)
        G = self.G[np.ix_(idx, idx)]
        rhs = self.Y[idx] - (self.corr[idx] if self.corr is not None else 0.0)
        _check_conditioning(G)
        return np.linalg.solve(G, rhs)

    def loglik(self, idx, alpha) -> float:
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            return -self.tau * self.c
        q = self.c - 2.0 * alpha @ self.Yl[idx] + alpha @ self.H[np.ix_(idx, idx)] @ alpha
        val = -self.tau * q
        if self.kappa is not None:
            val -= 0.5 * self.tau * float(alpha @ self.kappa[idx])
        return float(val)


def _check_conditioning(G: np.ndarray):
    if not np.isfinite(G).all():
        raise SingularGram("Gram matrix has non-finite entries")
    d = np.sqrt(np.abs(np.diag(G)))
    if np.any(d == 0):
        raise SingularGram("basis function vanishes along the trajectory")
    s = np.linalg.svd(G / np.outer(d, d), compute_uv=False)
    if s[-1] / s[0] < RCOND_MIN:
        raise SingularGram(f"Gram reciprocal condition {s[-1] / s[0]:.2e} below {RCOND_MIN:g}")


class LibraryStats:
    """Lazily built per-estimator statistics for one trajectory and library."""

    def __init__(self, traj: Trajectory, library: BasisLibrary):
        self.traj = traj
        self.library = library
        self.field = library.kind == "field"
        self.feat = _FieldFeatures(traj, library) if self.field else _SDEFeatures(traj, library)
        self._cache: dict = {}

    def _rows(self, lo_pad: int, hi_pad: int) -> slice:
        # increments t with t - lo_pad >= 0 and t + hi_pad <= N - 2
        n_inc = self.traj.n - 1
        if n_inc - lo_pad - hi_pad < 1:
            raise InsufficientData(f"trajectory of {self.traj.n} samples too short for this estimator")
        return slice(lo_pad, n_inc - hi_pad)

    def get(self, kind: str, diffusion: Optional[DiffusionEstimate] = None) -> QuadStats:
        key = (kind, id(diffusion) if diffusion is not None else None)
        if key not in self._cache:
            self._cache[key] = getattr(self, f"_build_{kind}")(diffusion)
            if diffusion is not None:
                self._cache[key]._keepalive = diffusion
        return self._cache[key]

    # standard AML blocks on rows 0..N-2
    def _build_aml(self, diffusion):
        D = diffusion or diffusion_simple(self.traj)
        W = D.weight()
        f, rows = self.feat, self._rows(0, 0)
        G = f.gram(f.pair(0, 0, rows), W)
        Y = f.yvec(f.vec(0, rows), W)
        c = f.scalar(f.vv(rows), W)
        tau = (rows.stop - rows.start) * self.traj.dt
        return QuadStats(G, Y, G, Y, c, tau, D, G_std=G)

    def _build_trapeze(self, diffusion):
        base = self.get("aml", diffusion)
        D = base.diffusion
        W = D.weight()
        f, rows = self.feat, self._rows(0, 0)
        Gt = 0.5 * (base.G + f.gram(f.pair(0, 1, rows), W))
        return QuadStats(Gt, base.Y, base.H, base.Yl, base.c, base.tau, D, G_std=base.G)

    def _build_dt(self, diffusion):
        if self.field:
            raise DomainError("the large-interval likelihood is implemented for SDE libraries only")
        D = diffusion or diffusion_3pt(self.traj)
        W = D.weight()
        Dinv = 4.0 * W
        f = self.feat
        est_rows = self._rows(0, 0)
        p00 = f.pair(0, 0, est_rows)
        G = 0.5 * f.gram(p00 + f.pair(0, 1, est_rows), W)
        Y = f.yvec(f.vec(0, est_rows), W)
        rows = self._rows(1, 0)
        q00, q01, q11 = f.pair(0, 0, rows), f.pair(0, 1, rows), f.pair(1, 1, rows)
        H = f.gram(0.25 * (q00 + q01 + q01.T + q11), W)
        Yl = 0.5 * f.yvec(f.vec(0, rows) + f.vec(1, rows), W)
        c = f.scalar(f.vv(rows), W)
        dx = np.diff(self.traj.states, axis=0)
        P = np.einsum("ab,tbc->tac", Dinv, _instant_3pt(dx, self.traj.dt, rows))
        kappa = f.correction(P, rows)
        tau = (rows.stop - rows.start) * self.traj.dt
        return QuadStats(G, Y, H, Yl, c, tau, D, kappa=kappa, G_std=f.gram(p00, W))

    def _build_shift(self, diffusion):
        D = diffusion or diffusion_vestergaard(self.traj)
        W = D.weight()
        f, rows = self.feat, self._rows(1, 0)
        G = f.gram(f.pair(-1, 0, rows), W)
        Y = f.yvec(f.vec(-1, rows), W)
        H = f.gram(f.pair(-1, -1, rows), W)
        c = f.scalar(f.vv(rows), W)
        tau = (rows.stop - rows.start) * self.traj.dt
        return QuadStats(G, Y, H, Y, c, tau, D, G_std=f.gram(f.pair(0, 0, rows), W))

    def _build_stratonovich(self, diffusion):
        if self.field:
            raise DomainError("the Stratonovich estimator is implemented for SDE libraries only")
        D = diffusion or diffusion_vestergaard(self.traj)
        W = D.weight()
        f, rows = self.feat, self._rows(0, 1)
        p00 = f.pair(0, 0, rows)
        G = 0.5 * f.gram(p00 + f.pair(1, 0, rows), W)
        Y = 0.5 * f.yvec(f.vec(0, rows) + f.vec(1, rows), W)
        dy = np.diff(self.traj.states, axis=0)
        P = np.einsum("ab,tbc->tac", W, _instant_vestergaard(dy, self.traj.dt, rows))
        corr = f.correction(P, rows)
        Gs = f.gram(p00, W)
        Ys = f.yvec(f.vec(0, rows), W)
        c = f.scalar(f.vv(rows), W)
        tau = (rows.stop - rows.start) * self.traj.dt
        return QuadStats(G, Y, Gs, Ys, c, tau, D, corr=corr, G_std=Gs)


# --- fits --------------------------------------------------------------------

@dataclass
class FitResult:
    model: ModelBasis
    coefficients: np.ndarray
    gram: np.ndarray
    loglik: float
    diffusion: DiffusionEstimate
    estimator: str
    tau: float = 0.0
    extras: dict = field(default_factory=dict)

    def full_coefficients(self, n0: int) -> np.ndarray:
        out = np.zeros(n0)
        out[list(self.model.indices)] = self.coefficients
        return out

    def to_json(self) -> dict:
        return {
            "model": list(self.model.indices),
            "coefficients": self.coefficients.tolist(),
            "loglik": self.loglik,
            "diffusion": self.diffusion.to_json(),
            "estimator": self.estimator,
            "tau": self.tau,
        }


def _fit(stats: QuadStats, model: ModelBasis, estimator: str) -> FitResult:
    idx = list(model.indices)
    alpha = stats.solve(idx)
    ll = stats.loglik(idx, alpha)
    gram = stats.G_std[np.ix_(idx, idx)] if stats.G_std is not None else stats.G[np.ix_(idx, idx)]
    return FitResult(model, alpha, gram, ll, stats.diffusion, estimator, stats.tau)


def _stats_for(traj, model: ModelBasis, library: BasisLibrary):
    model.check(library)
    if not model.indices:
        # zero drift: any single function gives the right diffusion and c term
        return LibraryStats(traj, library.subset((0,))), ModelBasis()
    sub = library.subset(model.indices)
    return LibraryStats(traj, sub), ModelBasis(tuple(range(len(model))))


def fit_aml(traj: Trajectory, model: ModelBasis, library: BasisLibrary,
            diffusion: Optional[DiffusionEstimate] = None) -> FitResult:
    """Weighted least squares of dx/dt on the model functions with weight (4 D)^-1."""
    st, local = _stats_for(traj, model, library)
    res = _fit(st.get("aml", diffusion), local, "aml")
    res.model = model
    return res


def fit_trapeze(traj, model, library, diffusion=None) -> FitResult:
    """Endpoint-averaged Gram matrix; bias O(dt^2) instead of O(dt)."""
    st, local = _stats_for(traj, model, library)
    res = _fit(st.get("trapeze", diffusion), local, "trapeze")
    res.model = model
    return res


def fit_shift(traj, model, library, diffusion=None) -> FitResult:
    """Basis evaluated one sample in the past to decorrelate measurement noise.

    ``loglik`` holds the shifted likelihood.
    """
    _need(traj, 3, "the shift estimator")
    st, local = _stats_for(traj, model, library)
    res = _fit(st.get("shift", diffusion), local, "shift")
    res.model = model
    return res


def fit_stratonovich(traj, model, library, diffusion=None) -> FitResult:
    """Midpoint regression minus the Itô correction <Tr W D_sigma grad b>."""
    _need(traj, 3, "the Stratonovich estimator")
    st, local = _stats_for(traj, model, library)
    res = _fit(st.get("stratonovich", diffusion), local, "stratonovich")
    res.model = model
    return res


FITTERS = {"aml": fit_aml, "trapeze": fit_trapeze, "shift": fit_shift, "stratonovich": fit_stratonovich}


def gram(traj: Trajectory, model: ModelBasis, library: BasisLibrary, weight) -> np.ndarray:
    """G_ij = <b_i(x_t)^T weight b_j(x_t)> over rows 0..N-2."""
    weight = np.atleast_2d(np.asarray(weight, dtype=float))
    s = np.linalg.svd(weight, compute_uv=False)
    if s.min() <= 0 or s.min() / s.max() < RCOND_MIN:
        raise SingularWeight("weight matrix is not invertible")
    if not model.indices:
        raise ValueError("model must be non-empty")
    st = LibraryStats(traj, library.subset(model.indices))
    f = st.feat
    return f.gram(f.pair(0, 0, st._rows(0, 0)), weight)


# --- likelihoods ---------------------------------------------------------------

def log_likelihood(traj: Trajectory, drift_values, diffusion: DiffusionEstimate) -> float:
    """-(tau/4) <(dx/dt - f)^T D^-1 (dx/dt - f)> with tau = (N - 1) dt."""
    W = diffusion.weight()
    V = np.diff(traj.states, axis=0) / traj.dt
    r = V - np.broadcast_to(np.asarray(drift_values, dtype=float), V.shape)
    if diffusion.scalar:
        q = float(W[0, 0]) * np.sum(r * r, axis=1)
    else:
        q = np.einsum("ti,ij,tj->t", r, W, r)
    return float(-traj.tau * q.mean())


def _ll_kind(traj, model, alpha, library, kind):
    model.check(library)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (len(model),):
        raise ValueError("coefficient vector does not match the model size")
    if not model.indices:
        st = LibraryStats(traj, library).get(kind)
        return -st.tau * st.c
    sub = LibraryStats(traj, library.subset(model.indices)).get(kind)
    return sub.loglik(np.arange(len(model)), alpha)


def log_likelihood_dt(traj, model, alpha, library) -> float:
    """Trapeze-residual likelihood with three-point diffusion and gradient correction."""
    _need(traj, 3, "the large-interval likelihood")
    return _ll_kind(traj, model, alpha, library, "dt")


def log_likelihood_shift(traj, model, alpha, library) -> float:
    """Likelihood with the drift evaluated one sample in the past."""
    _need(traj, 3, "the shifted likelihood")
    return _ll_kind(traj, model, alpha, library, "shift")


# --- errors ----------------------------------------------------------------

def drift_error(fit: FitResult, truth: tuple[ModelBasis, np.ndarray], traj: Trajectory,
                diffusion: DiffusionEstimate, library: BasisLibrary) -> tuple[float, float]:
    """(E, E / E(0)) with E = <(f_hat - f)^T (4 D)^-1 (f_hat - f)> along ``traj``."""
    t_model, t_alpha = truth
    union = sorted(set(fit.model.indices) | set(t_model.indices))
    pos = {j: k for k, j in enumerate(union)}
    delta = np.zeros(len(union))
    star = np.zeros(len(union))
    for j, a in zip(fit.model.indices, fit.coefficients):
        delta[pos[j]] += a
    for j, a in zip(t_model.indices, t_alpha):
        delta[pos[j]] -= a
        star[pos[j]] += a
    G = gram(traj, ModelBasis(tuple(union)), library, diffusion.weight())
    err = float(delta @ G @ delta)
    norm = float(star @ G @ star)
    return err, err / norm if norm > 0 else float("nan")


def error_estimate_multiplicative(traj: Trajectory, model: ModelBasis, library: BasisLibrary) -> float:
    """Tr(G^-1 G_multi) / (2 tau), G_multi built from instantaneous dx dx^T / (2 dt)."""
    if library.kind != "sde":
        raise DomainError("implemented for SDE libraries")
    model.check(library)
    sub = library.subset(model.indices)
    D = diffusion_simple(traj)
    W = D.weight()
    f = _SDEFeatures(traj, sub)
    rows = slice(0, traj.n - 1)
    G = f.gram(f.pair(0, 0, rows), W)
    U = (np.diff(traj.states, axis=0) @ W)  # W dx, W symmetric
    psi = f.phi[:-1][:, sub.mono_of] * U[:, sub.comp_of]
    G_multi = (2.0 / traj.dt) * psi.T @ psi / psi.shape[0]
    _check_conditioning(G)
    return float(np.trace(np.linalg.solve(G, G_multi)) / (2.0 * traj.tau))
