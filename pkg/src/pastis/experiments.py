"""Seeded Monte-Carlo experiments shared by the benchmark CLI and the acceptance suite."""

from __future__ import annotations

import copy
import csv
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional

import numpy as np
from scipy import integrate, stats

from .basis import ModelBasis
from .estimators import (DiffusionEstimate, FitResult, LibraryStats, diffusion_simple, drift_error)
from .sde_sim import spawn_seeds, subsample
from .selection import (EULER_GAMMA, CriterionSpec, ModelScorer, accuracy, greedy_search, gumbel_cdf,
                        gumbel_location, max_gain_cdf)
from .systems import get_system

# --- metrics -----------------------------------------------------------------

def metric_diffusion(system, traj) -> DiffusionEstimate:
    """Weight used to report drift errors: the true D for additive noise, else the simple estimate."""
    if hasattr(system, "params"):
        return DiffusionEstimate(np.array([[system.params.D]]), "true", True)
    if system.noise.kind == "multiplicative":
        return diffusion_simple(traj)
    return DiffusionEstimate(system.noise.matrix(traj.d), "true")


def prediction_error(system, traj, model: ModelBasis, coefficients, diffusion=None) -> tuple[float, float]:
    """(E, E / E(0)) of a model against the system's true drift."""
    diffusion = diffusion or metric_diffusion(system, traj)
    fit = FitResult(model, np.asarray(coefficients, dtype=float), np.zeros((0, 0)), math.nan, diffusion, "")
    return drift_error(fit, system.truth, traj, diffusion, system.library)


_FIT_KIND = {"aml": "aml", "trapeze": "trapeze", "shift": "shift", "stratonovich": "stratonovich"}


def fit_error(system, traj, model: ModelBasis, estimator: str, stats: Optional[LibraryStats] = None):
    """Fit ``model`` with ``estimator`` on ``traj`` and report (E, E/E0, coefficients)."""
    if model.indices:
        st = (stats or LibraryStats(traj, system.library)).get(_FIT_KIND[estimator])
        coef = st.solve(list(model.indices))
    else:
        coef = np.zeros(0)
    e, rel = prediction_error(system, traj, model, coef)
    return e, rel, coef


def _criterion_estimator(c: CriterionSpec) -> str:
    return {"dt": "trapeze", "shift": "shift"}.get(c.stats_kind, "aml")


# --- result rows -------------------------------------------------------------

@dataclass
class ResultRow:
    system: str
    criterion: str
    tau: float
    dt: float
    sigma: float
    p: Optional[float]
    seed: int
    exact_match: Optional[int]
    tp: Optional[float]
    fp: Optional[float]
    fn: Optional[float]
    prediction_error: Optional[float]
    loglik: Optional[float]
    wall_ms: Optional[float]
    drift_error: Optional[float] = None


ROW_FIELDS = [f.name for f in fields(ResultRow)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    return str(v)


def _parse(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v


def write_rows(fh, rows: Iterable[ResultRow], *, header: bool = False):
    """Append rows; ``header`` first writes the column line (for standalone files)."""
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, k)) for k in ROW_FIELDS])
    fh.flush()


def read_rows(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [ResultRow(**{k: _parse(row[k]) for k in ROW_FIELDS}) for row in rd]


# --- per-trajectory evaluations ----------------------------------------------------

def selection_rows(system, traj, criteria: list[CriterionSpec], seed: int, *, tau, dt, sigma,
                   timing: bool = False, threads: int = 1) -> list[ResultRow]:
    """Run greedy search for every criterion on one trajectory."""
    stats = LibraryStats(traj, system.library)
    truth = system.truth[0]
    out = []
    for c in criteria:
        t0 = time.perf_counter()
        try:
            scorer = ModelScorer(traj, system.library, c, stats)
            res = greedy_search(traj, system.library, c, seed, scorer=scorer, threads=threads)
            acc = accuracy(res.chosen, truth)
            e, rel, _ = fit_error(system, traj, res.chosen, _criterion_estimator(c), stats)
            ll = res.score + c.penalty(len(res.chosen), scorer._q.tau) if c.kind != "cv" else res.score
            row = ResultRow(system.name, c.label(), tau, dt, sigma, c.p if c.kind.startswith("pastis") else None,
                            seed, acc.exact_match, acc.tp, acc.fp, acc.fn, rel, ll, None, e)
        except Exception as exc:  # numerical failure of one point is recorded, not fatal
            warnings.warn(f"{c.label()} failed on seed {seed}: {exc}", RuntimeWarning, stacklevel=2)
            row = ResultRow(system.name, c.label(), tau, dt, sigma, None, seed,
                            None, None, None, None, None, None, None, None)
        if timing:
            row.wall_ms = 1e3 * (time.perf_counter() - t0)
        out.append(row)
    return out


def error_rows(system, traj, estimators: list[str], seed: int, *, tau, dt, sigma, model: str = "true",
               timing: bool = False) -> list[ResultRow]:
    """Drift error of fixed-model fits (``model`` is "true" or "full")."""
    stats = LibraryStats(traj, system.library)
    m = system.truth[0] if model == "true" else ModelBasis.of(range(system.library.n0))
    out = []
    for est in estimators:
        t0 = time.perf_counter()
        e, rel, coef = fit_error(system, traj, m, est, stats)
        ll = stats.get(_FIT_KIND[est]).loglik(list(m.indices), coef)
        row = ResultRow(system.name, f"{est}:{model}", tau, dt, sigma, None, seed,
                        None, None, None, None, rel, ll, None, e)
        if timing:
            row.wall_ms = 1e3 * (time.perf_counter() - t0)
        out.append(row)
    return out


def superfluous_gains(system, traj, stats: Optional[LibraryStats] = None) -> np.ndarray:
    """AML log-likelihood gain of adding each single superfluous function to the true model."""
    stats = stats or LibraryStats(traj, system.library)
    q = stats.get("aml")
    base = list(system.truth[0].indices)
    l0 = q.loglik(base, q.solve(base))
    gains = []
    for s in range(system.library.n0):
        if s in base:
            continue
        idx = sorted(base + [s])
        gains.append(q.loglik(idx, q.solve(idx)) - l0)
    return np.array(gains)


# --- sweeps used by the acceptance suite -----------------------------------------

def dt_bias_sweep(system, tau: float, dts, seeds: int, seed=0, estimators=("aml", "trapeze"),
                  batches: int = 20) -> dict:
    """Relative squared bias of the true-model coefficients versus sampling interval.

    Each seed simulates one path at dt_sim and subsamples it to every dt, so
    all intervals share the noise realisation. Seeds are split into
    ``batches`` groups whose regression moments are pooled before solving;
    pooling keeps the O(1/tau) small-sample bias of a single path out of the
    result. With b the mean coefficient error over batches, C their sample
    covariance and G the Gram matrix, the reported value is
    (b^T G b - tr(G C)/B) / (a^T G a), an unbiased estimate of the squared
    bias once the variance term is removed.
    """
    m, a = system.truth
    sub = system.library.subset(m.indices)
    n = len(m)
    if not 2 <= batches <= seeds:
        raise ValueError("need 2 <= batches <= seeds")
    strides = [max(1, int(round(h / system.dt_sim))) for h in np.asarray(dts, dtype=float)]
    dts = np.array([st * system.dt_sim for st in strides])
    coef = {e: np.zeros((len(dts), batches, n)) for e in estimators}
    G = np.zeros((len(dts), n, n))
    children = spawn_seeds(seed, seeds)
    for b, group in enumerate(np.array_split(np.arange(seeds), batches)):
        pool_G = {e: np.zeros((len(dts), n, n)) for e in estimators}
        pool_Y = {e: np.zeros((len(dts), n)) for e in estimators}
        for k in group:
            fine = system.trajectory(tau, children[k], dt=system.dt_sim)
            for i, st in enumerate(strides):
                tr = subsample(fine, st)
                ls = LibraryStats(tr, sub)
                D = metric_diffusion(system, tr)
                for e in estimators:
                    q = ls.get(e, D)
                    pool_G[e][i] += q.G
                    pool_Y[e][i] += q.Y - (q.corr if q.corr is not None else 0.0)
                G[i] += ls.get("aml", D).G / seeds
        for e in estimators:
            for i in range(len(dts)):
                coef[e][i, b] = np.linalg.solve(pool_G[e][i], pool_Y[e][i])
    out = {"dt": dts}
    for e in estimators:
        vals = []
        for i in range(len(dts)):
            d = coef[e][i].mean(0) - a
            C = np.cov(coef[e][i].T)
            vals.append((d @ G[i] @ d - np.trace(G[i] @ C) / batches) / (a @ G[i] @ a))
        out[e] = np.array(vals)
    return out


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# --- extreme value check --------------------------------------------------------

_EVT_SYSTEMS = {8: "ou3", 91: "ou10"}


def max_gain_samples(N: int, runs: int, seed=0, *, source: str = "ou", tau: float = 100.0) -> np.ndarray:
    """Maximum single-superfluous gain per run.

    ``source="ou"`` uses OU trajectories whose library has exactly N
    superfluous functions (N = 8 or 91); ``"iid"`` draws N independent
    half-chi-square(1) variables per run.
    """
    children = spawn_seeds(seed, runs)
    if source == "iid" or N not in _EVT_SYSTEMS:
        rng = np.random.default_rng(children[0] if runs else seed)
        return 0.5 * (rng.standard_normal((runs, N)) ** 2).max(axis=1)
    system = get_system(_EVT_SYSTEMS[N])
    return np.array([superfluous_gains(system, system.trajectory(tau, ss)).max() for ss in children])


def exact_max_mean(N: int) -> float:
    """E[max] under the product CDF, by quadrature of the survival function."""
    val, _ = integrate.quad(lambda z: 1.0 - max_gain_cdf(z, N), 0, np.inf, limit=200)
    return float(val)


def evt_rows(N_values=(8, 91), runs: int = 500, seed=0, *, source: str = "ou") -> list[dict]:
    if runs < 100:
        warnings.warn(f"runs={runs} < 100: extreme-value statistics are unreliable", RuntimeWarning, stacklevel=2)
    rows = []
    for N in N_values:
        g = max_gain_samples(N, runs, seed, source=source)
        used = "ou" if (source == "ou" and N in _EVT_SYSTEMS) else "iid"
        ks = lambda cdf: float(stats.kstest(g, cdf).statistic) if runs > 0 else math.nan
        row = {
            "N": N, "runs": runs, "source": used,
            "mean_max_gain": float(g.mean()) if runs else math.nan,
            "exact_mean": exact_max_mean(N),
            "gumbel_first_mean": gumbel_location(N, "first") + EULER_GAMMA,
            "gumbel_refined_mean": gumbel_location(N, "refined") + EULER_GAMMA if N >= 3 else math.nan,
            "ks_exact": ks(lambda z: max_gain_cdf(np.maximum(z, 0), N)),
            "ks_gumbel_first": ks(lambda z: gumbel_cdf(z, N, "first")),
            "ks_gumbel_refined": ks(lambda z: gumbel_cdf(z, N, "refined")) if N >= 3 else math.nan,
        }
        rows.append(row)
    return rows


# --- benchmark driver ---------------------------------------------------------

AXES = ("tau", "dt", "sigma", "p")


@dataclass
class ExperimentConfig:
    system: str
    axis: str
    values: list
    criteria: list = field(default_factory=lambda: [{"kind": "pastis", "p": 1e-3}])
    runs: int = 50
    seed: int = 0
    task: str = "selection"  # or "error"
    estimators: list = field(default_factory=lambda: ["aml"])
    model: str = "true"
    base: dict = field(default_factory=lambda: {"tau": 1000.0, "dt": None, "sigma": 0.0})
    system_params: dict = field(default_factory=dict)
    paper_scale: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"sweep axis must be one of {AXES}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.task not in ("selection", "error"):
            raise ValueError("task must be 'selection' or 'error'")
        if self.axis in ("tau", "dt") and any(float(v) <= 0 for v in self.values):
            raise ValueError(f"{self.axis} values must be positive")
        if self.axis == "sigma" and any(float(v) < 0 for v in self.values):
            raise ValueError("sigma values must be non-negative")
        if self.axis == "p" and any(not 0 < float(v) < 1 for v in self.values):
            raise ValueError("p values must lie in (0, 1)")

    @classmethod
    def from_json(cls, desc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(desc) - known - {"description"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in desc.items() if k in known})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def scaled(self) -> "ExperimentConfig":
        d = asdict(self)
        d.update(copy.deepcopy(self.paper_scale))
        d["paper_scale"] = {}
        return ExperimentConfig.from_json(d)

    def criterion_specs(self, n0: int, p: Optional[float] = None) -> list[CriterionSpec]:
        out = []
        for c in self.criteria:
            c = dict(c)
            kind = c.pop("kind")
            if p is not None and kind.startswith("pastis"):
                c["p"] = p
            if kind.startswith("pastis") or kind == "ebic":
                c.setdefault("n0", n0)
            out.append(CriterionSpec(kind, **c))
        return out


def _point(cfg: ExperimentConfig, value) -> dict:
    pt = {"tau": 1000.0, "dt": None, "sigma": 0.0, "p": None}
    pt.update(cfg.base)
    pt[cfg.axis] = float(value)
    return pt


def _run_seed(cfg: ExperimentConfig, system, pt: dict, seed: int, ss, timing: bool) -> list[ResultRow]:
    dt = pt["dt"] or system.dt_sim * system.stride
    traj = system.trajectory(pt["tau"], ss, dt=dt, sigma=pt["sigma"], dt_sim=pt.get("dt_sim"))
    kw = dict(tau=pt["tau"], dt=dt, sigma=pt["sigma"], timing=timing)
    if cfg.task == "error":
        return error_rows(system, traj, cfg.estimators, seed, model=cfg.model, **kw)
    return selection_rows(system, traj, cfg.criterion_specs(system.library.n0, pt["p"]), seed, **kw)


def run_benchmark(cfg: ExperimentConfig, out_path, *, threads: int = 1, timing: bool = False,
                  progress=None) -> list[ResultRow]:
    """Write one CSV row per (point, seed, criterion); returns all rows.

    Seeds for point i come from ``SeedSequence(seed).spawn`` of the point, so
    a point's data do not depend on the other points or on ``threads``.
    Rows are written in (point, seed) order and flushed after each seed.
    """
    system = get_system(cfg.system, **cfg.system_params)
    rows: list[ResultRow] = []
    point_seeds = spawn_seeds(cfg.seed, len(cfg.values))
    with open(out_path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(ROW_FIELDS)
        fh.flush()
        for i, v in enumerate(cfg.values):
            pt = _point(cfg, v)
            seeds = point_seeds[i].spawn(cfg.runs)
            job = lambda k: _run_seed(cfg, system, pt, k, seeds[k], timing)
            if threads > 1:
                with ThreadPoolExecutor(threads) as ex:
                    results = ex.map(job, range(cfg.runs))
                    for r in results:
                        write_rows(fh, r)
                        rows.extend(r)
            else:
                for k in range(cfg.runs):
                    r = job(k)
                    write_rows(fh, r)
                    rows.extend(r)
            if progress:
                progress(i + 1, len(cfg.values))
    return rows


SUMMARY_FIELDS = ["system", "criterion", "tau", "dt", "sigma", "p", "n",
                  "exact_match_mean", "exact_match_se", "tp_mean", "fp_mean", "fn_mean",
                  "prediction_error_mean", "prediction_error_se", "drift_error_mean", "drift_error_se"]


def summarize(rows: list[ResultRow]) -> list[dict]:
    """Mean and standard error per (point, criterion), recomputed from rows only."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.system, r.criterion, r.tau, r.dt, r.sigma, r.p), []).append(r)
    out = []
    for key, rs in groups.items():
        d = dict(zip(["system", "criterion", "tau", "dt", "sigma", "p"], key))
        d["n"] = len(rs)

        def ms(name):
            v = np.array([getattr(r, name) for r in rs if getattr(r, name) is not None], dtype=float)
            if v.size == 0:
                return None, None
            se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else None
            return float(v.mean()), se

        d["exact_match_mean"], d["exact_match_se"] = ms("exact_match")
        d["tp_mean"], d["fp_mean"], d["fn_mean"] = ms("tp")[0], ms("fp")[0], ms("fn")[0]
        d["prediction_error_mean"], d["prediction_error_se"] = ms("prediction_error")
        d["drift_error_mean"], d["drift_error_se"] = ms("drift_error")
        out.append(d)
    return out


def write_summary(path, summary: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for d in summary:
            w.writerow([_fmt(d[k]) for k in SUMMARY_FIELDS])
