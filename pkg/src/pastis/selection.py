"""Model scoring, subset search and extreme-value calibration."""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .basis import BasisLibrary, ModelBasis, polynomial_library
from .errors import DomainError, EmptyModel, InsufficientData, SingularGram, SingularWeight
from .estimators import LibraryStats, _check_conditioning
from .sde_sim import DriftSpec, NoiseSpec, Trajectory, simulate, spawn_seeds

KINDS = ("aic", "bic", "ebic", "cv", "pastis", "pastis_dt", "pastis_sigma")
_STATS_KIND = {"pastis_dt": "dt", "pastis_sigma": "shift"}


@dataclass(frozen=True)
class CriterionSpec:
    kind: str
    n0: Optional[int] = None
    p: float = 1e-3
    gamma: float = 1.0
    k: int = 7

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown criterion {self.kind!r}; choose from {', '.join(KINDS)}")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.k < 2:
            raise ValueError("cross-validation needs k >= 2")
        if self.kind.startswith("pastis") or self.kind == "ebic":
            if self.n0 is None or self.n0 < 1:
                raise ValueError(f"{self.kind} needs the library size n0")

    @classmethod
    def aic(cls):
        return cls("aic")

    @classmethod
    def bic(cls):
        return cls("bic")

    @classmethod
    def ebic(cls, n0, gamma=1.0):
        return cls("ebic", n0=n0, gamma=gamma)

    @classmethod
    def cv(cls, k=7):
        return cls("cv", k=k)

    @classmethod
    def pastis(cls, n0, p=1e-3, variant=""):
        return cls("pastis" + (f"_{variant}" if variant else ""), n0=n0, p=p)

    @property
    def stats_kind(self) -> str:
        return _STATS_KIND.get(self.kind, "aml")

    def label(self) -> str:
        if self.kind.startswith("pastis"):
            return f"{self.kind}(p={self.p:g})"
        if self.kind == "ebic":
            return f"ebic(gamma={self.gamma:g})"
        if self.kind == "cv":
            return f"cv(k={self.k})"
        return self.kind

    def penalty(self, n: int, tau: float) -> float:
        if n == 0 or self.kind == "cv":
            return 0.0
        if self.kind == "aic":
            return float(n)
        if self.kind == "bic":
            return 0.5 * n * math.log(tau)
        if self.kind == "ebic":
            log_binom = math.lgamma(self.n0 + 1) - math.lgamma(n + 1) - math.lgamma(self.n0 - n + 1)
            return 0.5 * n * math.log(tau) + self.gamma * log_binom
        return n * math.log(self.n0 / self.p)

    def to_json(self) -> dict:
        return {"kind": self.kind, "n0": self.n0, "p": self.p, "gamma": self.gamma, "k": self.k}


# --- scoring ---------------------------------------------------------------

class _CVStats:
    """Per-fold moment blocks; folds are contiguous blocks of samples."""

    def __init__(self, traj: Trajectory, library: BasisLibrary, k: int):
        blocks = np.array_split(np.arange(traj.n), k)
        if any(len(b) < 2 for b in blocks):
            raise InsufficientData(f"{traj.n} samples cannot form {k} folds of at least 2 samples")
        feat = LibraryStats(traj, library).feat
        ncols = traj.states.shape[1] if traj.grid is not None else 1
        seg = []
        for b in blocks:
            rows = slice(int(b[0]), int(b[-1]))
            cnt = rows.stop - rows.start
            seg.append((cnt, feat.pair(0, 0, rows) * cnt, feat.vec(0, rows) * cnt, feat.vv(rows) * cnt))
        self.folds = []
        for j in range(k):
            cnt = sum(s[0] for i, s in enumerate(seg) if i != j)
            P = sum(s[1] for i, s in enumerate(seg) if i != j) / cnt
            Yr = sum(s[2] for i, s in enumerate(seg) if i != j) / cnt
            VV = sum(s[3] for i, s in enumerate(seg) if i != j) / cnt
            D = VV * traj.dt / (2.0 * ncols)
            try:
                W = np.linalg.inv(4.0 * D)
            except np.linalg.LinAlgError as exc:
                raise SingularWeight("training diffusion is singular") from exc
            if not np.isfinite(W).all():
                raise SingularWeight("training diffusion is singular")
            cj, Pj, Yj, VVj = seg[j]
            self.folds.append((
                feat.gram(P, W), feat.yvec(Yr, W),
                feat.gram(Pj / cj, W), feat.yvec(Yj / cj, W), feat.scalar(VVj / cj, W), cj * traj.dt,
            ))

    def score(self, idx) -> float:
        idx = np.asarray(idx, dtype=int)
        total = 0.0
        for G, Y, H, Yt, c, tau in self.folds:
            if idx.size == 0:
                total += -tau * c
                continue
            Gs = G[np.ix_(idx, idx)]
            _check_conditioning(Gs)
            a = np.linalg.solve(Gs, Y[idx])
            total += -tau * (c - 2.0 * a @ Yt[idx] + a @ H[np.ix_(idx, idx)] @ a)
        return float(total / len(self.folds))


class ModelScorer:
    """Memoized criterion scores for one trajectory; safe to share across threads."""

    def __init__(self, traj: Trajectory, library: BasisLibrary, criterion: CriterionSpec,
                 stats: Optional[LibraryStats] = None):
        self.library = library
        self.criterion = criterion
        self._memo: dict[frozenset, float] = {}
        self._lock = threading.Lock()
        if criterion.kind == "cv":
            self._cv = _CVStats(traj, library, criterion.k)
            self._q = None
        else:
            self._cv = None
            self._q = (stats or LibraryStats(traj, library)).get(criterion.stats_kind)

    @property
    def n_scored(self) -> int:
        return len(self._memo)

    def loglik(self, model) -> float:
        idx = sorted(model)
        return self._q.loglik(idx, self._q.solve(idx))

    def __call__(self, model) -> float:
        key = frozenset(model)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        idx = sorted(key)
        try:
            if self._cv is not None:
                val = self._cv.score(idx)
            else:
                val = self._q.loglik(idx, self._q.solve(idx)) - self.criterion.penalty(len(idx), self._q.tau)
        except (SingularGram, np.linalg.LinAlgError):
            val = -math.inf
        if not np.isfinite(val):
            val = -math.inf
        with self._lock:
            self._memo[key] = val
        return val


def score(criterion: CriterionSpec, traj: Trajectory, model: ModelBasis, library: BasisLibrary) -> float:
    """Criterion value of one model; singular fits score minus infinity."""
    model.check(library)
    return ModelScorer(traj, library, criterion)(model.indices)


def cv_score(traj: Trajectory, model: ModelBasis, library: BasisLibrary, k: int = 7) -> float:
    """Mean held-out log-likelihood over k contiguous folds."""
    if k < 2:
        raise ValueError("k must be at least 2")
    model.check(library)
    cv = _CVStats(traj, library, k)
    return cv.score(list(model.indices))


# --- search ----------------------------------------------------------------

@dataclass
class SelectionResult:
    chosen: ModelBasis
    score: float
    trace: list = field(default_factory=list)  # per restart: [(model tuple, score), ...]
    restarts: int = 0
    seed: object = None
    n_scored: int = 0

    def to_json(self) -> dict:
        return {
            "chosen": list(self.chosen.indices),
            "score": self.score,
            "restarts": self.restarts,
            "trace_length": sum(len(t) for t in self.trace),
            "n_scored": self.n_scored,
        }


def _better(s_new, m_new, s_old, m_old) -> bool:
    if s_new != s_old:
        return s_new > s_old
    if len(m_new) != len(m_old):
        return len(m_new) < len(m_old)
    return sorted(m_new) < sorted(m_old)


def _climb(scorer, start: frozenset, rng, n0: int, stall: int):
    cur, cur_s = start, scorer(start)
    trace = [(tuple(sorted(cur)), cur_s)]
    rejects = 0
    while rejects < stall:
        j = int(rng.integers(n0))
        cand = cur ^ {j}
        s = scorer(cand)
        if s > cur_s or (s == cur_s and s > -math.inf and len(cand) < len(cur)):
            cur, cur_s = cand, s
            trace.append((tuple(sorted(cur)), cur_s))
            rejects = 0
        else:
            rejects += 1
    return cur, cur_s, trace


def greedy_search(traj: Trajectory, library: BasisLibrary, criterion: CriterionSpec, seed=0, *,
                  stall: Optional[int] = None, threads: int = 1, n_random: Optional[int] = None,
                  scorer: Optional[ModelScorer] = None) -> SelectionResult:
    """Stochastic single add/remove hill climb with restarts.

    Restarts begin from the empty model, the full library and ``n_random``
    (default n0) random subsets. Restart r draws from the r-th child of
    ``SeedSequence(seed)``, so results do not depend on ``threads``.
    """
    n0 = library.n0
    if n0 < 1:
        raise ValueError("library is empty")
    scorer = scorer or ModelScorer(traj, library, criterion)
    stall = 2 * n0 if stall is None else stall
    n_random = n0 if n_random is None else n_random
    children = spawn_seeds(seed, n_random + 2)

    def run(r):
        rng = np.random.default_rng(children[r])
        if r == 0:
            start = frozenset()
        elif r == 1:
            start = frozenset(range(n0))
        else:
            start = frozenset(np.flatnonzero(rng.random(n0) < 0.5).tolist())
        return _climb(scorer, start, rng, n0, stall)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, range(n_random + 2)))
    else:
        results = [run(r) for r in range(n_random + 2)]

    best_m, best_s = results[0][0], results[0][1]
    for m, s, _ in results[1:]:
        if _better(s, m, best_s, best_m):
            best_m, best_s = m, s
    return SelectionResult(ModelBasis.of(best_m), best_s, [t for _, _, t in results],
                           n_random + 2, seed, scorer.n_scored)


def exhaustive_search(traj: Trajectory, library: BasisLibrary, criterion: CriterionSpec, *,
                      scorer: Optional[ModelScorer] = None, max_n0: int = 16) -> SelectionResult:
    """Brute-force optimum over all 2^n0 models (reference oracle)."""
    n0 = library.n0
    if n0 > max_n0:
        raise ValueError(f"exhaustive search over 2^{n0} models refused (max_n0={max_n0})")
    scorer = scorer or ModelScorer(traj, library, criterion)
    best_m, best_s = frozenset(), scorer(frozenset())
    for mask in range(1, 1 << n0):
        m = frozenset(i for i in range(n0) if mask >> i & 1)
        s = scorer(m)
        if _better(s, m, best_s, best_m):
            best_m, best_s = m, s
    return SelectionResult(ModelBasis.of(best_m), best_s, [], 1, None, scorer.n_scored)


def stlsq(traj: Trajectory, library: BasisLibrary, threshold: float, max_iter: int = 20, *,
          strict: bool = False, stats: Optional[LibraryStats] = None) -> ModelBasis:
    """Sequentially thresholded weighted least squares.

    Returns the empty model when everything is pruned, or raises
    ``EmptyModel`` instead when ``strict``.
    """
    if not threshold >= 0:
        raise ValueError("threshold must be non-negative")
    q = (stats or LibraryStats(traj, library)).get("aml")
    active = list(range(library.n0))
    for _ in range(max_iter):
        if not active:
            break
        alpha = q.solve(active)
        keep = [j for j, a in zip(active, alpha) if abs(a) >= threshold]
        if keep == active:
            break
        active = keep
    if not active and strict:
        raise EmptyModel("every coefficient fell below the threshold")
    return ModelBasis.of(active)


@dataclass(frozen=True)
class AccuracyReport:
    exact_match: int
    tp: float
    fp: float
    fn: float


def accuracy(selected: ModelBasis, truth: ModelBasis) -> AccuracyReport:
    """Exact match plus true/false positive and false negative fractions of the union."""
    s, t = selected.as_set(), truth.as_set()
    union = len(s | t)
    if union == 0:
        return AccuracyReport(1, 0.0, 0.0, 0.0)
    return AccuracyReport(int(s == t), len(s & t) / union, len(s - t) / union, len(t - s) / union)


# --- extreme value calibration --------------------------------------------------

EULER_GAMMA = float(np.euler_gamma)


def max_gain_cdf(z, N: int):
    """P(max of N iid chi2_1/2 gains <= z) = erf(sqrt z)^N."""
    if N < 1:
        raise ValueError("N must be at least 1")
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be non-negative")
    with np.errstate(divide="ignore"):
        out = np.exp(N * np.log1p(-special.erfc(np.sqrt(z))))
    out = np.where(z == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def gumbel_location(N: int, order: str = "refined") -> float:
    """Gumbel location for the maximum of N half-chi2_1 gains."""
    if order == "first":
        if N < 1:
            raise DomainError("N must be at least 1")
        return math.log(N)
    if order != "refined":
        raise ValueError("order must be 'first' or 'refined'")
    if N < 3:
        raise DomainError("the refined location needs N >= 3")
    return math.log(N) - 0.5 * math.log(math.log(N)) - 0.5 * math.log(math.pi)


def gumbel_cdf(z, N: int, order: str = "refined"):
    mu = gumbel_location(N, order)
    return np.exp(-np.exp(-(np.asarray(z, dtype=float) - mu)))


def predicted_error_rate(p: float, n0: int, n_star: int) -> float:
    """g(p) = 1 - erf(sqrt(ln(n0/p)))^(n0 - n_star)."""
    if not 0 < p < 1:
        raise DomainError("p must lie in (0, 1)")
    if not n0 > n_star >= 0:
        raise DomainError("need n0 > n_star >= 0")
    L = math.log(n0 / p)
    if L < 0:
        raise DomainError("ln(n0/p) is negative")
    return float(-np.expm1((n0 - n_star) * np.log1p(-special.erfc(math.sqrt(L)))))


def aic_overfit_probability_check(runs: int = 1000, seed=0, *, criterion: Optional[CriterionSpec] = None,
                                  tau: float = 100.0, dt: float = 0.01) -> float:
    """Fraction of OU runs (d=1, drift -x, D=1) where a criterion picks {x, 1} over {x}.

    The library is {1, x}, so n0 = 2 and the constant is the lone superfluous term.
    """
    if runs < 100:
        raise ValueError("runs must be at least 100")
    criterion = criterion or CriterionSpec.aic()
    lib = polynomial_library(1, 1)
    x_idx, c_idx = lib.labels().index("x1 e1"), lib.labels().index("1 e1")
    drift = DriftSpec.ou(np.array([[1.0]]))
    noise = NoiseSpec.additive(1.0)
    n_steps = int(round(tau / dt))
    hits = 0
    for ss in spawn_seeds(seed, runs):
        x0 = np.random.default_rng(ss.spawn(1)[0]).standard_normal(1)
        traj = simulate(drift, noise, x0, dt, n_steps, ss)
        sc = ModelScorer(traj, lib, criterion)
        hits += sc({x_idx, c_idx}) > sc({x_idx})
    return hits / runs
