"""Command-line entry point: ``pastis <verb> ...`` or ``python3 -m pastis <verb> ...``.

Exit codes: 0 success, 2 usage or invalid configuration, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import io as pio
from .basis import BasisLibrary, ModelBasis, gray_scott_library, lv_library, polynomial_library, true_model
from .errors import PastisError
from .estimators import FITTERS, diffusion_simple, drift_error
from .experiments import ExperimentConfig, evt_rows, run_benchmark, summarize, write_summary
from .sde_sim import DriftSpec, NoiseSpec, simulate
from .selection import KINDS, CriterionSpec, ModelScorer, accuracy, greedy_search
from .systems import SDE_SYSTEMS, get_system

SYSTEM_NAMES = [*SDE_SYSTEMS, "gray_scott"]


class UsageError(Exception):
    pass


# --- library / model specs --------------------------------------------------------

def parse_library(spec: str | None, meta: dict) -> BasisLibrary:
    """``poly:D:DEG``, ``lv:D``, ``gray_scott``, a system name, or a JSON file of basis functions."""
    if spec is None:
        name = meta.get("system")
        if not name:
            raise UsageError("--library is required when the trajectory does not name its system")
        spec = name
    if spec.startswith("poly:"):
        try:
            _, d, deg = spec.split(":")
            return polynomial_library(int(d), int(deg))
        except ValueError:
            raise UsageError(f"bad library spec {spec!r}; expected poly:D:DEG") from None
    if spec.startswith("lv:"):
        return lv_library(int(spec.split(":")[1]))
    if spec == "gray_scott":
        return gray_scott_library()
    if spec in SDE_SYSTEMS:
        return get_system(spec).library
    p = Path(spec)
    if p.is_file():
        with open(p) as fh:
            return BasisLibrary.from_json(json.load(fh))
    raise UsageError(f"unknown library spec {spec!r}")


def _truth_for(meta: dict, library: BasisLibrary):
    name = meta.get("system")
    if name in SYSTEM_NAMES:
        sysm = get_system(name)
        if sysm.library == library:
            return sysm.truth
    if "drift" in meta:
        try:
            return true_model(DriftSpec.from_description(meta["drift"]), library)
        except PastisError:
            return None
    return None


def parse_model(spec: str, library: BasisLibrary, meta: dict) -> ModelBasis:
    if spec == "full":
        return ModelBasis.of(range(library.n0))
    if spec == "true":
        truth = _truth_for(meta, library)
        if truth is None:
            raise UsageError("--model true needs a trajectory whose sidecar names a known system or drift")
        return truth[0]
    if Path(spec).is_file():
        with open(spec) as fh:
            idx = json.load(fh)
        idx = idx["model"] if isinstance(idx, dict) else idx
    else:
        try:
            idx = [int(s) for s in spec.split(",") if s.strip()]
        except ValueError:
            raise UsageError(f"bad model spec {spec!r}; use 'true', 'full' or comma-separated indices") from None
    return ModelBasis.of(idx).check(library)


# --- verbs -------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    name = args.system or cfg.get("system", "ou3")
    tau = args.tau if args.tau is not None else cfg.get("tau", 100.0)
    sigma = args.sigma if args.sigma is not None else cfg.get("sigma", 0.0)
    dt = args.dt if args.dt is not None else cfg.get("dt")
    dt_sim = args.dt_sim if args.dt_sim is not None else cfg.get("dt_sim")
    out = args.out or cfg.get("out")
    if not out:
        raise UsageError("--out is required")
    pio._check_dir(out)
    t0 = time.perf_counter()
    if name == "custom":
        drift = DriftSpec.from_description(cfg["drift"])
        noise = NoiseSpec.from_description(cfg["noise"])
        dt_sim = dt_sim or 1e-3
        dt = dt or dt_sim
        stride = max(1, int(round(dt / dt_sim)))
        traj = simulate(drift, noise, cfg.get("x0", np.zeros(drift.d)), dt_sim, int(round(tau / dt)) * stride,
                        args.seed, burn_in=int(cfg.get("burn_in", 0)), record_stride=stride)
        meta = {"system": "custom", "drift": drift.describe(), "noise": noise.describe()}
    else:
        if name not in SYSTEM_NAMES:
            raise UsageError(f"unknown system {name!r}; choose from {', '.join(SYSTEM_NAMES)}")
        system = get_system(name, **cfg.get("system_params", {}))
        traj = system.trajectory(tau, args.seed, dt=dt, sigma=sigma, dt_sim=dt_sim)
        meta = {"system": name}
        if hasattr(system, "drift"):
            meta.update(drift=system.drift.describe(), noise=system.noise.describe())
        else:
            meta["params"] = system.params.describe()
    meta.update(seed=args.seed, tau=tau, sigma=sigma)
    pio.write_trajectory(out, traj, meta)
    _info(args, f"wrote {traj.n} rows (d={traj.states.shape[1]}, dt={traj.dt:g}) to {out} "
                f"in {time.perf_counter() - t0:.2f}s")
    return 0


def cmd_fit(args) -> int:
    traj = pio.read_trajectory(args.trajectory)
    library = parse_library(args.library, traj.meta)
    model = parse_model(args.model, library, traj.meta)
    res = FITTERS[args.estimator](traj, model, library)
    report = res.to_json()
    report["labels"] = [library[i].label() for i in model.indices]
    report["standard_error"] = np.sqrt(np.maximum(np.diag(np.linalg.inv(res.gram)), 0) / (2 * res.tau)).tolist()
    truth = _truth_for(traj.meta, library)
    if truth is not None:
        e, rel = drift_error(res, truth, traj, diffusion_simple(traj), library)
        report["drift_error"] = e
        report["prediction_error"] = rel
    _emit(args, report)
    return 0


def cmd_select(args) -> int:
    traj = pio.read_trajectory(args.trajectory)
    library = parse_library(args.library, traj.meta)
    crit = CriterionSpec(args.criterion, n0=library.n0, p=args.p, gamma=args.gamma, k=args.k) \
        if args.criterion.startswith("pastis") or args.criterion == "ebic" \
        else CriterionSpec(args.criterion, p=args.p, gamma=args.gamma, k=args.k)
    t0 = time.perf_counter()
    scorer = ModelScorer(traj, library, crit)
    res = greedy_search(traj, library, crit, args.seed, scorer=scorer, threads=args.threads)
    report = {
        "criterion": crit.to_json(),
        "chosen": list(res.chosen.indices),
        "labels": [library[i].label() for i in res.chosen.indices],
        "score": res.score,
        "trace_length": sum(len(t) for t in res.trace),
        "models_scored": res.n_scored,
        "wall_time_s": time.perf_counter() - t0,
    }
    truth = _truth_for(traj.meta, library)
    if truth is not None:
        acc = accuracy(res.chosen, truth[0])
        report["accuracy"] = {"exact_match": acc.exact_match, "tp": acc.tp, "fp": acc.fp, "fn": acc.fn}
    _emit(args, report)
    return 0


def cmd_benchmark(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.paper_scale:
        cfg = cfg.scaled()
    if args.runs is not None:
        cfg.runs = args.runs
    if args.seed_given:
        cfg.seed = args.seed
    out = args.out or f"{Path(args.config).stem}.csv"
    pio._check_dir(out)
    t0 = time.perf_counter()
    prog = (lambda i, n: print(f"point {i}/{n} done ({time.perf_counter() - t0:.1f}s)", file=sys.stderr)) \
        if not args.quiet else None
    rows = run_benchmark(cfg, out, threads=args.threads, timing=args.timing, progress=prog)
    summary = summarize(rows)
    spath = str(out) + ".summary.csv"
    write_summary(spath, summary)
    if not args.quiet:
        for d in summary:
            em = d["exact_match_mean"]
            pe = d["prediction_error_mean"]
            print(f"{d['criterion']:>22s} {cfg.axis}={d[cfg.axis]!s:>8s}  n={d['n']:3d}  "
                  f"exact_match={'NA' if em is None else f'{em:.3f}'}  "
                  f"prediction_error={'NA' if pe is None else f'{pe:.4g}'}")
        print(f"rows -> {out}; summary -> {spath}")
    return 0


def cmd_evt_check(args) -> int:
    out = args.out or "evt_check.csv"
    pio._check_dir(out)
    rows = evt_rows(args.N, args.runs, args.seed, source=args.source)
    keys = list(rows[0].keys()) if rows else []
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow(["" if (isinstance(v, float) and not np.isfinite(v)) else
                        (repr(v) if isinstance(v, float) else v) for v in r.values()])
    if not args.quiet:
        for r in rows:
            print(f"N={r['N']:4d} mean={r['mean_max_gain']:.4f} exact={r['exact_mean']:.4f} "
                  f"refined+gamma={r['gumbel_refined_mean']:.4f} KS exact={r['ks_exact']:.4f} "
                  f"first={r['ks_gumbel_first']:.4f}")
    return 0


# --- plumbing ------------------------------------------------------------------------

def _emit(args, obj):
    if args.out:
        pio.write_json(args.out, obj)
    else:
        json.dump(obj, sys.stdout, indent=2, default=pio._default)
        sys.stdout.write("\n")


def _info(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


class _SeedAction(argparse.Action):
    def __call__(self, parser, ns, values, option_string=None):
        ns.seed = values
        ns.seed_given = True


def _globals(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=d(0), action=_SeedAction, help="master seed (default 0)")
    g.add_argument("--out", default=d(None), help="output path")
    g.add_argument("--threads", type=int, default=d(1), help="worker threads (default 1)")
    g.add_argument("--paper-scale", action="store_true", default=d(False),
                   help="use the full-scale settings stored in the config")
    g.add_argument("--quiet", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pastis", description="Sparse SDE model inference and benchmarks.")
    _globals(ap, False)
    sub = ap.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("simulate", help="simulate a benchmark system to CSV + JSON")
    _globals(s, True)
    s.add_argument("--system", choices=[*SYSTEM_NAMES, "custom"])
    s.add_argument("--config", help="JSON with system/tau/dt/dt_sim/sigma (and drift/noise/x0 for custom)")
    s.add_argument("--tau", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--dt-sim", dest="dt_sim", type=float)
    s.add_argument("--sigma", type=float)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a fixed model and print the FitResult JSON")
    _globals(f, True)
    f.add_argument("trajectory")
    f.add_argument("--library", help="poly:D:DEG | lv:D | gray_scott | system name | JSON file")
    f.add_argument("--model", default="true", help="true | full | i,j,k | JSON file")
    f.add_argument("--estimator", choices=sorted(FITTERS), default="aml")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("select", help="greedy model search under an information criterion")
    _globals(c, True)
    c.add_argument("trajectory")
    c.add_argument("--library")
    c.add_argument("--criterion", choices=KINDS, default="pastis")
    c.add_argument("--p", type=float, default=1e-3)
    c.add_argument("--gamma", type=float, default=1.0)
    c.add_argument("--k", type=int, default=7)
    c.set_defaults(func=cmd_select)

    b = sub.add_parser("benchmark", help="run a seeded sweep from a JSON config")
    _globals(b, True)
    b.add_argument("--config", required=True)
    b.add_argument("--runs", type=int, help="override runs per point")
    b.add_argument("--timing", action="store_true", help="fill the wall_ms column (breaks byte-identical output)")
    b.set_defaults(func=cmd_benchmark)

    e = sub.add_parser("evt-check", help="empirical vs theoretical maximum-gain statistics")
    _globals(e, True)
    e.add_argument("--N", type=int, nargs="+", default=[8, 91])
    e.add_argument("--runs", type=int, default=500)
    e.add_argument("--source", choices=["ou", "iid"], default="ou")
    e.set_defaults(func=cmd_evt_check)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if not hasattr(args, "seed_given"):
        args.seed_given = False
    if args.threads < 1:
        ap.error("--threads must be >= 1")
    try:
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            return args.func(args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"pastis: error: {exc}", file=sys.stderr)
        return 2
    except PastisError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 3
    except ValueError as exc:
        print(json.dumps({"error": "InvalidArgument", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
