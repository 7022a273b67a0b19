"""Wall-clock comparison of the numba kernels against the numpy fallbacks.

Each backend runs in its own interpreter because the choice is fixed at
import time. Timings exclude JIT compilation: every case is warmed up once
on a short run before the timed repetitions.

    python3 benchmarks/backend_speed.py [--steps 200000] [--repeat 3] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from pastis import _backend
from pastis.systems import ou3, lorenz, lotka_volterra, gray_scott

steps, gs_steps, repeat = map(int, sys.argv[1:4])

def best(fn):
    fn(short=True)
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(short=False)
        ts.append(time.perf_counter() - t0)
    return min(ts)

def sde(system):
    def run(short):
        n = 100 if short else steps
        system.trajectory(n * system.dt_sim, 1, dt=system.dt_sim)
    return run

def gs(short):
    sysm = gray_scott()
    n = 10 if short else gs_steps
    sysm.trajectory(n * sysm.dt_sim, 1, dt=sysm.dt_sim * 10)

out = {"backend": _backend.BACKEND}
for name, s in (("em_ou3", ou3()), ("em_lorenz", lorenz()), ("em_lv7", lotka_volterra())):
    s.burn_in_time = 0.0
    out[name] = best(sde(s))
out["gray_scott_32"] = best(gs)
print(json.dumps(out))
"""


def run_backend(backend, args):
    env = dict(os.environ, PASTIS_BACKEND=backend)
    res = subprocess.run([sys.executable, "-c", WORKER, str(args.steps), str(args.gs_steps), str(args.repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200_000, help="Euler-Maruyama steps per SDE case")
    ap.add_argument("--gs-steps", type=int, default=2_000, help="integration steps for Gray-Scott")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the raw timings here")
    args = ap.parse_args(argv)

    res = {b: run_backend(b, args) for b in ("numba", "numpy")}
    cases = [k for k in res["numba"] if k != "backend"]
    print(f"{'case':<16}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for c in cases:
        a, b = res["numba"][c], res["numpy"][c]
        print(f"{c:<16}{a:>12.4f}{b:>12.4f}{b / a:>10.1f}x")
    if res["numba"]["backend"] != "numba":
        print("note: numba unavailable, both columns used the numpy fallback")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
