"""Compiled vs pure-Python simplex kernel on MPC-sized and random LPs.

Usage::

    python benchmarks/bench_simplex.py [--steps 300] [--repeat 3]

The MPC instances are captured from the first ``--steps`` control steps of
the bundled day1 scenario. Both kernels must agree on status, objective and
iteration count; the script exits nonzero otherwise.
"""

import argparse
import sys
import time

import numpy as np

from gridtrack import lp
from gridtrack.sim import harness, load_scenario


class _Capture:
    """LP backend that records every problem it is asked to solve."""

    def __init__(self, inner):
        self.inner = inner
        self.lps = []

    def solve(self, problem):
        self.lps.append(problem)
        return self.inner.solve(problem)


def mpc_instances(n_steps):
    cap = _Capture(lp.SimplexBackend(lp.LpOptions(rule="dantzig")))
    saved = harness.STEPS_PER_DAY
    harness.STEPS_PER_DAY = n_steps
    try:
        harness.run_day(load_scenario("day1"), "with-control", backend=cap)
    finally:
        harness.STEPS_PER_DAY = saved
    return cap.lps


def random_instances(n, size, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        A = rng.uniform(-1, 1, (size, size))
        x0 = rng.uniform(0, 1, size)
        b = A @ x0 + rng.uniform(0.1, 1.0, size)
        out.append(lp.StandardFormLp(rng.normal(size=size), A, b, [lp.LE] * size, np.zeros(size), np.full(size, 2.0)))
    return out


def bench(lps, kernel, opts, repeat):
    best = np.inf
    results = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        results = [lp.solve_lp(p, opts, kernel) for p in lps]
        best = min(best, time.perf_counter() - t0)
    return best, results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=300, help="MPC steps of day1 to capture")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not lp.kernel_available():
        print("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
        return 1

    sets = {
        f"mpc day1 ({args.steps} steps)": (mpc_instances(args.steps), lp.LpOptions(rule="dantzig")),
        "random 20x20 bland": (random_instances(50, 20), lp.LpOptions()),
        "random 60x60 bland": (random_instances(20, 60, seed=1), lp.LpOptions()),
    }
    ok = True
    print(f"{'instance set':28s} {'n':>5s} {'rows':>6s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}")
    for name, (lps, opts) in sets.items():
        t_py, r_py = bench(lps, "python", opts, args.repeat)
        t_cy, r_cy = bench(lps, "cython", opts, args.repeat)
        rows = np.mean([p.n_rows for p in lps])
        print(f"{name:28s} {len(lps):5d} {rows:6.0f} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:8.1f}x")
        for a, b in zip(r_py, r_cy):
            same = a.status == b.status and a.iterations == b.iterations
            if a.optimal:
                same = same and abs(a.objective - b.objective) <= 1e-9 * (1 + abs(a.objective))
            if not same:
                ok = False
        if not ok:
            print(f"  kernels disagree on {name}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
