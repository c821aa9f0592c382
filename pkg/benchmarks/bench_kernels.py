"""Time the compiled and pure-Python integrators on a bundled scenario.

    python benchmarks/bench_kernels.py [--scenario dc_drive_fig2] [--t-end 5] [--repeat 3]

Both backends run the same observers on the same grid; the script reports
wall time per backend, the speed-up and the largest difference between the
two estimate trajectories.
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from delayeso import kernels
from delayeso.scenario import load
from delayeso.sim import simulate


def _time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="dc_drive_fig2")
    p.add_argument("--t-end", type=float, default=5.0, help="horizon in seconds (the Python loop is slow)")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    exp = load(args.scenario).build()
    cfg = replace(exp.config, t_end=args.t_end)
    available = kernels.backends()
    print(f"scenario={exp.name} steps={cfg.steps} observers={len(exp.observers)} backends={sorted(available)}")
    results = {}
    for name in sorted(available):
        elapsed, trace = _time(lambda: simulate(exp.setup, exp.observers, cfg, backend=name), args.repeat)
        results[name] = (elapsed, trace)
        rate = cfg.steps * len(exp.observers) / elapsed
        print(f"{name:>7}: {elapsed * 1e3:10.2f} ms  ({rate:,.0f} observer-steps/s)")
    if {"cython", "python"} <= results.keys():
        (tc, a), (tp, b) = results["cython"], results["python"]
        diff = max(float(np.nanmax(np.abs(oa.Xhat - ob.Xhat))) for oa, ob in zip(a.observers, b.observers))
        print(f"speed-up: {tp / tc:.1f}x   max |xhat_cython - xhat_python| = {diff:.3e}")
    else:
        print("compiled backend not built; only the Python fallback was timed")


if __name__ == "__main__":
    main()
