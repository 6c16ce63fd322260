#!/usr/bin/env python3
"""Benchmark the compiled network kernel against the pure-numpy fallback.

Runs the nominal workbench estimator at several neuron counts with both
backends and reports wall time per run plus the speedup.  Results are
bit-identical between backends; this only measures dispatch overhead.

    python benchmarks/bench_backends.py [--repeats 5]
"""
import argparse
import time

import numpy as np

from scnfilt import _backend
from scnfilt.filters import gain_schedule
from scnfilt.harness import default_p0
from scnfilt.network import build_decoder, run_snn_estimator
from scnfilt.system import simulate_trajectory, workbench_model


def time_backend(backend, model, dec, traj, schedule, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        run = run_snn_estimator(model, dec, traj, gain_mode="MSIF-cov",
                                P0=default_p0(2), backend=backend,
                                schedule=schedule)
        best = min(best, time.perf_counter() - t0)
    return best, run


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--steps", type=int, default=1000)
    args = parser.parse_args()

    if not _backend.HAVE_KERNEL:
        print("compiled kernel not built; nothing to compare")
        return

    model, ctrl = workbench_model()
    traj = simulate_trajectory(model, ctrl, 0.01, args.steps,
                               np.random.default_rng(0), sqrt_dt_noise=False)
    schedule = gain_schedule(model, "MSIF", default_p0(2), 0.01, args.steps)

    print(f"{'N':>6} {'compiled':>12} {'python':>12} {'speedup':>9}  bitwise")
    for N in (50, 150, 300, 450, 900):
        dec = build_decoder(2, N, seed=N)
        tc, rc = time_backend("compiled", model, dec, traj, schedule, args.repeats)
        tp, rp = time_backend("python", model, dec, traj, schedule, args.repeats)
        same = (np.array_equal(rc.estimates, rp.estimates)
                and np.array_equal(rc.raster.events, rp.raster.events))
        print(f"{N:>6} {tc * 1e3:>10.2f}ms {tp * 1e3:>10.2f}ms "
              f"{tp / tc:>8.1f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
