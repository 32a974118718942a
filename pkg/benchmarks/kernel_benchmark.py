"""Benchmark the compiled stepper kernel against the pure-NumPy fallback.

Runs the same long endemic integration on every importable kernel and prints
wall time, accepted steps, and the speedup of the compiled path.

    python benchmarks/kernel_benchmark.py [--t-end 2000] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from waningsim import stepper
from waningsim.data import pertussis_config
from waningsim.model import epidemic_start


def run_once(impl, cfg, t_end):
    y0 = epidemic_start(cfg).as_array()
    start = time.perf_counter()
    times, states, status, n_acc, n_rej, _ = impl.integrate_core(
        cfg.beta,
        cfg.omega_i,
        cfg.delta_i,
        cfg.mu,
        cfg.r,
        y0,
        t_end,
        1e-10,
        1e-12,
        np.array([t_end]),
        50_000_000,
        0.0,
        False,
        1e-10,
        50,
    )
    elapsed = time.perf_counter() - start
    assert status >= 0
    return elapsed, n_acc, n_rej, states[-1]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--t-end", type=float, default=2000.0, help="integration horizon in years")
    parser.add_argument("--repeat", type=int, default=3, help="best-of-N timing")
    args = parser.parse_args()

    # endemic variant of the bundled config: past the waning bifurcation
    cfg = pertussis_config().replace(delta=0.25)

    results = {}
    for name, impl in stepper.kernels().items():
        best = None
        for _ in range(args.repeat):
            elapsed, n_acc, n_rej, final = run_once(impl, cfg, args.t_end)
            if best is None or elapsed < best[0]:
                best = (elapsed, n_acc, n_rej, final)
        results[name] = best
        print(
            f"{name:>7}: {best[0] * 1e3:9.2f} ms   "
            f"accepted={best[1]:<8d} rejected={best[2]:<6d} terminal I={best[3][-1]:.6e}"
        )

    if {"python", "cython"} <= results.keys():
        drift = float(np.max(np.abs(results["python"][3] - results["cython"][3])))
        print(f"speedup: {results['python'][0] / results['cython'][0]:.1f}x   terminal-state gap: {drift:.2e}")


if __name__ == "__main__":
    main()
