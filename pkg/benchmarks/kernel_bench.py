#!/usr/bin/env python3
"""Benchmark the dual-path kernels: numba @njit vs the pure-numpy fallback.

The parent process runs whichever path its environment selects; it then
re-runs itself with DRIVELAB_DISABLE_NUMBA=1 to collect the fallback
numbers and prints the comparison.  The GELU family is vectorized numpy in
both modes (scipy's erf ufunc measured faster than a scalar math.erf loop
under numba on the reference box), so it is reported once for context.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np


def time_call(fn, *args, repeat=200):
    fn(*args)   # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e3


def run_benchmarks():
    from drivelab import kernels

    rng = np.random.default_rng(0)
    results = {"using_numba": kernels.USING_NUMBA}

    vals = rng.normal(size=(3000, 155))
    ids = rng.integers(0, 96, size=3000)
    results["segment_sum_3000x155"] = time_call(kernels.segment_sum, vals, ids, 96)

    t = np.linspace(0, 120, 480)
    px = np.ascontiguousarray(t)
    py = np.ascontiguousarray(np.sin(t / 12) * 10)
    qx = rng.uniform(0, 120, 256)
    qy = rng.uniform(-12, 12, 256)
    results["polyline_project_256x480"] = time_call(kernels.polyline_project,
                                                    px, py, qx, qy)

    n = 40
    rcx = rng.uniform(-60, 60, n)
    rcy = rng.uniform(-60, 60, n)
    ang = rng.uniform(-np.pi, np.pi, n)
    results["segments_blocked_40x40"] = time_call(
        kernels.segments_blocked, 0.0, 0.0, np.ascontiguousarray(rcx),
        np.ascontiguousarray(rcy), np.arange(n, dtype=np.int64),
        np.ascontiguousarray(rcx), np.ascontiguousarray(rcy),
        np.ascontiguousarray(np.cos(ang)), np.ascontiguousarray(np.sin(ang)),
        np.full(n, 2.4), np.full(n, 1.0))

    x = rng.normal(size=(3000, 64))
    results["gelu_fwd_3000x64"] = time_call(kernels.gelu_fwd, x)
    y, cdf = kernels.gelu_fwd(x)
    dy = rng.normal(size=x.shape)
    results["gelu_vjp_3000x64"] = time_call(kernels.gelu_vjp, x, cdf, dy)
    return results


def main():
    if os.environ.get("_KERNEL_BENCH_CHILD"):
        print(json.dumps(run_benchmarks()))
        return

    primary = run_benchmarks()
    env = dict(os.environ, DRIVELAB_DISABLE_NUMBA="1", _KERNEL_BENCH_CHILD="1")
    out = subprocess.run([sys.executable, os.path.abspath(__file__)], env=env,
                         capture_output=True, text=True, check=True)
    fallback = json.loads(out.stdout.strip().splitlines()[-1])

    label_a = "numba" if primary["using_numba"] else "numpy"
    label_b = "numba" if fallback["using_numba"] else "numpy"
    print("%-28s %12s %12s %9s" % ("kernel", label_a + " [ms]", label_b + " [ms]", "ratio"))
    print("-" * 64)
    for key in primary:
        if key == "using_numba":
            continue
        a = primary[key]
        b = fallback[key]
        print("%-28s %12.4f %12.4f %8.2fx" % (key, a, b, b / a if a else float("nan")))
    print("\n(gelu rows use the shared vectorized implementation in both modes)")


if __name__ == "__main__":
    main()
