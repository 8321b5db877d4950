#!/usr/bin/env python3
"""Compare the numba kernels with the numpy fallback.

Times the two ray kernels directly, then one d=3 QE operator call end to end
in fresh interpreters with and without QEFPINN_DISABLE_NUMBA.

    python3 bench/bench_kernels.py [--points 100] [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

END_TO_END = """
import json, sys, timeit
import numpy as np
from qefpinn import _accel
from qefpinn.benchmarks import ball_pair
from qefpinn.fraclap import FracLapConfig, frac_laplacian
from qefpinn.geometry import UnitBall
from qefpinn.rng import stream

n, repeat = int(sys.argv[1]), int(sys.argv[2])
u, _ = ball_pair(1, 3, 1.5)
ball = UnitBall(3)
xs = ball.sample_interior(n, stream(0, "bench"))
cfg = FracLapConfig(alpha=1.5)
call = lambda: frac_laplacian("qe", u, xs, None, ball, cfg, stream(1, "bench"))
value = call()  # compile
best = min(timeit.repeat(call, number=1, repeat=repeat))
print(json.dumps({"backend": _accel.backend(), "seconds": best, "checksum": float(value.sum())}))
"""


def kernel_args(n, m, k, rng):
    xs = rng.uniform(-0.5, 0.5, (n, 3))
    dirs = rng.standard_normal((m, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    coefs = rng.standard_normal((2, 3))
    return (
        np.sum(xs * xs, 1),
        xs @ dirs.T,
        xs @ coefs.T,
        dirs @ coefs.T,
        rng.uniform(0, 1.5, (n, m, k)),
        np.array([0.75, 1.75]),
        rng.standard_normal(2),
    )


def bench_kernels(n, repeat):
    from qefpinn import _accel

    if not _accel.NUMBA_AVAILABLE:
        print("numba unavailable; kernel comparison skipped")
        return
    rng = np.random.default_rng(0)
    args = kernel_args(n, 256, 10, rng)
    pairs = {
        "ray_profile_values": (_accel._ray_profile_values_jit, _accel.ray_profile_values_numpy, args),
    }
    vals = _accel.ray_profile_values(*args)
    u0 = rng.standard_normal(n)
    w = rng.uniform(0, 1, vals.shape)
    pairs["weighted_ray_sum"] = (_accel._weighted_ray_sum_jit, _accel.weighted_ray_sum_numpy, (u0, vals, w))
    print(f"{'kernel':22s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s} {'max diff':>9s}")
    for name, (jit, ref, a) in pairs.items():
        jit(*a)
        t_jit = min(timeit.repeat(lambda: jit(*a), number=1, repeat=repeat))
        t_ref = min(timeit.repeat(lambda: ref(*a), number=1, repeat=repeat))
        diff = float(np.max(np.abs(jit(*a) - ref(*a))))
        print(f"{name:22s} {1e3 * t_jit:11.2f} {1e3 * t_ref:11.2f} {t_ref / t_jit:8.2f} {diff:9.1e}")


def bench_end_to_end(n, repeat):
    out = {}
    for disabled in ("0", "1"):
        env = dict(os.environ, QEFPINN_DISABLE_NUMBA=disabled)
        proc = subprocess.run(
            [sys.executable, "-c", END_TO_END, str(n), str(repeat)], env=env, capture_output=True, text=True, check=True
        )
        res = json.loads(proc.stdout)
        out[res["backend"]] = res
    print()
    print(f"QE operator, d=3, {n} points, default counts")
    for name, res in out.items():
        print(f"  {name:6s} {res['seconds']:.4f}s  checksum {res['checksum']:.12e}")
    if len(out) == 2:
        print(f"  speedup {out['numpy']['seconds'] / out['numba']['seconds']:.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=100)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    bench_kernels(args.points, args.repeat)
    bench_end_to_end(args.points, args.repeat)


if __name__ == "__main__":
    main()
