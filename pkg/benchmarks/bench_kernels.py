#!/usr/bin/env python3
"""Benchmark the compiled simulation core against the NumPy fallback.

Times the two hot kernels on preset-sized workloads and prints a table.

    python benchmarks/bench_kernels.py [--trials 100] [--horizon 3000]
"""

import argparse
import time

import numpy as np

from twoswitch._kernels import _numpy_impl

try:
    from twoswitch._kernels import _core
except ImportError:
    _core = None

CART_A = np.array([
    [1.0000, 0.0000, 0.0010, -0.0000],
    [0.0000, 1.0000, -0.0000, 0.0010],
    [0.0000, 0.0022, 0.9842, -0.0000],
    [0.0000, 0.0278, -0.0363, 0.9999],
])
CART_B = np.array([[0.0], [0.0], [0.0023], [0.0052]])
CART_F = np.array([[-13.9382, 173.6752, -29.9030, 18.4750]])
C2 = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])


def workloads(trials, horizon, seed=0):
    rng = np.random.default_rng(seed)
    s_t = (rng.random((trials, horizon)) < 0.75).astype(np.uint8)
    s_r = (rng.random((trials, horizon)) < 0.7).astype(np.uint8)
    open_kw = dict(
        A=CART_A, C=C2, V=0.01 * np.eye(4), W=1e-3 * np.eye(2),
        x1=np.array([1.0, 0.2, 0.0, 0.0]), xhat1=np.zeros(4), P1=np.eye(4),
        p_seq=np.full(horizon, 0.8), s_t=s_t, s_r=s_r,
        v_noise=0.1 * rng.standard_normal((trials, horizon, 4)),
        w_noise=np.sqrt(1e-3) * rng.standard_normal((trials, horizon, 2)),
    )
    closed_kw = dict(
        A=CART_A, B=CART_B, C=C2, V=np.array([[0.01]]), W=1e-3 * np.eye(2),
        F=CART_F, u_ff=np.full((horizon, 1), 0.05),
        x1=np.zeros(4), xhat1=np.zeros(4), P1=1e-4 * np.eye(4),
        p_seq=np.full(horizon, 0.8), pd0_seq=np.full(horizon, 0.36),
        s_t=s_t, s_r=s_r,
        v_noise=0.1 * rng.standard_normal((trials, horizon, 1)),
        w_noise=np.sqrt(1e-3) * rng.standard_normal((trials, horizon, 2)),
    )
    return open_kw, closed_kw


def bench(fn, kw, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(**kw)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--trials", type=int, default=100)
    parser.add_argument("--horizon", type=int, default=3000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    open_kw, closed_kw = workloads(args.trials, args.horizon)
    steps = args.trials * args.horizon

    print(f"workload: {args.trials} trials x {args.horizon} steps "
          f"({steps:,} filter steps), best of {args.repeats}")
    print(f"{'kernel':<14} {'backend':<10} {'seconds':>9} {'ns/step':>9} {'speedup':>8}")

    for name, np_fn, c_fn, kw in (
        ("open-loop", _numpy_impl.simulate_open_loop,
         getattr(_core, "simulate_open_loop", None), open_kw),
        ("closed-loop", _numpy_impl.simulate_closed_loop,
         getattr(_core, "simulate_closed_loop", None), closed_kw),
    ):
        t_np = bench(np_fn, kw, args.repeats)
        print(f"{name:<14} {'numpy':<10} {t_np:9.3f} {1e9 * t_np / steps:9.0f} {'1.0x':>8}")
        if c_fn is not None:
            t_c = bench(c_fn, kw, args.repeats)
            print(f"{name:<14} {'compiled':<10} {t_c:9.3f} "
                  f"{1e9 * t_c / steps:9.0f} {t_np / t_c:7.1f}x")
        else:
            print(f"{name:<14} {'compiled':<10} {'not built':>9}")


if __name__ == "__main__":
    main()
