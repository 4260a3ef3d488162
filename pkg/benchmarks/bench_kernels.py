"""Compare the numba kernels against the pure-numpy fallback.

Run directly: python3 benchmarks/bench_kernels.py [--repeat N]
The numba path must be enabled (SENSORLAB_DISABLE_NUMBA unset) for the
comparison; otherwise only the numpy timings are reported.
"""

import argparse
import time

import numpy as np

from sensorlab import kernels


def _time(fn, args, repeat):
    fn(*args)  # warm up (jit compile on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    x = rng.normal(size=(72, 256))
    gy = rng.normal(size=(72, 256))
    y, rstd = kernels.layernorm_fwd_np(x, 1e-5)
    sm = kernels.softmax_fwd_np(rng.normal(size=(72, 72)))
    gsm = rng.normal(size=(72, 72))
    pred = rng.normal(size=(72, 20))
    tgt = rng.normal(size=(72, 20))
    msk = rng.random((72, 20)) < 0.5
    p = rng.normal(size=100000)
    g = rng.normal(size=100000)
    m = np.zeros(100000)
    v = np.zeros(100000)
    row = rng.normal(size=1440)
    obs = rng.random(1440) < 0.3

    cases = [
        ("gelu_fwd", "gelu_fwd", (x,)),
        ("gelu_bwd", "gelu_bwd", (x, gy)),
        ("layernorm_fwd", "layernorm_fwd", (x, 1e-5)),
        ("layernorm_bwd", "layernorm_bwd", (y, rstd, gy)),
        ("softmax_fwd", "softmax_fwd", (x,)),
        ("softmax_bwd", "softmax_bwd", (sm, gsm)),
        ("masked_sse", "masked_sse", (pred, tgt, msk.astype(np.float64))),
        ("adamw_update", "adamw_update",
         (p.copy(), g, m.copy(), v.copy(), 10, 1e-3, 0.9, 0.999, 1e-8, 1e-4)),
        ("linear_interp_fill", "linear_interp_fill", (row, obs)),
        ("nearest_fill", "nearest_fill", (row, obs)),
    ]

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (active: {kernels.backend()})")
    header = f"{'kernel':<20}" + "".join(f"{b + ' (us)':>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, name, case_args in cases:
        times = {}
        for b in backends:
            fn = kernels.get_backend(b)[name]
            times[b] = _time(fn, case_args, args.repeat)
        line = f"{label:<20}" + "".join(
            f"{times[b] * 1e6:>14.1f}" for b in backends)
        if len(backends) == 2:
            line += f"{times['numpy'] / times['numba']:>10.2f}"
        print(line)


if __name__ == "__main__":
    main()
