"""Benchmark: compiled recurrence kernel vs the pure-numpy fallback.

The scan is the only sequential part of a sequence run, so it dominates
trace generation, retention probes, and guarded decoding.  This script
times both backends on the same inputs, checks they agree numerically, and
reports the speedup.

    python benchmarks/bench_scan.py [--tokens 20000] [--layers 8] [--d-state 32]
"""

import argparse
import time

import numpy as np

from ssmguard import _scan_py

try:
    from ssmguard import _scan_cy
except ImportError:
    _scan_cy = None


def make_inputs(tokens, layers, d_state, seed=0):
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.05, 0.999, (tokens, layers, d_state))
    beta = 0.1 * rng.standard_normal((tokens, layers, d_state))
    base = rng.standard_normal((tokens, layers))
    mix = rng.standard_normal((layers, layers)) / layers
    c = rng.standard_normal((layers, d_state)) / np.sqrt(d_state)
    h0 = np.zeros((layers, d_state))
    return alpha, beta, base, mix, c, h0


def time_backend(fn, inputs, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn(*inputs)
        best = min(best, time.perf_counter() - start)
    return best, out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--tokens", type=int, default=20_000)
    parser.add_argument("--layers", type=int, default=8)
    parser.add_argument("--d-state", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    inputs = make_inputs(args.tokens, args.layers, args.d_state)
    shape = f"T={args.tokens} L={args.layers} d={args.d_state}"

    t_py, (h_py, y_py) = time_backend(_scan_py.scan, inputs, args.repeats)
    print(f"pure-python scan   {shape}: {t_py * 1e3:9.1f} ms "
          f"({args.tokens / t_py:,.0f} tokens/s)")

    if _scan_cy is None:
        print("compiled scan      not built (pip install -e . with a C "
              "compiler and Cython)")
        return

    t_cy, (h_cy, y_cy) = time_backend(_scan_cy.scan, inputs, args.repeats)
    print(f"compiled scan      {shape}: {t_cy * 1e3:9.1f} ms "
          f"({args.tokens / t_cy:,.0f} tokens/s)")

    h_err = float(np.max(np.abs(h_py - h_cy)))
    y_err = float(np.max(np.abs(y_py - y_cy)))
    agree = h_err < 1e-12 and y_err < 1e-12
    print(f"agreement          max|dh|={h_err:.2e} max|dy|={y_err:.2e} "
          f"{'OK' if agree else 'MISMATCH'}")
    print(f"speedup            {t_py / t_cy:.1f}x")
    if not agree:
        raise SystemExit(2)


if __name__ == "__main__":
    main()
