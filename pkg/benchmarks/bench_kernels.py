"""Compiled vs numpy timings for the three hot kernels.

Run with ``python benchmarks/bench_kernels.py``; sizes mirror one half of a
5000-hypothesis side-information run.
"""

import argparse
import timeit

import numpy as np

from rhobh import _kernels_py

try:
    from rhobh import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def cases(scale):
    rng = np.random.default_rng(0)
    M = int(2500 * scale)
    centers = np.sort(rng.standard_normal(M) * 1.5)
    h = 0.25
    T, B = max(1, int(50 * scale)), 1000
    y = rng.standard_normal((T, B))
    coef = rng.random((T, M))
    pts = rng.standard_normal(int(2500 * scale))
    w = rng.random(M)
    Te = int(2500 * scale)
    samples = np.sort(rng.exponential(size=(Te, B)), axis=1)
    t = np.sort(rng.exponential(size=Te))
    return {
        f"mixture_rows      T={T} B={B} M={M}": ("mixture_rows", (y, centers, coef, h)),
        f"mixture_points    N={pts.size} M={M}": ("mixture_points", (pts, centers, w, h)),
        f"ecdf_weighted_sum T={Te} B={B} J={Te}": ("ecdf_weighted_sum",
                                                   (samples, np.ones(Te), rng.random(Te), t, 0.0, float(B))),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'kernel':<42} {'numpy [s]':>10} {'compiled [s]':>13} {'speedup':>8}")
    for label, (name, a) in cases(args.scale).items():
        py = min(timeit.repeat(lambda: getattr(_kernels_py, name)(*a), number=1, repeat=args.repeat))
        if _compiled is None:
            print(f"{label:<42} {py:>10.4f} {'n/a':>13}")
            continue
        cc = min(timeit.repeat(lambda: getattr(_compiled, name)(*a), number=1, repeat=args.repeat))
        np.testing.assert_allclose(getattr(_compiled, name)(*a), getattr(_kernels_py, name)(*a), rtol=1e-10)
        print(f"{label:<42} {py:>10.4f} {cc:>13.4f} {py / cc:>7.1f}x")


if __name__ == "__main__":
    main()
