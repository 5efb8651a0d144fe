"""Time each hot kernel on the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--n 20000] [--repeat 5]

The first numba call compiles (or loads the on-disk cache), so it is warmed
up before timing.  Results from both backends are compared before anything is timed.
"""

import argparse
import time

import numpy as np

from lattice import kernels


def cases(n, rng):
    codes = rng.integers(0, 3, size=(n, 5))
    x = rng.normal(size=(n, 2)).cumsum(axis=0)
    is_attack = rng.random(n) < 0.03
    pred = rng.random(n) < 0.5
    starts = np.sort(rng.choice(n - 60, size=50, replace=False))
    ends = starts + 50
    a, b = rng.normal(size=2000), rng.normal(size=2000)
    p = rng.dirichlet(np.ones(8), size=n)
    q = rng.dirichlet(np.ones(8), size=n)
    return {
        "trailing_distinct": (codes, 60),
        "trailing_noise": (x, 50),
        "attack_distance": (is_attack,),
        "span_stats": (pred, starts, ends),
        "dominance": (a, b),
        "kl_rows": (p, q, 1e-12),
    }


def best_of(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, kargs in cases(args.n, rng).items():
        nb = kernels.BACKENDS["numba"][name]
        npf = kernels.BACKENDS["numpy"][name]
        r_nb, r_np = nb(*kargs), npf(*kargs)
        pairs = zip(r_nb, r_np) if isinstance(r_nb, tuple) else [(r_nb, r_np)]
        for u, v in pairs:
            assert np.allclose(u, v, rtol=1e-12, atol=0), f"{name}: backends disagree"
        t_nb = best_of(nb, kargs, args.repeat)
        t_np = best_of(npf, kargs, args.repeat)
        print(f"{name:<18} {1e3 * t_nb:>10.3f} {1e3 * t_np:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
