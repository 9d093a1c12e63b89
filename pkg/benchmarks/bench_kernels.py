"""Compare the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from margin_scenario import _kernels as K


def _time(fn, *args, repeat=5):
    fn(*args)  # warm-up (numba compiles on first call)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    n, c = 200_000, 4
    F = rng.normal(size=(n, c))
    wk = np.array([K.W_CLIP, K.W_SIN, K.W_IDENTITY, K.W_ABS], np.int64)
    wp = np.array([[0, -0.5, 0.5], [1, 0, 0], [1, 0, 0], [1, 0, 0]], float)
    # slot 0 of the operator/stage arrays is unused
    ops = np.array([0, K.OP_MAX, K.OP_PLUS, K.OP_MIN], np.int64)
    sk = np.array([K.W_IDENTITY, K.W_IDENTITY, K.W_SCALE, K.W_IDENTITY], np.int64)
    sp = np.array([[1, 0, 0], [1, 0, 0], [0.5, 0, 0], [1, 0, 0]], float)
    yield "combine_chain", K.combine_chain_numpy, K.combine_chain_numba, (F, wk, wp, ops, sk, sp)
    vals = rng.normal(size=(256, 50))
    sig = rng.choice([-1.0, 1.0], size=(1024, 50))
    yield "sup_correlations", K.sup_correlations_numpy, K.sup_correlations_numba, (vals, sig)
    pts = rng.normal(size=(2000, 100))
    yield "farthest_point", K.farthest_point_numpy, K.farthest_point_numba, (pts,)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba unavailable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, f_np, f_nb, a in cases(rng):
        t_np = _time(f_np, *a, repeat=args.repeat)
        t_nb = _time(f_nb, *a, repeat=args.repeat)
        print(f"{name:<18}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
