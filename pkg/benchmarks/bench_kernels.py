"""Compare the jitted column-reduction kernels against the numpy fallbacks.

Run with ``python benchmarks/bench_kernels.py``. Shapes mirror the
calibration hot path: R x M score matrices with M Monte-Carlo columns.
"""

import argparse
import time

import numpy as np

from threshtest import _kernels


def _time(fn, *args, repeats=20):
    fn(*args)  # warm-up (includes jit compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if not _kernels.USE_NUMBA:
        print("numba path disabled (THRESHTEST_NO_NUMBA=1 or numba missing); "
              "nothing to compare")
        return

    rng = np.random.default_rng(0)
    shapes = [(40, 2000), (200, 2000), (40, 20000), (1000, 5000)]
    cases = [
        ("sup_abs_cols", _kernels.sup_abs_cols, _kernels.sup_abs_cols_np,
         lambda z: (z,)),
        ("block_max_norm_cols", _kernels.block_max_norm_cols,
         _kernels.block_max_norm_cols_np,
         lambda z: (z, np.arange(z.shape[0], dtype=np.int64) % 8, 8)),
        ("norm_cols", _kernels.norm_cols, _kernels.norm_cols_np,
         lambda z: (z,)),
    ]
    print(f"{'kernel':22s} {'shape':>12s} {'numba':>10s} {'numpy':>10s} "
          f"{'speedup':>8s}")
    for r, m in shapes:
        z = rng.standard_normal((r, m))
        for name, jit_fn, np_fn, make_args in cases:
            call_args = make_args(z)
            np.testing.assert_allclose(jit_fn(*call_args), np_fn(*call_args),
                                       rtol=1e-12)
            t_jit = _time(jit_fn, *call_args, repeats=args.repeats)
            t_np = _time(np_fn, *call_args, repeats=args.repeats)
            print(f"{name:22s} {f'{r}x{m}':>12s} {t_jit * 1e3:9.3f}ms "
                  f"{t_np * 1e3:9.3f}ms {t_np / t_jit:7.2f}x")


if __name__ == "__main__":
    main()
