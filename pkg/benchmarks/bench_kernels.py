"""Compare the numba and pure-numpy paths of the hot kernels.

    python benchmarks/bench_kernels.py [--repeat N] [--side S] [--samples N]

Both paths run in one process (each kernel takes a ``use_numba`` switch), the
outputs are checked for equality and the median wall time is reported.
"""

import argparse
import statistics
import time

import numpy as np

from scantex._accel import USE_NUMBA
from scantex.features.hog import feat_hog
from scantex.features.lbp import lbp_code_image
from scantex.learn import svm_fit


def _time(func, repeat):
    func()  # warm-up (includes JIT compilation or cache load)
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        func()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--side", type=int, default=256, help="image side for LBP/HOG")
    ap.add_argument("--samples", type=int, default=400, help="training samples for SMO")
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        raise SystemExit("numba is unavailable or disabled; nothing to compare")

    rng = np.random.default_rng(0)
    plane = rng.random((args.side, args.side))
    X = rng.normal(size=(args.samples, 32))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=args.samples) > 0, 1.0, -1.0)

    cases = {
        f"lbp R=1 P=8 {args.side}^2": lambda nb: lbp_code_image(plane, 1, 8, use_numba=nb),
        f"lbp R=3 P=8 {args.side}^2": lambda nb: lbp_code_image(plane, 3, 8, use_numba=nb),
        f"hog 10x12x9 {args.side}^2": lambda nb: feat_hog(plane, use_numba=nb),
        f"smo rbf n={args.samples}": lambda nb: svm_fit(X, y, 1.0, None, use_numba=nb).alpha,
    }
    print(f"{'kernel':28s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}  equal")
    for name, fn in cases.items():
        same = np.array_equal(fn(True), fn(False))
        t_nb = _time(lambda: fn(True), args.repeat)
        t_np = _time(lambda: fn(False), args.repeat)
        print(f"{name:28s} {1e3 * t_nb:11.2f} {1e3 * t_np:11.2f} {t_np / t_nb:8.1f}x  {same}")


if __name__ == "__main__":
    main()
