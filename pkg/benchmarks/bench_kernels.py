"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--size S]

Prints one row per kernel with the median time of each backend and the
speedup. Results are checked for agreement before timing.
"""

import argparse
import statistics
import time

import numpy as np

from hydrocube import _pykernels, kernels

try:
    from hydrocube import _ckernels
except ImportError:
    _ckernels = None


def median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(size, rng):
    a = rng.random((size, size))
    b = rng.random((size, size))
    p = rng.random((size, size)) < 0.4
    t = rng.random((size, size)) < 0.5
    small = rng.random((size // 6, size // 6))
    py = _pykernels
    c = kernels
    return [
        ("confusion", lambda: py.confusion_counts(p, t), lambda: c.confusion_counts(p, t)),
        ("tv_penalty", lambda: py.tv_penalty(a), lambda: c.tv_penalty(a)),
        ("ssim_7x7", lambda: py.ssim_mean(a, b, 7, 1e-4, 9e-4), lambda: c.ssim_mean(a, b, 7, 1e-4, 9e-4)),
        ("masked_sum", lambda: py.masked_sum(p, a), lambda: c.masked_sum(p, a)),
        ("bilinear_x6", lambda: py.bilinear_upsample(small, 6), lambda: c.bilinear_upsample(small, 6)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--size", type=int, default=512)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        raise SystemExit("compiled extension not available; build with pip install -e . first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, py_fn, c_fn in cases(args.size, rng):
        np.testing.assert_allclose(np.asarray(c_fn(), dtype=float), np.asarray(py_fn(), dtype=float), rtol=1e-12)
        tp = median_time(py_fn, args.repeat)
        tc = median_time(c_fn, args.repeat)
        print(f"{name:<12} {tp * 1e3:10.3f} {tc * 1e3:10.3f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
