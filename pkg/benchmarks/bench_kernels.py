"""Compare the compiled and numpy kernel backends on warp- and fusion-sized inputs.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Both backends
are imported directly, so the environment switch is irrelevant here.
"""

import argparse
import sys
import timeit

import numpy as np

from burstlab import _pykernels

try:
    from burstlab import _ckernels
except ImportError:
    _ckernels = None


def bilinear_case(n, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.random((n, n))
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    theta = np.radians(1.0)
    sx = np.cos(theta) * xs - np.sin(theta) * ys + 0.37
    sy = np.sin(theta) * xs + np.cos(theta) * ys - 0.61
    return img, np.ascontiguousarray(sx.ravel()), np.ascontiguousarray(sy.ravel())


def splat_case(lr, s, n_frames, seed=0):
    rng = np.random.default_rng(seed)
    n = lr * lr * n_frames
    big = lr * s
    px = rng.uniform(0.0, big, n)
    py = rng.uniform(0.0, big, n)
    vals = rng.random(n)
    chan = rng.integers(0, 3, n).astype(np.int64)
    return px, py, vals, chan, big


def run_bilinear(mod, case):
    img, xs, ys = case
    return mod.bilinear_sample(img, xs, ys)


def run_splat(mod, case):
    px, py, vals, chan, big = case
    num = np.zeros((3, big, big))
    den = np.zeros((3, big, big))
    mod.splat(px, py, vals, chan, 0.7, 2.1, num, den)
    return num, den


def bench(fn, case, repeat):
    times = timeit.repeat(lambda: fn(case), number=1, repeat=repeat)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled backend not built; only the numpy timings are shown", file=sys.stderr)

    cases = [
        ("bilinear 128^2", run_bilinear, bilinear_case(128)),
        ("bilinear 512^2", run_bilinear, bilinear_case(512)),
        ("splat 32^2 x4 s=2", run_splat, splat_case(32, 2, 4)),
        ("splat 64^2 x11 s=4", run_splat, splat_case(64, 4, 11)),
    ]
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>10}{'max |diff|':>12}")
    for name, fn, case in cases:
        t_py = bench(lambda c: fn(_pykernels, c), case, args.repeat)
        if _ckernels is None:
            print(f"{name:<22}{t_py * 1e3:>12.2f}{'-':>13}{'-':>10}{'-':>12}")
            continue
        t_c = bench(lambda c: fn(_ckernels, c), case, args.repeat)
        ref = fn(_pykernels, case)
        got = fn(_ckernels, case)
        diff = max(float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
                   for a, b in zip(ref, got))
        print(f"{name:<22}{t_py * 1e3:>12.2f}{t_c * 1e3:>13.2f}{t_py / t_c:>9.1f}x{diff:>12.1e}")


if __name__ == "__main__":
    main()
