"""Compare the compiled MLP kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``.  Reports the median wall
time of a forward+backward pass for a few batch sizes, plus the largest
absolute difference between the two backends' outputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from robrecourse import _kernels_py, kernels


def _time(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return float(np.median(times))


def bench(impl, X, Ws, bs, repeats):
    def step():
        out, acts = impl.mlp_forward(X, Ws, bs, "tanh")
        impl.mlp_backward(np.ones_like(out), X, Ws, acts, "tanh", True, True)

    return _time(step, repeats)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--sizes", default="1,16,100,1000")
    p.add_argument("--repeats", type=int, default=50)
    args = p.parse_args(argv)
    try:
        from robrecourse import _kernels as compiled
    except ImportError:
        print("compiled kernels not built; only the numpy fallback is available")
        compiled = None
    rng = np.random.default_rng(0)
    sizes = [7, 32, 32, 1]
    Ws = [rng.normal(size=(a, b)) / np.sqrt(a) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [rng.normal(size=b) for b in sizes[1:]]
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'batch':>6} {'numpy [us]':>12} {'cython [us]':>12} {'speedup':>8} {'max |diff|':>11}")
    for B in (int(s) for s in args.sizes.split(",")):
        X = rng.normal(size=(B, sizes[0]))
        t_py = bench(_kernels_py, X, Ws, bs, args.repeats)
        if compiled is None:
            print(f"{B:>6} {t_py * 1e6:>12.1f} {'-':>12} {'-':>8} {'-':>11}")
            continue
        t_c = bench(compiled, X, Ws, bs, args.repeats)
        diff = np.max(np.abs(compiled.mlp_forward(X, Ws, bs, "tanh")[0] - _kernels_py.mlp_forward(X, Ws, bs, "tanh")[0]))
        print(f"{B:>6} {t_py * 1e6:>12.1f} {t_c * 1e6:>12.1f} {t_py / t_c:>8.2f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
