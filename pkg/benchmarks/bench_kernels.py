"""Time the compiled and numpy ratio-sum kernels on the same inputs.

    python benchmarks/bench_kernels.py [--sizes 500 1000 2000] [--repeat 3]
"""

import argparse
import timeit

import numpy as np

from cebound import kernels


def _inputs(n, dx, dy, seed=0):
    rng = np.random.default_rng(seed)
    X, Y = rng.uniform(size=(n, dx)), rng.uniform(-1, 1, size=(n, dy))
    return X + 0.04 * rng.normal(size=X.shape), X, Y + 0.1 * rng.normal(size=Y.shape), Y


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 2000, 4000])
    ap.add_argument("--dx", type=int, default=2)
    ap.add_argument("--dy", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled kernels are not built; timing the numpy fallback only")
    print(f"{'N':>6} {'kernel':>16} " + " ".join(f"{b:>10}" for b in backends) + "   speedup   max|diff|")
    for n in args.sizes:
        Xh, X, Yh, Y = _inputs(n, args.dx, args.dy)
        ax, ay = 1 / (2 * 0.002), 1 / (2 * 0.01)
        g = np.ones(n)
        calls = {
            "ratio_sums": lambda b: kernels.ratio_sums(Xh, X, Yh, Y, ax, ay, backend=b),
            "ratio_sums_grad": lambda b: kernels.ratio_sums_grad(
                Xh, X, Yh, Y, ax, ay, np.zeros(n), np.zeros(n), g, g, backend=b),
        }
        for name, call in calls.items():
            times, outs = [], []
            for b in backends:
                outs.append(call(b))
                times.append(min(timeit.repeat(lambda: call(b), number=1, repeat=args.repeat)))
            diff = max(float(np.max(np.abs(u - v))) for u, v in zip(outs[0], outs[-1]))
            speed = times[0] / times[-1]
            print(f"{n:>6} {name:>16} " + " ".join(f"{t * 1e3:>8.1f}ms" for t in times)
                  + f"   {speed:>6.1f}x   {diff:.1e}")


if __name__ == "__main__":
    main()
