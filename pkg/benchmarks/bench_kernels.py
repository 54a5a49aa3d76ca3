"""Time the mixture log-likelihood kernel: compiled extension against numpy.

Usage: python benchmarks/bench_kernels.py [--cells N] [--K K] [--repeat R]
"""

import argparse
import timeit

import numpy as np
from scipy.special import gammaln

from h2axdose import _pykernels


def problem(cells, K, seed=0):
    rng = np.random.default_rng(seed)
    dose = rng.uniform(0, 4, cells)
    time = rng.uniform(0.5, 24, cells)
    count = rng.poisson(10, cells).astype(float)
    data = (dose, time, count, np.ones(cells), gammaln(count + 1))
    params = (np.log(np.full(K, 1.0 / K)), rng.uniform(1, 10, K), rng.uniform(0.5, 3, K),
              rng.uniform(-0.3, 0, K), rng.uniform(-0.5, 0, K))
    return data, params


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cells", type=int, default=6000)
    parser.add_argument("--K", type=int, default=4)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    data, params = problem(args.cells, args.K)
    backends = {"python": _pykernels.mixture_loglik}
    try:
        from h2axdose import _ckernels
    except ImportError:
        print("compiled extension not built; timing numpy only")
    else:
        backends["cython"] = _ckernels.mixture_loglik
    ref = None
    for name, fn in backends.items():
        ll, _ = fn(*data, *params)
        ref = ll if ref is None else ref
        per_call = min(timeit.repeat(lambda: fn(*data, *params), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:>7}: {1e3 * per_call:8.3f} ms/call  loglik={ll:.10f}  |diff|={abs(ll - ref):.2e}")


if __name__ == "__main__":
    main()
