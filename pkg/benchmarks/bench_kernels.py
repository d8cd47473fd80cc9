"""Time the compiled reduction kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--sizes 1000,10000,100000]
"""

import argparse
import timeit

import numpy as np

from causalvd import _pykernels, kernels


def _cells(n, J, K, seed=0):
    r = np.random.default_rng(seed)
    m = r.uniform(size=(n, J, K))
    pA = np.ascontiguousarray(r.dirichlet(np.ones(J), size=(n, K)).transpose(0, 2, 1))
    pZ = r.dirichlet(np.ones(K), size=n)
    return m, pA, pZ, m * (1 - m), np.full(n, 1.0 / n)


def _parts(n, J, K, seed=0):
    r = np.random.default_rng(seed)
    return (r.normal(size=n), r.normal(size=(J, K)), r.normal(size=(n, J - 1)), r.normal(size=(J - 1, K)),
            r.normal(size=(n, K - 1)), True, 0.0, np.full(n, 1.0 / n))


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", default="1000,10000,100000")
    ap.add_argument("--J", type=int, default=11)
    ap.add_argument("--K", type=int, default=4)
    args = ap.parse_args(argv)

    comp_cells = kernels.compiled_reduce_components()
    comp_std = kernels.compiled_reduce_standard()
    if comp_cells is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1

    print(f"J={args.J} K={args.K}, best of {args.repeat}")
    print(f"{'kernel':<10}{'n':>9}{'compiled ms':>14}{'numpy ms':>12}{'speedup':>10}{'max |diff|':>13}")
    for n in (int(s) for s in args.sizes.split(",")):
        for label, cfn, pfn, inputs in (
            ("cells", comp_cells, _pykernels.reduce_components, _cells(n, args.J, args.K)),
            ("standard", comp_std, _pykernels.reduce_standard, _parts(n, args.J, args.K)),
        ):
            tc = _best(lambda: cfn(*inputs), args.repeat)
            tp = _best(lambda: pfn(*inputs), args.repeat)
            diff = float(np.max(np.abs(cfn(*inputs)[0] - pfn(*inputs)[0])))
            print(f"{label:<10}{n:>9}{1e3 * tc:>14.2f}{1e3 * tp:>12.2f}{tp / tc:>10.1f}{diff:>13.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
