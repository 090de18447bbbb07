"""Time the compiled and NumPy pairwise kernels on the same inputs.

    python3 benchmarks/bench_core.py [--n 1000] [--d 2] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from klflow import _backend
from klflow.kernel import KernelSpec
from klflow.measure import Target


def cases(n, d, rng):
    x = rng.normal(size=(n, d))
    w = np.full(n, 1.0 / n)
    t = Target.gaussian(np.zeros(d), np.eye(d))
    s, jac = t.score(x), t.score_jacobian(x)
    code = KernelSpec.gaussian(1.0).code
    return {
        "gram": lambda impl: _backend.gram(x, x, *code, impl=impl),
        "grad2_sum": lambda impl: _backend.grad2_sum(x, w, x, *code, impl=impl),
        "stein_gram": lambda impl: _backend.stein_gram(x, s, x, s, *code, impl=impl),
        "stein_grad2_sum": lambda impl: _backend.stein_grad2_sum(x, w, s, jac, *code, impl=impl),
    }


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()

    impls = {"python": _backend.implementation("python")}
    try:
        impls["cython"] = _backend.implementation("cython")
    except ImportError:
        print("compiled extension not built; timing the fallback only")

    print(f"n={args.n} d={args.d}, best of {args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{k:>12}" for k in impls) + (f"{'speedup':>10}" if len(impls) > 1 else ""))
    for name, fn in cases(args.n, args.d, np.random.default_rng(0)).items():
        times = {k: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat))
                 for k, m in impls.items()}
        row = f"{name:<18}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values())
        if len(times) > 1:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
