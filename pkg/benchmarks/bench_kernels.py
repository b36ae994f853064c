"""Compare the numba and numpy evaluators of the monomial kernel.

Usage: python benchmarks/bench_kernels.py [--points N] [--repeat R]

Both back ends evaluate the full nonlinearity of each preset on random
field buffers; the script checks they agree and prints timings.
"""

import argparse
import time

import numpy as np

from twlab.coeffs import monomials, preset, required_derivatives
from twlab.kernels import HAVE_NUMBA, compile_terms, evaluate

CASES = [
    ("membrane", {}),
    ("chaplygin", {}),
    ("lagrangian_k", {"k": 2}),
    ("wave_maps", {"m": 3, "C": 0.5}),
]


def build(name, params, n_points, rng):
    spec = preset(name, params)
    terms = monomials(spec)
    keys = sorted(required_derivatives(terms))
    rows = {k: r for r, k in enumerate(keys)}
    ct = compile_terms(terms, rows, spec.m)
    fields = rng.standard_normal((len(keys), n_points)) * 0.1
    return ct, fields


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=512 * 512 * 3)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'case':<16}{'terms':>7}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>9}{'max diff':>11}")
    for name, params in CASES:
        ct, fields = build(name, params, args.points, rng)
        ref = evaluate(ct, fields, use_numba=False)
        t_np = best_time(lambda: evaluate(ct, fields, use_numba=False), args.repeat)
        if HAVE_NUMBA:
            got = evaluate(ct, fields, use_numba=True)  # compile outside the timing
            t_nb = best_time(lambda: evaluate(ct, fields, use_numba=True), args.repeat)
            diff = float(np.max(np.abs(got - ref)))
            print(f"{name:<16}{ct.n_terms:>7}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}{diff:>11.1e}")
        else:
            print(f"{name:<16}{ct.n_terms:>7}{t_np:>12.4f}{'n/a':>12}{'':>9}{'':>11}")


if __name__ == "__main__":
    main()
