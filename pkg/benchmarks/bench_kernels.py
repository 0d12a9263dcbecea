#!/usr/bin/env python3
"""Benchmark the compiled kernel against the NumPy fallback.

Times the two hot entry points (fused objective+gradient, per-row terms)
across problem sizes, plus one end-to-end solve per backend.  Run after an
editable install:

    python3 benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from ewtls import ErrorStructure, ObjectiveContext, ProblemData, ewtls_solve
from ewtls._kernels import available_backends, get_backend
from ewtls.simulation import build_error_structure, default_scenario, generate_dataset


def _instance(rng, m, n, d, k, shared):
    p = n + d
    J = np.arange(k, dtype=np.intp)
    C = np.ascontiguousarray(rng.standard_normal((m, p)))
    Z = np.vstack([rng.standard_normal((n, d)), -np.eye(d)])
    W = rng.standard_normal((k, k))
    base = W @ W.T + k * np.eye(k)
    if shared:
        sigma = base
    else:
        sigma = np.ascontiguousarray(
            (1.0 + rng.uniform(0, 1, m))[:, None, None] * base
        )
    return C, Z, J, sigma


def _time_call(fn, args, repeats):
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def bench_kernels(repeats: int) -> None:
    rng = np.random.default_rng(0)
    cases = [
        ("m=2000 n=2 d=1 per-row", 2000, 2, 1, 3, False),
        ("m=2000 n=3 d=2 per-row", 2000, 3, 2, 5, False),
        ("m=2000 n=3 d=2 shared ", 2000, 3, 2, 5, True),
        ("m=200  n=3 d=2 per-row", 200, 3, 2, 5, False),
        ("m=50   n=4 d=3 per-row", 50, 4, 3, 7, False),
    ]
    names = sorted(available_backends())
    print(f"backends: {', '.join(names)}   ({repeats} repeats per timing)")
    for entry in ("objective_parts", "row_terms"):
        print(f"\n{entry}:")
        header = f"  {'case':<24}" + "".join(f"{b:>14}" for b in names)
        if len(names) == 2:
            header += f"{'speedup':>10}"
        print(header)
        for label, m, n, d, k, shared in cases:
            C, Z, J, sigma = _instance(rng, m, n, d, k, shared)
            per = {}
            for b in names:
                fn = getattr(get_backend(b), entry)
                per[b] = _time_call(fn, (C, Z, J, sigma, shared, n), repeats)
            row = f"  {label:<24}" + "".join(
                f"{per[b] * 1e6:>12.1f}us" for b in names
            )
            if "compiled" in per and "numpy" in per:
                row += f"{per['numpy'] / per['compiled']:>9.1f}x"
            print(row)


def bench_solver() -> None:
    from ewtls import set_backend

    spec = default_scenario(m=2000)
    data, errors, _ = generate_dataset(spec, 0)
    print("\nend-to-end solve (default scenario, m=2000):")
    for b in sorted(available_backends()):
        set_backend(b)
        ctx = ObjectiveContext(data=data, errors=errors)
        ewtls_solve(ctx)  # warm up
        start = time.perf_counter()
        for _ in range(20):
            ewtls_solve(ctx)
        per = (time.perf_counter() - start) / 20
        print(f"  {b:<10} {per * 1e3:8.2f} ms/solve")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    bench_kernels(args.repeats)
    bench_solver()


if __name__ == "__main__":
    main()
