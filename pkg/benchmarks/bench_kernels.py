"""Compare the numba and numpy kernel backends on synthetic CSR data.

The library picks its backend at import time (FOOTCLOAK_DISABLE_NUMBA=1
forces the numpy path); this script compiles both in one process, checks
that they agree to floating-point roundoff, and reports best-of-N wall
times per kernel.

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --users 20000 --items 10000 --repeats 7
"""

import argparse
import time

import numpy as np

from footcloak._kernels import _LOOP_IMPLS, _NUMPY_IMPLS

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def make_csr(rng, n_users, n_items, density):
    rows = []
    for _ in range(n_users):
        deg = max(1, rng.binomial(n_items, density))
        rows.append(np.sort(rng.choice(n_items, size=deg, replace=False)))
    indptr = np.zeros(n_users + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    indices = np.concatenate(rows).astype(np.int64)
    return indptr, indices


def best_of(fn, args, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--users", type=int, default=10000)
    parser.add_argument("--items", type=int, default=8000)
    parser.add_argument("--density", type=float, default=0.02)
    parser.add_argument("--k", type=int, default=50, help="component count")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    indptr, indices = make_csr(rng, args.users, args.items, args.density)
    weights = rng.normal(0.0, 1.0, args.items)
    row_values = rng.normal(0.0, 1.0, args.users)
    W = rng.random((args.users, args.k))
    H = rng.random((args.k, args.items))

    calls = {
        "row_margins": (indptr, indices, weights, 0.25),
        "scatter_add_rows": (indptr, indices, row_values, args.items),
        "component_col_sums": (indptr, indices, W, args.items),
        "row_component_sums": (indptr, indices, H),
    }

    print(
        f"{args.users} users x {args.items} items, nnz={len(indices)}, "
        f"k={args.k}, best of {args.repeats}"
    )
    if not HAVE_NUMBA:
        print("numba not installed; reporting the numpy backend only")

    header = f"{'kernel':<22}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, call_args in calls.items():
        t_np, out_np = best_of(_NUMPY_IMPLS[name], call_args, args.repeats)
        if HAVE_NUMBA:
            jitted = njit(cache=True)(_LOOP_IMPLS[name])
            jitted(*call_args)  # compile outside the timed region
            t_nb, out_nb = best_of(jitted, call_args, args.repeats)
            diff = float(np.max(np.abs(out_np - out_nb)))
            scale = float(np.max(np.abs(out_np))) or 1.0
            if diff > 1e-9 * scale:
                raise SystemExit(f"{name}: backends disagree (max diff {diff:g})")
            print(
                f"{name:<22}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}"
                f"{t_np / t_nb:>8.1f}x"
            )
        else:
            print(f"{name:<22}{t_np * 1e3:>12.2f}{'-':>12}{'-':>9}")


if __name__ == "__main__":
    main()
