"""Time the compiled and numpy kernel backends side by side.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick] [--json out.json]

Prints one row per (kernel, size) with the best-of-N wall time of each
backend and the speed-up of the compiled one. The conv3d rows straddle
``kernels.BLAS_CUTOVER`` so the dispatch threshold can be re-tuned.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from mpbench import kernels

# (Ci, Co, T, H, W); the product decides the dispatch route
CONV_SIZES = [
    (3, 2, 3, 4, 4),
    (6, 2, 3, 8, 8),
    (10, 10, 4, 8, 8),
    (30, 10, 12, 16, 16),
    (90, 30, 12, 16, 16),
    (555, 185, 12, 16, 16),
]
QUICK_LIMIT = 1_000_000


def best_time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeat: int, quick: bool) -> list[dict]:
    backends = {name: kernels.get_backend(name) for name in kernels.available_backends()}
    rng = np.random.default_rng(0)
    rows = []

    def record(kernel, size, work, fns):
        times = {name: best_time(fn, repeat) for name, fn in fns.items()}
        row = {"kernel": kernel, "size": size, "work": work, "seconds": times}
        if "cython" in times:
            row["speedup"] = times["python"] / times["cython"]
        rows.append(row)

    for ci, co, t, h, w in CONV_SIZES:
        work = ci * co * t * h * w
        if quick and work > QUICK_LIMIT:
            continue
        x = rng.normal(0, 1, (ci, t, h, w))
        k = rng.normal(0, 1, (co, ci, 3, 3, 3))
        b = rng.normal(0, 1, co)
        record("conv3d_forward", [ci, co, t, h, w], work,
               {n: (lambda be=be: be.conv3d_forward(x, k, b)) for n, be in backends.items()})

    for t, c, h, w in [(12, 10, 16, 16), (12, 185, 16, 16), (12, 185, 161, 281)]:
        if quick and c * h * w > 100_000:
            continue
        x = rng.normal(0, 1, (t, c, h, w))
        record("temporal_sq_diffs", [t, c, h, w], t * c * h * w,
               {n: (lambda be=be: be.temporal_sq_diffs(x)) for n, be in backends.items()})

    for n_pts, h, w in [(1, 16, 16), (8, 161, 281), (64, 161, 281)]:
        rows_, cols_ = rng.uniform(0, h, n_pts), rng.uniform(0, w, n_pts)
        record("gaussian_mask_sum", [n_pts, h, w], n_pts * h * w,
               {n: (lambda be=be: be.gaussian_mask_sum(rows_, cols_, 2.0, h, w)) for n, be in backends.items()})
    return rows


def print_table(rows: list[dict]) -> None:
    print(f"active backend: {kernels.BACKEND}; conv3d BLAS cutover at Ci*Co*T*H*W >= {kernels.BLAS_CUTOVER:,}")
    header = f"{'kernel':<20}{'size':<26}{'work':>14}{'cython s':>12}{'numpy s':>12}{'speedup':>9}  route"
    print(header)
    print("-" * len(header))
    for r in rows:
        cy = r["seconds"].get("cython")
        py = r["seconds"]["python"]
        route = ""
        if r["kernel"] == "conv3d_forward":
            route = "numpy" if r["work"] >= kernels.BLAS_CUTOVER else kernels.BACKEND
        size = "x".join(map(str, r["size"]))
        cy_s = f"{cy:.4f}" if cy is not None else "-"
        sp_s = f"{r['speedup']:.2f}x" if "speedup" in r else "-"
        print(f"{r['kernel']:<20}{size:<26}{r['work']:>14,}{cy_s:>12}{py:>12.4f}{sp_s:>9}  {route}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="skip the largest sizes")
    ap.add_argument("--json", help="also write the raw timings here")
    args = ap.parse_args(argv)
    rows = run(args.repeat, args.quick)
    print_table(rows)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
