"""Time the compiled loop kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

The loop variants are only compiled when numba is importable and
COLONYSCAN_DISABLE_NUMBA is unset; otherwise they run as plain Python and the
comparison shows what the numpy fallback buys over naive loops.
"""

import argparse
import json
import time

import numpy as np

from colonyscan import BACKEND, kernels as K
from colonyscan.geoactive import SpatialIndex


def boxes(rng, n, span):
    xy = rng.uniform(0, span, (n, 2))
    return np.hstack([xy, xy + rng.uniform(5, 30, (n, 2))])


def laplace_system(h, w):
    yy, xx = np.mgrid[:h, :w]
    mask = np.hypot(yy - h / 2, xx - w / 2) < 0.45 * min(h, w)
    ys, xs = np.nonzero(mask)
    idx = -np.ones((h, w), dtype=np.int64)
    idx[ys, xs] = np.arange(len(ys))
    return np.stack([idx[ys - 1, xs], idx[ys + 1, xs], idx[ys, xs - 1], idx[ys, xs + 1]], axis=1)


def cases(rng):
    a, b = boxes(rng, 400, 2000), boxes(rng, 400, 2000)
    nbr = laplace_system(128, 128)
    rhs = rng.normal(size=len(nbr))
    cb = boxes(rng, 600, 300)
    cls = rng.integers(0, 2, 600)
    passes = rng.integers(0, 8, 600)
    order = np.argsort(-rng.uniform(size=600), kind="stable")
    cb, cls, passes = cb[order], cls[order], passes[order]
    pts = rng.uniform(0, 20000, (5000, 2))
    grid = SpatialIndex(pts, 760.0).grid
    rects = boxes(rng, 2000, 20000) + np.array([0, 0, 482, 482])
    queries = rng.uniform(0, 20000, (500, 2))
    return {
        "iou_matrix 400x400": (
            lambda: K.iou_matrix_loop(a, b), lambda: K.iou_matrix_numpy(a, b)),
        "cg_solve 128x128 disc": (
            lambda: K.cg_solve_loop(nbr, rhs, np.zeros_like(rhs), 1e-6, 10_000),
            lambda: K.cg_solve_numpy(nbr, rhs, np.zeros_like(rhs), 1e-6, 10_000)),
        "greedy_cluster 600 dets": (
            lambda: K.greedy_cluster_loop(cb, cls, passes, 8, 0.5),
            lambda: K.greedy_cluster_numpy(cb, cls, passes, 8, 0.5)),
        "radius_query 500 queries": (
            lambda: [K.radius_query_loop(q[0], q[1], 760.0, *grid) for q in queries],
            lambda: [K.radius_query_numpy(q[0], q[1], 760.0, *grid) for q in queries]),
        "rects_near_points 2000 tiles": (
            lambda: K.rects_near_points_loop(rects, 760.0, *grid),
            lambda: K.rects_near_points_numpy(rects, 760.0, *grid)),
    }


def best_of(fn, repeat):
    fn()  # warm-up, triggers compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write the timings here")
    a = p.parse_args(argv)
    loop_kind = "numba" if hasattr(K.iou_matrix_loop, "py_func") else "python"
    results = []
    print(f"active backend: {BACKEND}; loop kernels run as {loop_kind}")
    print(f"{'kernel':32s} {'loop [ms]':>10s} {'numpy [ms]':>11s} {'numpy/loop':>11s}")
    for name, (loop, vec) in cases(np.random.default_rng(a.seed)).items():
        tl, tv = best_of(loop, a.repeat), best_of(vec, a.repeat)
        results.append({"kernel": name, "loop_s": tl, "numpy_s": tv})
        print(f"{name:32s} {1e3 * tl:10.2f} {1e3 * tv:11.2f} {tv / tl:11.2f}")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump({"backend": BACKEND, "loop_kind": loop_kind, "results": results}, fh, indent=1)


if __name__ == "__main__":
    main()
