"""Hot numeric kernels.

Every kernel exists twice: an explicit-loop version compiled with numba, and a
vectorised numpy version. The public name is bound to one of them at import
time according to :data:`colonyscan._accel.BACKEND`. Both are importable
directly (``*_loop`` / ``*_numpy``) so the test-suite and the benchmark can
compare them regardless of the active backend.

Box arrays are ``(n, 4)`` float64 in ``x_min, y_min, x_max, y_max`` order.
"""

import numpy as np

from ._accel import BACKEND, njit


# ---------------------------------------------------------------------------
# pairwise IoU
# ---------------------------------------------------------------------------

@njit
def iou_matrix_loop(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(m):
            iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            if iw <= 0.0:
                continue
            ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if ih <= 0.0:
                continue
            inter = iw * ih
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            out[i, j] = inter / (area_a + area_b - inter)
    return out


def iou_matrix_numpy(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=inter > 0)
    return out


# ---------------------------------------------------------------------------
# conjugate gradient on a masked 5-point Laplacian
#
# Unknowns are numbered 0..n-1; ``nbr[i]`` holds the indices of the four grid
# neighbours of unknown i, or -1 where the neighbour is a Dirichlet pixel whose
# value has already been folded into the right-hand side.
# ---------------------------------------------------------------------------

@njit
def _laplace_apply_loop(x, nbr, out):
    for i in range(x.shape[0]):
        acc = 4.0 * x[i]
        for k in range(4):
            j = nbr[i, k]
            if j >= 0:
                acc -= x[j]
        out[i] = acc


@njit
def cg_solve_loop(nbr, b, x0, rtol, maxiter):
    x = x0.copy()
    n = b.shape[0]
    ap = np.empty(n)
    _laplace_apply_loop(x, nbr, ap)
    r = b - ap
    r0 = np.sqrt(np.dot(r, r))
    if r0 == 0.0:
        return x, 0, 0.0
    p = r.copy()
    rs = np.dot(r, r)
    it = 0
    rel = 1.0
    while it < maxiter:
        _laplace_apply_loop(p, nbr, ap)
        alpha = rs / np.dot(p, ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = np.dot(r, r)
        it += 1
        rel = np.sqrt(rs_new) / r0
        if rel <= rtol:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, it, rel


def laplace_apply_numpy(x, nbr):
    padded = np.append(x, 0.0)
    return 4.0 * x - padded[nbr].sum(axis=1)


def cg_solve_numpy(nbr, b, x0, rtol, maxiter):
    x = np.array(x0, dtype=np.float64)
    r = b - laplace_apply_numpy(x, nbr)
    r0 = float(np.sqrt(r @ r))
    if r0 == 0.0:
        return x, 0, 0.0
    p = r.copy()
    rs = r @ r
    it = 0
    rel = 1.0
    while it < maxiter:
        ap = laplace_apply_numpy(p, nbr)
        alpha = rs / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = r @ r
        it += 1
        rel = float(np.sqrt(rs_new) / r0)
        if rel <= rtol:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, it, rel


def laplace_apply(x, nbr):
    """Matrix-free product with the masked Laplacian (always numpy; used for checks)."""
    return laplace_apply_numpy(np.asarray(x, dtype=np.float64), nbr)


# ---------------------------------------------------------------------------
# greedy cross-pass clustering
#
# Inputs must already be sorted in processing order. A detection joins the
# first cluster (in creation order) of its class whose founder box overlaps it
# with IoU >= tau and which has no member from the same pass yet.
# ---------------------------------------------------------------------------

@njit
def greedy_cluster_loop(boxes, classes, passes, n_passes, tau):
    n = boxes.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    founders = np.empty(n, dtype=np.int64)
    used = np.zeros((n, max(n_passes, 1)), dtype=np.bool_)
    n_clusters = 0
    for i in range(n):
        area_i = (boxes[i, 2] - boxes[i, 0]) * (boxes[i, 3] - boxes[i, 1])
        for c in range(n_clusters):
            f = founders[c]
            if classes[f] != classes[i] or used[c, passes[i]]:
                continue
            iw = min(boxes[i, 2], boxes[f, 2]) - max(boxes[i, 0], boxes[f, 0])
            ih = min(boxes[i, 3], boxes[f, 3]) - max(boxes[i, 1], boxes[f, 1])
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            area_f = (boxes[f, 2] - boxes[f, 0]) * (boxes[f, 3] - boxes[f, 1])
            if inter / (area_i + area_f - inter) >= tau:
                labels[i] = c
                used[c, passes[i]] = True
                break
        if labels[i] < 0:
            founders[n_clusters] = i
            used[n_clusters, passes[i]] = True
            labels[i] = n_clusters
            n_clusters += 1
    return labels


def greedy_cluster_numpy(boxes, classes, passes, n_passes, tau):
    n = boxes.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    founder_idx = []
    used = np.zeros((n, max(n_passes, 1)), dtype=bool)
    for i in range(n):
        if founder_idx:
            f = np.asarray(founder_idx)
            ok = (classes[f] == classes[i]) & ~used[: len(f), passes[i]]
            if ok.any():
                ious = iou_matrix_numpy(boxes[i : i + 1], boxes[f])[0]
                hits = np.flatnonzero(ok & (ious >= tau))
                if hits.size:
                    c = int(hits[0])
                    labels[i] = c
                    used[c, passes[i]] = True
                    continue
        c = len(founder_idx)
        founder_idx.append(i)
        used[c, passes[i]] = True
        labels[i] = c
    return labels


# ---------------------------------------------------------------------------
# uniform-grid point queries
#
# Points are bucketed into square cells; ``order`` lists point indices grouped
# by cell and ``offsets`` (length ncx*ncy + 1) delimits each cell's slice,
# cells numbered row-major as cy * ncx + cx.
# ---------------------------------------------------------------------------

@njit
def radius_query_loop(qx, qy, r, pts, order, offsets, x0, y0, cell, ncx, ncy):
    reach = int(np.ceil(r / cell))
    cx = int(np.floor((qx - x0) / cell))
    cy = int(np.floor((qy - y0) / cell))
    r2 = r * r
    hits = []
    for gy in range(max(cy - reach, 0), min(cy + reach, ncy - 1) + 1):
        for gx in range(max(cx - reach, 0), min(cx + reach, ncx - 1) + 1):
            c = gy * ncx + gx
            for s in range(offsets[c], offsets[c + 1]):
                p = order[s]
                dx = pts[p, 0] - qx
                dy = pts[p, 1] - qy
                if dx * dx + dy * dy <= r2:
                    hits.append(p)
    out = np.empty(len(hits), dtype=np.int64)
    for i in range(len(hits)):
        out[i] = hits[i]
    out.sort()
    return out


def radius_query_numpy(qx, qy, r, pts, order, offsets, x0, y0, cell, ncx, ncy):
    reach = int(np.ceil(r / cell))
    cx = int(np.floor((qx - x0) / cell))
    cy = int(np.floor((qy - y0) / cell))
    gys = np.arange(max(cy - reach, 0), min(cy + reach, ncy - 1) + 1)
    gxs = np.arange(max(cx - reach, 0), min(cx + reach, ncx - 1) + 1)
    if gys.size == 0 or gxs.size == 0:
        return np.empty(0, dtype=np.int64)
    cells = (gys[:, None] * ncx + gxs[None, :]).ravel()
    cand = np.concatenate([order[offsets[c] : offsets[c + 1]] for c in cells])
    if cand.size == 0:
        return np.empty(0, dtype=np.int64)
    d2 = (pts[cand, 0] - qx) ** 2 + (pts[cand, 1] - qy) ** 2
    return np.sort(cand[d2 <= r * r]).astype(np.int64)


@njit
def rects_near_points_loop(rects, r, pts, order, offsets, x0, y0, cell, ncx, ncy):
    """For each rectangle: is any indexed point within distance r of it?"""
    out = np.zeros(rects.shape[0], dtype=np.bool_)
    r2 = r * r
    for t in range(rects.shape[0]):
        rx0, ry0, rx1, ry1 = rects[t, 0], rects[t, 1], rects[t, 2], rects[t, 3]
        gx_lo = max(int(np.floor((rx0 - r - x0) / cell)), 0)
        gx_hi = min(int(np.floor((rx1 + r - x0) / cell)), ncx - 1)
        gy_lo = max(int(np.floor((ry0 - r - y0) / cell)), 0)
        gy_hi = min(int(np.floor((ry1 + r - y0) / cell)), ncy - 1)
        found = False
        for gy in range(gy_lo, gy_hi + 1):
            for gx in range(gx_lo, gx_hi + 1):
                c = gy * ncx + gx
                for s in range(offsets[c], offsets[c + 1]):
                    p = order[s]
                    dx = max(rx0 - pts[p, 0], 0.0, pts[p, 0] - rx1)
                    dy = max(ry0 - pts[p, 1], 0.0, pts[p, 1] - ry1)
                    if dx * dx + dy * dy <= r2:
                        found = True
                        break
                if found:
                    break
            if found:
                break
        out[t] = found
    return out


def rects_near_points_numpy(rects, r, pts, order, offsets, x0, y0, cell, ncx, ncy):
    out = np.zeros(rects.shape[0], dtype=bool)
    for t, (rx0, ry0, rx1, ry1) in enumerate(rects):
        gx_lo = max(int(np.floor((rx0 - r - x0) / cell)), 0)
        gx_hi = min(int(np.floor((rx1 + r - x0) / cell)), ncx - 1)
        gy_lo = max(int(np.floor((ry0 - r - y0) / cell)), 0)
        gy_hi = min(int(np.floor((ry1 + r - y0) / cell)), ncy - 1)
        if gx_lo > gx_hi or gy_lo > gy_hi:
            continue
        gys = np.arange(gy_lo, gy_hi + 1)
        gxs = np.arange(gx_lo, gx_hi + 1)
        cells = (gys[:, None] * ncx + gxs[None, :]).ravel()
        cand = np.concatenate([order[offsets[c] : offsets[c + 1]] for c in cells])
        if cand.size == 0:
            continue
        dx = np.maximum.reduce([rx0 - pts[cand, 0], np.zeros(cand.size), pts[cand, 0] - rx1])
        dy = np.maximum.reduce([ry0 - pts[cand, 1], np.zeros(cand.size), pts[cand, 1] - ry1])
        out[t] = bool(np.any(dx * dx + dy * dy <= r * r))
    return out


_IMPL = {
    "numba": (iou_matrix_loop, cg_solve_loop, greedy_cluster_loop, radius_query_loop,
              rects_near_points_loop),
    "numpy": (iou_matrix_numpy, cg_solve_numpy, greedy_cluster_numpy, radius_query_numpy,
              rects_near_points_numpy),
}[BACKEND]


def _f64(a, cols=None):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return a.reshape(-1, cols) if cols else a


def iou_matrix(a, b):
    """IoU between every box in ``a`` and every box in ``b``."""
    return _IMPL[0](_f64(a, 4), _f64(b, 4))


def cg_solve(nbr, b, x0, rtol=1e-6, maxiter=10_000):
    """Solve the masked Laplacian system; returns ``(x, iterations, rel_residual)``."""
    nbr = np.ascontiguousarray(nbr, dtype=np.int64)
    x, it, rel = _IMPL[1](nbr, _f64(b), _f64(x0), float(rtol), int(maxiter))
    return x, int(it), float(rel)


def greedy_cluster(boxes, classes, passes, n_passes, tau):
    return _IMPL[2](
        _f64(boxes, 4),
        np.ascontiguousarray(classes, dtype=np.int64),
        np.ascontiguousarray(passes, dtype=np.int64),
        int(n_passes),
        float(tau),
    )


def radius_query(qx, qy, r, grid):
    return _IMPL[3](float(qx), float(qy), float(r), *grid)


def rects_near_points(rects, r, grid):
    return _IMPL[4](_f64(rects, 4), float(r), *grid)
