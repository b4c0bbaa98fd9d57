import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

import colonyscan
from colonyscan import kernels as K
from colonyscan.geoactive import SpatialIndex
from oracles import iou_xyxy, points_within


def rand_boxes(rng, n, span=50.0):
    xy = rng.uniform(0, span, (n, 2))
    wh = rng.uniform(1, 15, (n, 2))
    return np.hstack([xy, xy + wh])


def grid_system(rng, h=12, w=15):
    mask = rng.uniform(size=(h, w)) < 0.7
    mask[[0, -1], :] = False
    mask[:, [0, -1]] = False
    ys, xs = np.nonzero(mask)
    idx = -np.ones((h, w), dtype=np.int64)
    idx[ys, xs] = np.arange(len(ys))
    nbr = np.stack([idx[ys - 1, xs], idx[ys + 1, xs], idx[ys, xs - 1], idx[ys, xs + 1]], axis=1)
    return nbr


def dense_laplacian(nbr):
    n = len(nbr)
    rows, cols = np.nonzero(nbr >= 0)
    A = sp.csr_matrix((-np.ones(len(rows)), (rows, nbr[rows, cols])), shape=(n, n))
    return (A + 4 * sp.identity(n)).tocsc()


def test_backend_reported():
    assert colonyscan.BACKEND in ("numba", "numpy")
    assert (colonyscan.BACKEND == "numba") == colonyscan.NUMBA_AVAILABLE


class TestIoU:
    def test_loop_numpy_and_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rand_boxes(rng, 40), rand_boxes(rng, 30)
        lo, nu = K.iou_matrix_loop(a, b), K.iou_matrix_numpy(a, b)
        np.testing.assert_allclose(lo, nu, rtol=0, atol=1e-15)
        for i in range(0, 40, 7):
            for j in range(30):
                assert lo[i, j] == pytest.approx(iou_xyxy(a[i], b[j]), abs=1e-15)

    def test_empty(self):
        assert K.iou_matrix(np.empty((0, 4)), np.ones((3, 4))).shape == (0, 3)


class TestCG:
    def test_loop_numpy_and_direct(self):
        rng = np.random.default_rng(1)
        nbr = grid_system(rng)
        b = rng.normal(size=len(nbr))
        want = spla.spsolve(dense_laplacian(nbr), b)
        for fn in (K.cg_solve_loop, K.cg_solve_numpy):
            x, it, rel = fn(nbr, b, np.zeros_like(b), 1e-12, 10_000)
            assert rel <= 1e-12 and 0 < it <= len(b)
            np.testing.assert_allclose(x, want, atol=1e-9)

    def test_laplace_apply(self):
        rng = np.random.default_rng(2)
        nbr = grid_system(rng)
        x = rng.normal(size=len(nbr))
        np.testing.assert_allclose(K.laplace_apply(x, nbr), dense_laplacian(nbr) @ x, atol=1e-12)

    def test_zero_rhs(self):
        nbr = grid_system(np.random.default_rng(3))
        x, it, rel = K.cg_solve(nbr, np.zeros(len(nbr)), np.zeros(len(nbr)))
        assert it == 0 and rel == 0.0 and not x.any()

    def test_maxiter(self):
        rng = np.random.default_rng(4)
        nbr = grid_system(rng, 30, 30)
        _, it, rel = K.cg_solve(nbr, rng.normal(size=len(nbr)), np.zeros(len(nbr)), 1e-14, 3)
        assert it == 3 and rel > 1e-14


class TestCluster:
    def test_loop_matches_numpy(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            n = int(rng.integers(0, 25))
            boxes = rand_boxes(rng, n, 30)
            cls = rng.integers(0, 2, n)
            T = int(rng.integers(1, 6))
            passes = rng.integers(0, T, n)
            tau = float(rng.uniform(0.1, 0.9))
            a = K.greedy_cluster_loop(boxes, cls, passes, T, tau)
            b = K.greedy_cluster_numpy(boxes, cls, passes, T, tau)
            np.testing.assert_array_equal(a, b)


class TestGrid:
    def test_radius_query_both(self):
        rng = np.random.default_rng(6)
        pts = rng.uniform(0, 1000, (500, 2))
        idx = SpatialIndex(pts, 60.0)
        for q in rng.uniform(-50, 1050, (100, 2)):
            want = points_within(pts, q, 60.0)
            for fn in (K.radius_query_loop, K.radius_query_numpy):
                assert fn(q[0], q[1], 60.0, *idx.grid).tolist() == want

    def test_rects_both(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform(0, 1000, (80, 2))
        idx = SpatialIndex(pts, 40.0)
        rects = rand_boxes(rng, 200, 1000)
        for r in (5.0, 40.0, 150.0):
            a = K.rects_near_points_loop(rects, r, *idx.grid)
            b = K.rects_near_points_numpy(rects, r, *idx.grid)
            np.testing.assert_array_equal(a, b)


def test_numpy_backend_subprocess():
    code = (
        "import numpy as np, colonyscan\n"
        "from colonyscan import kernels as K\n"
        "assert colonyscan.BACKEND == 'numpy' and not colonyscan.NUMBA_AVAILABLE\n"
        "assert K.iou_matrix is not None and K._IMPL[0] is K.iou_matrix_numpy\n"
        "b = np.array([[0, 0, 2, 2], [1, 1, 3, 3.]])\n"
        "assert abs(K.iou_matrix(b, b)[0, 1] - 1 / 7) < 1e-15\n"
        "assert K.iou_matrix_loop(b, b)[0, 1] == K.iou_matrix(b, b)[0, 1]\n"
        "print('ok')\n"
    )
    env = dict(os.environ, COLONYSCAN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         timeout=120)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "ok"
