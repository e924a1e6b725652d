"""The compiled and numpy kernels must agree exactly."""
import numpy as np
import pytest

from ppseg import kernels

pytestmark = pytest.mark.skipif("cython" not in kernels.backends(), reason="compiled kernels not built")
PY = kernels.python_backend


@pytest.fixture(scope="module")
def CY():
    return kernels.get("cython")


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return a.dtype == b.dtype and np.array_equal(a, b)


def test_backend_selection():
    assert kernels.BACKEND in kernels.backends()
    assert kernels.get("python") is PY
    with pytest.raises(ValueError):
        kernels.get("fortran")


def test_fps_and_ball_query(CY):
    rng = np.random.default_rng(0)
    for _ in range(20):
        pts = rng.normal(size=(int(rng.integers(1, 300)), 3))
        pts[rng.random(len(pts)) < 0.1] = 0.0  # duplicates
        m = int(rng.integers(1, len(pts) + 1))
        assert _same(PY.fps(pts, m), CY.fps(pts, m))
        centers = pts[rng.integers(0, len(pts), 5)]
        assert _same(PY.ball_query(pts, centers, 0.7), CY.ball_query(pts, centers, 0.7))


def test_grid_window_localize(CY):
    rng = np.random.default_rng(1)
    for _ in range(60):
        sv, su = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        Hc, Wc = int(rng.integers(1, 6)), int(rng.integers(1, 8))
        H, W = Hc * sv, Wc * su
        valid = rng.random((H, W)) < rng.uniform(0.2, 1.0)
        ov, ou = int(rng.integers(sv)), int(rng.integers(su))
        g = PY.sample_grid(valid, sv, su, ov, ou)
        assert _same(g, CY.sample_grid(valid, sv, su, ov, ou))
        k = int(rng.choice([1, 3, 5]))
        dv, du = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        wi = PY.window_index(H, W, valid, *g, k, dv, du)
        assert _same(wi, CY.window_index(H, W, valid, *g, k, dv, du))
        xyz = rng.normal(size=(H * W, 3))
        cidx = g[0] * W + g[1]
        assert _same(PY.localize(xyz, *wi, cidx, 1.0), CY.localize(xyz, *wi, cidx, 1.0))
        fv, fu = np.divmod(np.arange(H * W), W)
        assert _same(PY.nearest_coarse(fv, fu, g[2], sv, su, ov, ou), CY.nearest_coarse(fv, fu, g[2], sv, su, ov, ou))


def test_knn_refine(CY):
    rng = np.random.default_rng(2)
    for _ in range(30):
        H, W = int(rng.integers(1, 8)), int(rng.integers(1, 12))
        rg = np.round(rng.uniform(1, 5, (H, W)), 1)  # coarse values force ties
        valid = rng.random((H, W)) < 0.8
        n_cls = int(rng.integers(1, 5))
        pred = rng.integers(0, n_cls, (H, W))
        n = int(rng.integers(0, 40))
        pv, pu = rng.integers(0, H, n), rng.integers(0, W, n)
        prange = np.round(rng.uniform(1, 5, n), 1)
        base = pred[pv, pu]
        w = int(rng.choice([1, 3, 5]))
        k = int(rng.integers(1, w * w + 1))
        sigma = float(rng.uniform(0.1, 3))
        args = (rg, valid, pred, pv, pu, prange, base, w, k, sigma, n_cls)
        assert _same(PY.knn_refine(*args), CY.knn_refine(*args))
