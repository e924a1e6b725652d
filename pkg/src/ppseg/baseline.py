"""Point-domain reference machinery: farthest point sampling, brute-force ball
query and k-nearest inverse-distance interpolation.

These serve as correctness oracles for the projected operators and as the
opponent in :func:`bench_compare`.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels


def fps(points: np.ndarray, m: int, backend: str | None = None) -> np.ndarray:
    """Greedy farthest point sampling seeded at index 0; ties go to the lowest index."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not 1 <= m <= points.shape[0]:
        raise ValueError(f"fps: cannot pick {m} of {points.shape[0]} points")
    return kernels.get(backend).fps(points, int(m))


def ball_query(points: np.ndarray, center: np.ndarray, radius: float, backend: str | None = None) -> np.ndarray:
    """Indices of all points within ``radius`` of ``center`` (inclusive)."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    _, idx = kernels.get(backend).ball_query(np.asarray(points, dtype=np.float64), np.asarray(center).reshape(1, 3), radius)
    return idx


def ball_query_batch(points, centers, radius, backend: str | None = None) -> list[np.ndarray]:
    offsets, idx = kernels.get(backend).ball_query(np.asarray(points, dtype=np.float64), centers, radius)
    return [idx[offsets[i] : offsets[i + 1]] for i in range(len(offsets) - 1)]


def idw_interpolate(src_xyz, src_feat, dst_xyz, k: int = 3, p: float = 2.0, eps: float = 1e-8) -> np.ndarray:
    """Inverse-distance weighted interpolation from the ``k`` nearest sources."""
    from scipy.spatial import cKDTree

    src_feat = np.asarray(src_feat, dtype=np.float64)
    k = min(k, len(src_xyz))
    d, idx = cKDTree(src_xyz).query(dst_xyz, k=k)
    d, idx = d.reshape(len(dst_xyz), k), idx.reshape(len(dst_xyz), k)
    w = 1.0 / np.maximum(d, eps) ** p
    w /= w.sum(axis=1, keepdims=True)
    return np.einsum("nk,nkc->nc", w, src_feat[idx])


@dataclass
class BenchRow:
    method: str
    n: int
    m: int
    k: int
    median_ms: float
    backend: str = ""

    FIELDS = ("method", "n", "M", "k", "median_ms", "backend")

    def as_list(self):
        return [self.method, self.n, self.m, self.k, f"{self.median_ms:.4f}", self.backend]


def _median_ms(fn, reps: int) -> float:
    times = []
    for _ in range(max(1, reps)):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def bench_compare(
    cloud,
    configs: Iterable[dict],
    reps: int = 5,
    backend: str | None = None,
    include_baseline: bool = True,
) -> list[BenchRow]:
    """Time point-domain sampling+grouping against the projected path.

    Each config holds ``height``, ``width``, ``out_height``, ``out_width``,
    ``k`` and ``radius``. Projection itself is not timed: it is shared
    preprocessing for the projected method.
    """
    from .grouping import GroupingConfig, group
    from .projection import ProjectionConfig, project
    from .sampling import SampleGrid, sample

    be = kernels.get(backend)
    be_name = backend or kernels.BACKEND
    rows = []
    for cfg in configs:
        image = project(cloud, ProjectionConfig(cfg["height"], cfg["width"]))
        grid = SampleGrid(cfg["height"], cfg["width"], cfg["out_height"], cfg["out_width"])
        gcfg = GroupingConfig(cfg["k"], cfg["radius"])
        xyz = image.xyz

        def projected():
            s = sample(image.valid, grid, backend)
            group(xyz, image.valid, s, gcfg, backend=backend)

        rows.append(BenchRow("projected", cloud.n, grid.m, gcfg.k, _median_ms(projected, reps), be_name))
        if include_baseline:
            pts = cloud.xyz

            def point_based():
                idx = be.fps(pts, grid.m)
                be.ball_query(pts, pts[idx], gcfg.radius)

            rows.append(BenchRow("fps+ball_query", cloud.n, grid.m, gcfg.k, _median_ms(point_based, reps), be_name))
    return rows


def rows_to_csv(rows: Iterable[BenchRow], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BenchRow.FIELDS)
    for r in rows:
        w.writerow(r.as_list())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def pick_grid(height: int, width: int, m: int) -> tuple[int, int]:
    """Coarse grid with ``m`` cells and integral strides over ``height x width``,
    preferring strides of similar size."""
    best = None
    for oh in range(1, height + 1):
        if height % oh or m % oh:
            continue
        ow = m // oh
        if ow > width or width % ow:
            continue
        score = abs(np.log((height // oh) / (width // ow)))
        if best is None or score < best[0]:
            best = (score, oh, ow)
    if best is None:
        raise ValueError(f"no grid of {m} cells divides {height}x{width}")
    return best[1], best[2]


def bench_backends(cloud, height: int, width: int, m: int, k: int, radius: float, reps: int = 5):
    """Median time of each projected-path kernel per available backend.

    Returns rows ``(kernel, backend, median_ms)``.
    """
    from .grouping import window_index
    from .projection import ProjectionConfig, project
    from .sampling import SampleGrid, sample

    image = project(cloud, ProjectionConfig(height, width))
    grid = SampleGrid(height, width, *pick_grid(height, width, m))
    xyz_flat = np.ascontiguousarray(image.xyz.reshape(-1, 3))
    rows = []
    for name, be in kernels.backends().items():
        s = sample(image.valid, grid, name)
        idx, sv = window_index(image.valid, s, k, backend=name)
        ov, ou = grid.offset
        jobs = {
            "sample_grid": lambda: be.sample_grid(image.valid, grid.stride_v, grid.stride_u, ov, ou),
            "window_index": lambda: window_index(image.valid, s, k, backend=name),
            "localize": lambda: be.localize(xyz_flat, idx, sv, s.center_index, radius),
        }
        for kname, fn in jobs.items():
            rows.append((kname, name, _median_ms(fn, reps)))
    return rows
