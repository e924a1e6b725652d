"""Ray-cast synthetic LiDAR scenes: ground plane, spheres and wall segments.

Classes: 0 ground, 1 sphere, 2 wall. Rays are cast through pixel centers
of a projection grid (optionally several per pixel along azimuth), so a
scan projected with the same grid has one point per pixel when
``azimuth_oversample == 1``.
"""
from __future__ import annotations

import math

import numpy as np

from .lidar_io import PointCloud
from .projection import ProjectionConfig

CLASS_NAMES = ("ground", "sphere", "wall")
SENSOR_HEIGHT = 1.73


def ray_directions(cfg: ProjectionConfig, azimuth_oversample: int = 1, jitter: float = 0.0, rng=None):
    """Unit directions through the pixel centers of ``cfg`` (rows x cols*oversample)."""
    H, W = cfg.height, cfg.width
    fov = cfg.fov_up - cfg.fov_down
    pitch = cfg.fov_down + (1.0 - (np.arange(H) + 0.5) / H) * fov
    cols = (np.arange(W * azimuth_oversample) + 0.5) / azimuth_oversample
    yaw = np.pi * (1.0 - 2.0 * cols / W)
    pitch, yaw = np.meshgrid(pitch, yaw, indexing="ij")
    if jitter and rng is not None:
        pitch = pitch + rng.uniform(-jitter, jitter, pitch.shape) * fov / H
        yaw = yaw + rng.uniform(-jitter, jitter, yaw.shape) * 2 * np.pi / (W * azimuth_oversample)
    d = np.stack([np.cos(pitch) * np.cos(yaw), np.cos(pitch) * np.sin(yaw), np.sin(pitch)], axis=-1)
    return d.reshape(-1, 3)


def _random_scene(rng):
    spheres = []
    for _ in range(rng.integers(6, 11)):
        dist = rng.uniform(4.0, 30.0)
        ang = rng.uniform(-np.pi, np.pi)
        rad = rng.uniform(0.8, 2.5)
        spheres.append((dist * math.cos(ang), dist * math.sin(ang), -SENSOR_HEIGHT + rad * 0.8, rad))
    walls = []
    for _ in range(rng.integers(3, 6)):
        dist = rng.uniform(6.0, 45.0)
        ang = rng.uniform(-np.pi, np.pi)
        half = rng.uniform(4.0, 15.0)
        cx, cy = dist * math.cos(ang), dist * math.sin(ang)
        tx, ty = -math.sin(ang), math.cos(ang)  # wall faces the sensor
        walls.append(((cx - half * tx, cy - half * ty), (cx + half * tx, cy + half * ty), rng.uniform(2.5, 8.0)))
    return spheres, walls


def _cast(dirs, spheres, walls, max_range):
    n = dirs.shape[0]
    t_best = np.full(n, np.inf)
    cls = np.full(n, -1, dtype=np.int64)
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dz < -1e-6, -SENSOR_HEIGHT / dz, np.inf)
    hit = t < t_best
    t_best[hit], cls[hit] = t[hit], 0
    for cx, cy, cz, r in spheres:
        c = np.array([cx, cy, cz])
        b = dirs @ c
        disc = b * b - (c @ c - r * r)
        ok = disc >= 0
        t = np.where(ok, b - np.sqrt(np.where(ok, disc, 0.0)), np.inf)
        t = np.where(t > 0, t, np.inf)
        hit = t < t_best
        t_best[hit], cls[hit] = t[hit], 1
    for (x0, y0), (x1, y1), height in walls:
        ex, ey = x1 - x0, y1 - y0
        # solve t*d_xy = p0 + s*e for (t, s)
        det = dirs[:, 0] * (-ey) - dirs[:, 1] * (-ex)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (x0 * (-ey) - y0 * (-ex)) / det
            s = (dirs[:, 0] * y0 - dirs[:, 1] * x0) / det
        z = t * dirs[:, 2]
        ok = (np.abs(det) > 1e-9) & (t > 0) & (s >= 0) & (s <= 1) & (z >= -SENSOR_HEIGHT) & (z <= height - SENSOR_HEIGHT)
        t = np.where(ok, t, np.inf)
        hit = t < t_best
        t_best[hit], cls[hit] = t[hit], 2
    keep = t_best <= max_range
    return t_best, cls, keep


def synthetic_scan(
    seed: int,
    cfg: ProjectionConfig | None = None,
    azimuth_oversample: int = 1,
    noise: float = 0.01,
    jitter: float = 0.0,
    max_range: float = 80.0,
) -> PointCloud:
    """One labeled scan of a random scene.

    ``noise`` perturbs the range of each return (meters) without moving it
    off its ray; ``jitter`` (fraction of a pixel) perturbs ray angles.
    """
    cfg = cfg or ProjectionConfig()
    rng = np.random.default_rng(seed)
    spheres, walls = _random_scene(rng)
    dirs = ray_directions(cfg, azimuth_oversample, jitter, rng)
    t, cls, keep = _cast(dirs, spheres, walls, max_range)
    t, cls, dirs = t[keep], cls[keep], dirs[keep]
    if noise:
        t = np.maximum(t + rng.normal(0.0, noise, t.shape), 0.05)
    xyz = dirs * t[:, None]
    remission = rng.uniform(0.0, 1.0, cls.shape)  # carries no class signal
    return PointCloud(xyz, remission, label=cls)


def scene_set(n_scans: int, cfg: ProjectionConfig | None = None, seed: int = 0, **kw) -> list[PointCloud]:
    return [synthetic_scan(seed + i, cfg, **kw) for i in range(n_scans)]


def cloud_of_size(n_points: int, seed: int = 0, cfg: ProjectionConfig | None = None) -> PointCloud:
    """A synthetic scan with exactly ``n_points`` returns.

    Rays are oversampled along azimuth until the scene yields enough returns,
    then a seeded random subset is kept (original order preserved).
    """
    cfg = cfg or ProjectionConfig()
    over = max(1, math.ceil(n_points / (cfg.height * cfg.width * 0.6)))
    while True:
        cloud = synthetic_scan(seed, cfg, azimuth_oversample=over)
        if cloud.n >= n_points:
            break
        over *= 2
    keep = np.sort(np.random.default_rng(seed).choice(cloud.n, n_points, replace=False))
    return PointCloud(cloud.xyz[keep], cloud.remission[keep], label=cloud.label[keep])
