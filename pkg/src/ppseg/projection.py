"""Spherical range-image projection of a LiDAR scan."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lidar_io import PointCloud

CHANNELS = ("x", "y", "z", "range", "remission")


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass(frozen=True)
class ProjectionConfig:
    height: int = 64
    width: int = 512
    fov_up: float = math.radians(3.0)
    fov_down: float = math.radians(-25.0)

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ConfigError(f"projection size must be positive, got {self.height}x{self.width}")
        if not self.fov_up > self.fov_down:
            raise ConfigError("fov_up must exceed fov_down")

    @classmethod
    def from_degrees(cls, height=64, width=512, fov_up_deg=3.0, fov_down_deg=-25.0):
        return cls(int(height), int(width), math.radians(fov_up_deg), math.radians(fov_down_deg))


@dataclass
class RangeImage:
    """Projected scan.

    ``channels`` is (5, H, W) with x, y, z, range, remission; ``pix2pt``
    holds the winning point per pixel (-1 where empty) and ``pt2pix`` the
    (row, col) every input point maps to.
    """

    channels: np.ndarray
    valid: np.ndarray
    pix2pt: np.ndarray
    pt2pix: np.ndarray
    skipped: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    @property
    def xyz(self) -> np.ndarray:
        """(H, W, 3) coordinates, channel-last."""
        return np.ascontiguousarray(np.moveaxis(self.channels[:3], 0, -1))

    @property
    def range(self) -> np.ndarray:
        return self.channels[3]

    @property
    def remission(self) -> np.ndarray:
        return self.channels[4]

    def pixel_labels(self, labels: np.ndarray, ignore: int = -1) -> np.ndarray:
        """Per-pixel labels taken from each pixel's winning point."""
        out = np.full(self.shape, ignore, dtype=np.int64)
        out[self.valid] = labels[self.pix2pt[self.valid]]
        return out


def pixel_coords(xyz: np.ndarray, cfg: ProjectionConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row/column of each point and its range, before any collision handling.

    Zero-range points get the pixel of pitch 0, azimuth 0.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    safe_r = np.where(r > 0, r, 1.0)
    yaw = np.arctan2(y, x)
    pitch = np.arcsin(np.clip(z / safe_r, -1.0, 1.0))
    fov = cfg.fov_up - cfg.fov_down
    u = np.floor(0.5 * (1.0 - yaw / np.pi) * cfg.width)
    v = np.floor((1.0 - (pitch - cfg.fov_down) / fov) * cfg.height)
    u = np.clip(u, 0, cfg.width - 1).astype(np.int64)
    v = np.clip(v, 0, cfg.height - 1).astype(np.int64)
    return v, u, r


def project(cloud: PointCloud, cfg: ProjectionConfig) -> RangeImage:
    """Project ``cloud``; on pixel collisions the nearest point wins."""
    H, W = cfg.height, cfg.width
    if not (np.all(np.isfinite(cloud.xyz)) and np.all(np.isfinite(cloud.remission))):
        raise ValueError("point cloud contains non-finite values")
    v, u, r = pixel_coords(cloud.xyz, cfg)
    keep = np.flatnonzero(r > 0)
    flat = v[keep] * W + u[keep]
    # per pixel: nearest point first, equal ranges resolved by lower index
    order = np.lexsort((keep, r[keep], flat))
    flat_sorted = flat[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    pix2pt = np.full(H * W, -1, dtype=np.int64)
    pix2pt[flat_sorted[first]] = keep[order[first]]
    pix2pt = pix2pt.reshape(H, W)
    valid = pix2pt >= 0
    channels = np.zeros((5, H, W))
    win = pix2pt[valid]
    channels[:3, valid] = cloud.xyz[win].T
    channels[3, valid] = r[win]
    channels[4, valid] = cloud.remission[win]
    return RangeImage(channels, valid, pix2pt, np.stack([v, u], axis=1), skipped=int(cloud.n - keep.size))


def unproject(image: RangeImage, pixel_preds: np.ndarray) -> np.ndarray:
    """Per-point predictions read from each point's pixel."""
    pixel_preds = np.asarray(pixel_preds)
    if pixel_preds.shape != image.shape:
        raise ValueError(f"pixel predictions {pixel_preds.shape} do not match image {image.shape}")
    return pixel_preds[image.pt2pix[:, 0], image.pt2pix[:, 1]]
