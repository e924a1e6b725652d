"""Windowed radius grouping on the range image.

Around every sampled point a k x k window of fine pixels is unfolded (rows
clamped, columns wrapping around the azimuth ring, window dilated by the
sampling strides). The neighbors are converted to local coordinates and
masked by a 3D radius; the inverse-distance and inverse-density maps used
later by feature propagation and the density-gated variant are computed here
once.

Layout is channel-last: slot tensors are (H', W', k*k[, C]).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .projection import ConfigError
from .sampling import Sampled
from .tensor import Tensor, concat, gather_rows, reshape

EPS = 1e-8


@dataclass(frozen=True)
class GroupingConfig:
    k: int = 5
    radius: float = 1.0
    sigma: float | None = None  # density bandwidth, defaults to radius / 2

    def __post_init__(self):
        if self.k <= 0 or self.k % 2 == 0:
            raise ConfigError(f"window size k must be odd and positive, got {self.k}")
        if not self.radius > 0:
            raise ConfigError("radius must be positive")
        if self.sigma is None:
            object.__setattr__(self, "sigma", self.radius / 2)
        if not self.sigma > 0:
            raise ConfigError("density bandwidth must be positive")


@dataclass
class NeighborhoodBundle:
    sampled: Sampled
    k: int
    dilation: tuple[int, int]
    slot_index: np.ndarray  # (H', W', k2) flat fine index (row-clamped)
    slot_valid: np.ndarray  # (H', W', k2) neighbor in image, valid, center valid
    local: np.ndarray  # (H', W', k2, 3) neighbor minus center, meters
    dist: np.ndarray  # (H', W', k2)
    mask: np.ndarray  # (H', W', k2) bool
    inv_dist: np.ndarray  # (H', W', k2)
    inv_density: np.ndarray  # (H', W')
    radius: float = 1.0

    @property
    def fine_shape(self) -> tuple[int, int]:
        return self.sampled.grid.height, self.sampled.grid.width

    @property
    def coarse_shape(self) -> tuple[int, int]:
        return self.sampled.valid.shape

    @property
    def center_valid(self) -> np.ndarray:
        return self.sampled.valid

    @property
    def center_slot(self) -> int:
        return (self.k * self.k) // 2


def window_index(valid: np.ndarray, sampled: Sampled, k: int, dilation=None, backend=None):
    """Flat fine-pixel index and validity of every window slot."""
    if k <= 0 or k % 2 == 0:
        raise ConfigError(f"window size k must be odd and positive, got {k}")
    dv, du = sampled.grid.strides if dilation is None else dilation
    H, W = valid.shape
    return kernels.get(backend).window_index(
        H, W, valid, sampled.center_v, sampled.center_u, sampled.valid, k, dv, du
    )


def unfold(features, bundle: NeighborhoodBundle, coords: np.ndarray | None = None) -> Tensor:
    """Gather window features: (H, W, C) -> F_in (H', W', k2, C [+3]).

    ``coords`` (H, W, 3), when given, is appended as the last three channels.
    Invalid slots are zero.
    """
    H, W = bundle.fine_shape
    feats = features if isinstance(features, Tensor) else Tensor(features)
    if feats.shape[:2] != (H, W):
        raise ValueError(f"features {feats.shape} do not match fine grid {H}x{W}")
    src = reshape(feats, (H * W, feats.shape[2]))
    if coords is not None:
        src = concat([src, Tensor(np.asarray(coords).reshape(H * W, 3))], axis=1)
    return gather_rows(src, bundle.slot_index, bundle.slot_valid)


def localize(xyz: np.ndarray, slot_index, slot_valid, center_index, radius: float, backend=None):
    """Local coordinates, distances and radius mask of every slot."""
    xyz_flat = np.ascontiguousarray(np.asarray(xyz, dtype=np.float64).reshape(-1, 3))
    P, dist, mask = kernels.get(backend).localize(xyz_flat, slot_index, slot_valid, center_index, radius)
    inv_dist = mask / np.maximum(dist, EPS)
    return P, dist, mask, inv_dist


def inverse_density(
    dist: np.ndarray, mask: np.ndarray, sigma: float, center_valid: np.ndarray, rescale: bool = True
) -> np.ndarray:
    """Gaussian-kernel inverse density per sampled point.

    With ``rescale`` the map is divided by its maximum so values lie in
    (0, 1]. Invalid centers get 0.
    """
    if not sigma > 0:
        raise ConfigError("density bandwidth must be positive")
    kern = np.exp(-(dist * dist) / (2.0 * sigma * sigma)) * mask
    density = kern.sum(axis=-1)
    inv = np.where(center_valid & (density > 0), 1.0 / np.where(density > 0, density, 1.0), 0.0)
    if not rescale:
        return inv
    top = inv.max() if inv.size else 0.0
    return inv / top if top > 0 else inv


def group(
    xyz: np.ndarray,
    valid: np.ndarray,
    sampled: Sampled,
    cfg: GroupingConfig,
    dilation: tuple[int, int] | None = None,
    backend: str | None = None,
) -> NeighborhoodBundle:
    """Build the neighborhood bundle of ``sampled`` on the fine (H, W) grid."""
    valid = np.asarray(valid, dtype=bool)
    dil = sampled.grid.strides if dilation is None else tuple(dilation)
    idx, svalid = window_index(valid, sampled, cfg.k, dil, backend)
    P, dist, mask, inv_dist = localize(xyz, idx, svalid, sampled.center_index, cfg.radius, backend)
    dens = inverse_density(dist, mask, cfg.sigma, sampled.valid)
    return NeighborhoodBundle(sampled, cfg.k, dil, idx, svalid, P, dist, mask, inv_dist, dens, cfg.radius)
