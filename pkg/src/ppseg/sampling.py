"""Uniform grid sampling of a range image."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .projection import ConfigError


@dataclass(frozen=True)
class SampleGrid:
    """Coarse ``out_height x out_width`` grid over a fine ``height x width`` image.

    The anchor of each stride cell defaults to the cell center.
    """

    height: int
    width: int
    out_height: int
    out_width: int
    offset: tuple[int, int] | None = None

    def __post_init__(self):
        if min(self.height, self.width, self.out_height, self.out_width) <= 0:
            raise ConfigError("grid extents must be positive")
        if self.height % self.out_height or self.width % self.out_width:
            raise ConfigError(
                f"sampling {self.height}x{self.width} -> {self.out_height}x{self.out_width} needs integral strides"
            )
        if self.offset is None:
            object.__setattr__(self, "offset", (self.stride_v // 2, self.stride_u // 2))
        ov, ou = self.offset
        if not (0 <= ov < self.stride_v and 0 <= ou < self.stride_u):
            raise ConfigError(f"anchor offset {self.offset} outside stride cell")

    @property
    def stride_v(self) -> int:
        return self.height // self.out_height

    @property
    def stride_u(self) -> int:
        return self.width // self.out_width

    @property
    def strides(self) -> tuple[int, int]:
        return self.stride_v, self.stride_u

    @property
    def m(self) -> int:
        return self.out_height * self.out_width


@dataclass
class Sampled:
    """Result of :func:`sample`: fine-grid position of every coarse pixel."""

    grid: SampleGrid
    center_v: np.ndarray  # (H', W') fine row
    center_u: np.ndarray  # (H', W') fine column
    valid: np.ndarray  # (H', W') bool

    @property
    def center_index(self) -> np.ndarray:
        return self.center_v * self.grid.width + self.center_u

    def take(self, fine: np.ndarray) -> np.ndarray:
        """Pick coarse values from a fine (H, W, ...) array; invalid slots are zeroed."""
        out = fine[self.center_v, self.center_u]
        return out * self.valid.reshape(self.valid.shape + (1,) * (out.ndim - 2))


def sample(valid: np.ndarray, grid: SampleGrid, backend: str | None = None) -> Sampled:
    """Choose one fine pixel per coarse cell.

    The anchor pixel is used when valid; otherwise the valid pixel of the
    stride cell nearest to the anchor (row-major on ties); otherwise the
    coarse pixel is invalid.
    """
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (grid.height, grid.width):
        raise ConfigError(f"validity mask {valid.shape} does not match grid {grid.height}x{grid.width}")
    ov, ou = grid.offset
    cv, cu, ok = kernels.get(backend).sample_grid(valid, grid.stride_v, grid.stride_u, ov, ou)
    return Sampled(grid, cv, cu, ok)


def sample_image(image, grid: SampleGrid, backend: str | None = None):
    """Sample a :class:`RangeImage`; returns (coarse channels, validity, coarse pix2pt, Sampled)."""
    s = sample(image.valid, grid, backend)
    chans = image.channels[:, s.center_v, s.center_u] * s.valid
    pix2pt = np.where(s.valid, image.pix2pt[s.center_v, s.center_u], -1)
    return chans, s.valid, pix2pt, s
