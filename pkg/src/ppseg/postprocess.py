"""Range-image k-NN refinement of per-point predictions.

Each point looks at the ``window x window`` pixels around its projection,
keeps the ``k_post`` pixels whose range is closest to its own, and lets them
vote with Gaussian weights on the range gap. Ties fall back to the point's
unrefined prediction.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .lidar_io import PointCloud
from .projection import ConfigError, RangeImage, unproject


def knn_refine(
    image: RangeImage,
    pixel_preds: np.ndarray,
    cloud: PointCloud,
    window: int = 5,
    k_post: int = 5,
    sigma: float = 1.0,
    n_classes: int | None = None,
    backend: str | None = None,
) -> np.ndarray:
    if window <= 0 or window % 2 == 0:
        raise ConfigError(f"k-NN window must be odd, got {window}")
    if not 1 <= k_post <= window * window:
        raise ConfigError(f"k_post must lie in [1, {window * window}], got {k_post}")
    if not sigma > 0:
        raise ConfigError("range bandwidth must be positive")
    pixel_preds = np.asarray(pixel_preds, dtype=np.int64)
    base = unproject(image, pixel_preds)
    if n_classes is None:
        n_classes = int(pixel_preds.max()) + 1 if pixel_preds.size else 1
    return kernels.get(backend).knn_refine(
        image.range,
        image.valid,
        pixel_preds,
        image.pt2pix[:, 0],
        image.pt2pix[:, 1],
        cloud.range,
        base,
        window,
        k_post,
        float(sigma),
        n_classes,
    )
