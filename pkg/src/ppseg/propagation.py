"""Projected feature propagation.

Coarse samples scatter their features back onto the fine pixels of their
grouping window, weighted by the inverse distance map raised to ``p`` and
normalized per fine pixel. Fine pixels no window reaches copy the nearest
valid coarse sample on the coarse grid. Because the weights depend only on
geometry, the whole interpolation is one constant sparse matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .grouping import NeighborhoodBundle, unfold
from .projection import ConfigError
from .set_abstraction import SAStageSpec, aggregate
from .tensor import DimensionError, MlpSpec, Tensor, concat, mlp_forward, reshape, sparse_linear

HEADS = ("plain", "spider", "pointconv")
_HEAD_VARIANT = {"spider": "spidercnn", "pointconv": "pointconv"}


@dataclass(frozen=True)
class FPStageSpec:
    """Decoder stage: plain MLP head, or a spidercnn / pointconv aggregator run on
    a stride-1 neighborhood of the fine level."""

    head: str = "plain"
    mlp: MlpSpec | None = None
    aggregator: SAStageSpec | None = None
    p: float = 2.0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigError(f"unknown feature-propagation head {self.head!r}")
        if not self.p > 0:
            raise ConfigError("inverse-distance exponent p must be positive")
        if self.head == "plain" and self.mlp is None:
            raise ConfigError("plain head needs an mlp")
        if self.head != "plain":
            if self.aggregator is None or self.aggregator.variant != _HEAD_VARIANT[self.head]:
                raise ConfigError(f"{self.head} head needs a {_HEAD_VARIANT[self.head]} aggregator")

    @property
    def c_in(self) -> int:
        """Width of Concat(interpolated, skip), excluding appended coordinates."""
        return self.mlp.c_in if self.head == "plain" else self.aggregator.c_in - 3

    @property
    def c_out(self) -> int:
        return self.mlp.c_out if self.head == "plain" else self.aggregator.c_out

    def nets(self) -> dict[str, MlpSpec]:
        return {"mlp": self.mlp} if self.head == "plain" else self.aggregator.nets()

    @classmethod
    def build(cls, head: str, c_in: int, widths, p: float = 2.0, c_mid: int = 8, seed: int = 0) -> "FPStageSpec":
        widths = tuple(int(w) for w in widths)
        if head == "plain":
            return cls("plain", mlp=MlpSpec((c_in,) + widths, seed=seed), p=p)
        agg = SAStageSpec.build(_HEAD_VARIANT.get(head, head), c_in + 3, widths, c_mid=c_mid, seed=seed)
        return cls(head, aggregator=agg, p=p)


def interpolation_matrix(bundle: NeighborhoodBundle, p: float = 2.0, backend: str | None = None) -> sp.csr_matrix:
    """Row-normalized (H*W, H'*W') scatter weights of one stage."""
    H, W = bundle.fine_shape
    Hc, Wc = bundle.coarse_shape
    K = bundle.slot_index.shape[-1]
    sel = bundle.mask.reshape(-1)
    rows = bundle.slot_index.reshape(-1)[sel]
    cols = np.repeat(np.arange(Hc * Wc), K)[sel]
    w = bundle.inv_dist.reshape(-1)[sel] ** p
    mat = sp.coo_matrix((w, (rows, cols)), shape=(H * W, Hc * Wc)).tocsr()
    mat.sum_duplicates()
    total = np.asarray(mat.sum(axis=1)).ravel()
    covered = total > 0
    scale = np.where(covered, 1.0 / np.where(covered, total, 1.0), 0.0)
    mat = sp.diags(scale) @ mat
    lonely = np.flatnonzero(~covered)
    if lonely.size:
        g = bundle.sampled.grid
        ov, ou = g.offset
        near = kernels.get(backend).nearest_coarse(
            lonely // W, lonely % W, bundle.center_valid, g.stride_v, g.stride_u, ov, ou
        )
        hit = near >= 0
        fill = sp.csr_matrix(
            (np.ones(int(hit.sum())), (lonely[hit], near[hit])), shape=(H * W, Hc * Wc)
        )
        mat = mat + fill
    return sp.csr_matrix(mat)


def interpolate(coarse, bundle: NeighborhoodBundle, p: float = 2.0, matrix: sp.spmatrix | None = None) -> Tensor:
    """(H', W', C) coarse features -> (H, W, C) fine features."""
    coarse = coarse if isinstance(coarse, Tensor) else Tensor(coarse)
    Hc, Wc = bundle.coarse_shape
    H, W = bundle.fine_shape
    if coarse.shape[:2] != (Hc, Wc):
        raise DimensionError(f"coarse features {coarse.shape} do not match bundle grid {Hc}x{Wc}")
    mat = interpolation_matrix(bundle, p) if matrix is None else matrix
    C = coarse.shape[2]
    out = sparse_linear(mat, reshape(coarse, (Hc * Wc, C)))
    return reshape(out, (H, W, C))


def propagate(
    skip,
    coarse,
    bundle: NeighborhoodBundle,
    spec: FPStageSpec,
    params,
    matrix: sp.spmatrix | None = None,
    fine_bundle: NeighborhoodBundle | None = None,
    coords: np.ndarray | None = None,
) -> Tensor:
    """``head(Concat(Inp(coarse, D^), skip))`` on the fine grid.

    ``skip`` may be None (no skip channels). The aggregator heads need
    ``fine_bundle`` (a stride-1 neighborhood of the fine level) and the
    network-scaled ``coords`` appended to the unfolded channels.
    """
    x = interpolate(coarse, bundle, spec.p, matrix)
    if skip is not None:
        skip = skip if isinstance(skip, Tensor) else Tensor(skip)
        if skip.shape[:2] != x.shape[:2]:
            raise DimensionError(f"skip features {skip.shape} do not align with fine grid {x.shape[:2]}")
        x = concat([x, skip], axis=-1)
    if x.shape[-1] != spec.c_in:
        raise DimensionError(f"feature propagation input has {x.shape[-1]} channels, stage expects {spec.c_in}")
    if spec.head == "plain":
        return mlp_forward(spec.mlp, params["mlp"], x)
    if fine_bundle is None or coords is None:
        raise ValueError(f"{spec.head} head needs a fine-level neighborhood and coordinates")
    F_in = unfold(x, fine_bundle, coords)
    return aggregate(F_in, fine_bundle, spec.aggregator, params)
