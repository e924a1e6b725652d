"""Projected set-abstraction layers.

Three aggregators over an unfolded neighborhood ``F_in`` (H', W', K, C):

* ``pointnet``: mask, shared MLP, max pool over the K slots.
* ``spidercnn``: ``MLP_out(MLP_in(F_in)^T @ (WeightNet(P) * M))`` per pixel.
* ``pointconv``: as ``spidercnn`` with ``MLP_in(F_in)`` gated by
  ``DensityNet(D)`` before the contraction.

The soft variants zero WeightNet outputs at masked slots so out-of-radius
neighbors never contribute.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grouping import NeighborhoodBundle
from .projection import ConfigError
from .tensor import (
    DimensionError,
    MlpSpec,
    Tensor,
    ewise_mul,
    init_mlp,
    matmul,
    max_pool_axis,
    mlp_forward,
    reshape,
    transpose,
)

VARIANTS = ("pointnet", "spidercnn", "pointconv")


@dataclass(frozen=True)
class SAStageSpec:
    variant: str
    mlp: MlpSpec | None = None
    mlp_in: MlpSpec | None = None
    weightnet: MlpSpec | None = None
    densitynet: MlpSpec | None = None
    mlp_out: MlpSpec | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown set-abstraction variant {self.variant!r}")
        if self.variant == "pointnet":
            if self.mlp is None:
                raise ConfigError("pointnet variant needs an mlp")
            return
        for name in ("mlp_in", "weightnet", "mlp_out"):
            if getattr(self, name) is None:
                raise ConfigError(f"{self.variant} variant needs {name}")
        if self.weightnet.c_in != 3:
            raise ConfigError("WeightNet must consume 3 local coordinates")
        if self.mlp_out.c_in != self.mlp_in.c_out * self.weightnet.c_out:
            raise ConfigError(
                f"MLP_out input {self.mlp_out.c_in} != c_f*c_mid = {self.mlp_in.c_out}*{self.weightnet.c_out}"
            )
        if self.variant == "pointconv":
            if self.densitynet is None:
                raise ConfigError("pointconv variant needs densitynet")
            if self.densitynet.c_in != 1 or self.densitynet.c_out not in (1, self.mlp_in.c_out):
                raise ConfigError("DensityNet must map 1 -> 1 or 1 -> c_f")

    @property
    def c_in(self) -> int:
        return (self.mlp if self.variant == "pointnet" else self.mlp_in).c_in

    @property
    def c_out(self) -> int:
        return (self.mlp if self.variant == "pointnet" else self.mlp_out).c_out

    @property
    def c_mid(self) -> int | None:
        return None if self.weightnet is None else self.weightnet.c_out

    def nets(self) -> dict[str, MlpSpec]:
        names = ("mlp", "mlp_in", "weightnet", "densitynet", "mlp_out")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    @classmethod
    def build(
        cls,
        variant: str,
        c_in: int,
        widths: tuple[int, ...],
        c_mid: int = 8,
        seed: int = 0,
        weight_hidden: int = 16,
        density_hidden: int = 8,
    ) -> "SAStageSpec":
        """Stage spec from channel widths.

        ``pointnet`` uses ``c_in -> widths``. The soft variants use
        ``MLP_in: c_in -> widths[:-1]`` (or ``widths[-1] // 2`` when only one
        width is given) and ``MLP_out: c_f * c_mid -> widths[-1]``.
        """
        widths = tuple(int(w) for w in widths)
        if variant == "pointnet":
            return cls(variant, mlp=MlpSpec((c_in,) + widths, seed=seed))
        inner = widths[:-1] or (max(1, widths[-1] // 2),)
        c_f = inner[-1]
        return cls(
            variant,
            mlp_in=MlpSpec((c_in,) + inner, seed=seed),
            weightnet=MlpSpec((3, weight_hidden, c_mid), ("relu", "none"), seed=seed + 1),
            densitynet=(
                MlpSpec((1, density_hidden, 1), ("relu", "none"), seed=seed + 2) if variant == "pointconv" else None
            ),
            mlp_out=MlpSpec((c_f * c_mid, widths[-1]), seed=seed + 3),
        )


def init_stage(spec: SAStageSpec) -> dict[str, dict[str, Tensor]]:
    return {name: init_mlp(net) for name, net in spec.nets().items()}


def _check_width(F_in: Tensor, want: int) -> None:
    if F_in.shape[-1] != want:
        raise DimensionError(f"F_in has {F_in.shape[-1]} channels, stage expects {want}")


def sa_pointnet(F_in: Tensor, mask: np.ndarray, spec: SAStageSpec, params) -> Tensor:
    """``Pooling(MLP(F_in * M))`` with the mask broadcast over channels."""
    _check_width(F_in, spec.c_in)
    h = mlp_forward(spec.mlp, params["mlp"], ewise_mul(F_in, mask[..., None].astype(np.float64)))
    pooled, _ = max_pool_axis(h, axis=-2)
    return pooled


def _contract(feat: Tensor, weights: Tensor, mask: np.ndarray, spec: SAStageSpec, params) -> Tensor:
    # (..., K, c_f)^T @ (..., K, c_mid) -> (..., c_f, c_mid)
    lead = feat.shape[:-2]
    w = ewise_mul(weights, mask[..., None].astype(np.float64))
    nd = feat.ndim
    axes = tuple(range(nd - 2)) + (nd - 1, nd - 2)
    prod = matmul(transpose(feat, axes), w)
    flat = reshape(prod, lead + (spec.mlp_in.c_out * spec.weightnet.c_out,))
    return mlp_forward(spec.mlp_out, params["mlp_out"], flat)


def sa_spidercnn(F_in: Tensor, local: np.ndarray, mask: np.ndarray, spec: SAStageSpec, params) -> Tensor:
    """``MLP_out(MLP_in(F_in) [x] (WeightNet(P) * M))``; ``local`` should be radius-normalized."""
    _check_width(F_in, spec.c_in)
    feat = mlp_forward(spec.mlp_in, params["mlp_in"], F_in)
    weights = mlp_forward(spec.weightnet, params["weightnet"], Tensor(local))
    return _contract(feat, weights, mask, spec, params)


def sa_pointconv(
    F_in: Tensor, local: np.ndarray, mask: np.ndarray, inv_density: np.ndarray, spec: SAStageSpec, params
) -> Tensor:
    """Density-gated contraction: ``MLP_out((MLP_in(F_in) * DensityNet(D)) [x] (WeightNet(P) * M))``."""
    _check_width(F_in, spec.c_in)
    feat = mlp_forward(spec.mlp_in, params["mlp_in"], F_in)
    gate = mlp_forward(spec.densitynet, params["densitynet"], Tensor(inv_density[..., None]))
    gate = reshape(gate, gate.shape[:-1] + (1, gate.shape[-1]))  # broadcast over slots
    feat = ewise_mul(feat, gate)
    weights = mlp_forward(spec.weightnet, params["weightnet"], Tensor(local))
    return _contract(feat, weights, mask, spec, params)


def aggregate(F_in: Tensor, bundle: NeighborhoodBundle, spec: SAStageSpec, params) -> Tensor:
    """Dispatch on ``spec.variant``: (H', W', K, C) -> (H', W', C_out)."""
    if spec.variant == "pointnet":
        return sa_pointnet(F_in, bundle.mask, spec, params)
    local = bundle.local / bundle.radius
    if spec.variant == "spidercnn":
        return sa_spidercnn(F_in, local, bundle.mask, spec, params)
    return sa_pointconv(F_in, local, bundle.mask, bundle.inv_density, spec, params)
