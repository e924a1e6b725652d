"""Encoder-decoder assembly.

``n`` set-abstraction stages each sample a coarser grid, group a window on
the finer level and aggregate; ``n`` feature-propagation stages walk back up,
interpolating with the matching stage's inverse distance map and fusing the
skip features of the finer level. A pointwise head produces class logits per
pixel of the input range image.

All geometry (projection, sampling, grouping, interpolation matrices) depends
only on the scan, never on the parameters, so it is computed once per scan
into a :class:`ScanPlan` and reused across training steps.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import config as cfgmod
from .grouping import GroupingConfig, NeighborhoodBundle, group, unfold
from .lidar_io import IGNORE, PointCloud
from .postprocess import knn_refine
from .projection import ConfigError, ProjectionConfig, RangeImage, project, unproject
from .propagation import FPStageSpec, interpolation_matrix, propagate
from .sampling import SampleGrid, sample
from .set_abstraction import VARIANTS, SAStageSpec, aggregate
from .tensor import MlpSpec, Tensor, init_mlp, mlp_forward, softmax_cross_entropy

logger = logging.getLogger(__name__)

FP_HEAD_FOR = {"pointnet": "plain", "spidercnn": "spider", "pointconv": "pointconv"}
INPUT_FEATURES = 2  # range, remission; xyz is appended at every unfold
SKIP0_FEATURES = 5  # x, y, z, range, remission


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class StageSpec:
    out_height: int
    out_width: int
    grouping: GroupingConfig
    sa: SAStageSpec
    fp: FPStageSpec


@dataclass
class ModelSpec:
    projection: ProjectionConfig
    n_classes: int
    stages: list[StageSpec]
    head: MlpSpec
    coord_scale: float = 0.1
    flat: dict = field(default_factory=dict)

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def level_shapes(self) -> list[tuple[int, int]]:
        shapes = [(self.projection.height, self.projection.width)]
        shapes += [(s.out_height, s.out_width) for s in self.stages]
        return shapes

    def grids(self) -> list[SampleGrid]:
        lv = self.level_shapes()
        return [SampleGrid(*lv[i], *lv[i + 1]) for i in range(self.n_stages)]

    def nets(self) -> dict[str, MlpSpec]:
        out = {}
        for i, st in enumerate(self.stages, 1):
            out.update({f"sa{i}.{k}": v for k, v in st.sa.nets().items()})
            out.update({f"fp{i}.{k}": v for k, v in st.fp.nets().items()})
        out["head.mlp"] = self.head
        return out

    @classmethod
    def from_config(cls, flat: dict[str, str]) -> "ModelSpec":
        return build_model_spec(flat)


def build_model_spec(flat: dict[str, str]) -> ModelSpec:
    """Model from a flat config; missing stage keys get the defaults."""
    flat = {**cfgmod.DEFAULTS, **flat}
    c = cfgmod.checked
    proj = ProjectionConfig.from_degrees(
        c(cfgmod.get_int, flat, "proj.height"),
        c(cfgmod.get_int, flat, "proj.width"),
        c(cfgmod.get_float, flat, "proj.fov_up_deg"),
        c(cfgmod.get_float, flat, "proj.fov_down_deg"),
    )
    n = c(cfgmod.get_int, flat, "model.n_stages")
    if n < 1:
        raise ConfigError("model.n_stages must be at least 1")
    n_cls = c(cfgmod.get_int, flat, "model.num_classes")
    variant = c(cfgmod.get_str, flat, "model.variant")
    seed = c(cfgmod.get_int, flat, "model.seed")
    k_default = c(cfgmod.get_int, flat, "model.k")

    h, w = proj.height, proj.width
    sa_widths, levels = [], []
    for i in range(1, n + 1):
        h2 = c(cfgmod.get_int, flat, f"sa{i}.out_height", max(1, h // 2))
        w2 = c(cfgmod.get_int, flat, f"sa{i}.out_width", max(1, w // 2))
        levels.append((h2, w2))
        h, w = h2, w2
        default_w = str(cfgmod.STAGE_WIDTHS[min(i - 1, len(cfgmod.STAGE_WIDTHS) - 1)])
        sa_widths.append(c(cfgmod.get_ints, flat, f"sa{i}.mlp", default_w))

    stages = []
    c_prev = INPUT_FEATURES
    for i in range(1, n + 1):
        sv = c(cfgmod.get_str, flat, f"sa{i}.variant", variant)
        if sv not in VARIANTS:
            raise ConfigError(f"sa{i}.variant: unknown variant {sv!r}")
        radius = c(cfgmod.get_float, flat, f"sa{i}.radius", str(cfgmod.STAGE_RADII[min(i - 1, 3)] * 2 ** max(0, i - 4)))
        sigma_raw = flat.get(f"sa{i}.sigma")
        gcfg = GroupingConfig(
            c(cfgmod.get_int, flat, f"sa{i}.k", str(k_default)),
            radius,
            float(sigma_raw) if sigma_raw is not None else None,
        )
        c_mid = c(cfgmod.get_int, flat, f"sa{i}.c_mid", "8")
        sa = SAStageSpec.build(sv, c_prev + 3, sa_widths[i - 1], c_mid=c_mid, seed=seed + 100 * i)
        stages.append([levels[i - 1], gcfg, sa])
        c_prev = sa.c_out

    # decoder, deepest first; output widths mirror the encoder by level
    c_coarse = stages[-1][2].c_out
    fps_specs: dict[int, FPStageSpec] = {}
    for i in range(n, 0, -1):
        c_skip = SKIP0_FEATURES if i == 1 else stages[i - 2][2].c_out
        default_out = str(stages[i - 2][2].c_out if i > 1 else stages[0][2].c_out)
        head = c(cfgmod.get_str, flat, f"fp{i}.variant", FP_HEAD_FOR[stages[i - 1][2].variant])
        fp = FPStageSpec.build(
            head,
            c_coarse + c_skip,
            c(cfgmod.get_ints, flat, f"fp{i}.mlp", default_out),
            p=c(cfgmod.get_float, flat, f"fp{i}.p", "2.0"),
            c_mid=c(cfgmod.get_int, flat, f"fp{i}.c_mid", "8"),
            seed=seed + 100 * i + 50,
        )
        fps_specs[i] = fp
        c_coarse = fp.c_out
    hidden = c(cfgmod.get_ints, flat, "head.mlp")
    head = MlpSpec((c_coarse,) + hidden + (n_cls,), ("relu",) * len(hidden) + ("none",), seed=seed + 7)
    specs = [StageSpec(lv[0], lv[1], g, sa, fps_specs[i]) for i, (lv, g, sa) in enumerate(stages, 1)]
    model = ModelSpec(proj, n_cls, specs, head, c(cfgmod.get_float, flat, "model.coord_scale"), dict(flat))
    model.grids()  # validates integral strides
    return model


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

Params = dict[str, dict[str, Tensor]]


def init_params(model: ModelSpec) -> Params:
    """Parameters keyed by network path, e.g. ``params['sa1.mlp']['w0']``."""
    return {name: init_mlp(spec) for name, spec in model.nets().items()}


def flatten_params(params: Params) -> dict[str, Tensor]:
    return {f"{net}.{leaf}": t for net, group in params.items() for leaf, t in group.items()}


def _stage_params(params: Params, prefix: str) -> dict[str, dict[str, Tensor]]:
    plen = len(prefix) + 1
    return {name[plen:]: group for name, group in params.items() if name.startswith(prefix + ".")}


# ---------------------------------------------------------------------------
# per-scan geometry
# ---------------------------------------------------------------------------


@dataclass
class ScanPlan:
    image: RangeImage
    xyz: list[np.ndarray]  # per level (H_l, W_l, 3)
    valid: list[np.ndarray]  # per level (H_l, W_l)
    bundles: list[NeighborhoodBundle]  # stage i groups level i-1 around level i
    matrices: list[sp.csr_matrix]
    fine_bundles: dict[int, NeighborhoodBundle]  # level -> stride-1 bundle for aggregator heads
    features0: np.ndarray  # (H, W, 2) scaled range, remission
    skip0: np.ndarray  # (H, W, 5) scaled x, y, z, range, remission
    pixel_labels: np.ndarray | None = None


def plan_scan(model: ModelSpec, cloud: PointCloud, image: RangeImage | None = None, backend=None) -> ScanPlan:
    if image is None:
        image = project(cloud, model.projection)
    s = model.coord_scale
    xyz0 = image.xyz
    xyz, valid = [xyz0], [image.valid]
    bundles, matrices, fine = [], [], {}
    for i, (st, grid) in enumerate(zip(model.stages, model.grids()), 1):
        try:
            smp = sample(valid[-1], grid, backend)
            b = group(xyz[-1], valid[-1], smp, st.grouping, backend=backend)
            bundles.append(b)
            matrices.append(interpolation_matrix(b, st.fp.p, backend))
            if st.fp.head != "plain":
                lvl_h, lvl_w = valid[-1].shape
                ident = sample(valid[-1], SampleGrid(lvl_h, lvl_w, lvl_h, lvl_w), backend)
                fine[i - 1] = group(xyz[-1], valid[-1], ident, st.grouping, dilation=(1, 1), backend=backend)
        except Exception as exc:  # noqa: BLE001 - re-raised with stage context
            raise StageError(f"stage {i} geometry", exc) from exc
        xyz.append(smp.take(xyz[-1]))
        valid.append(smp.valid)
    feats0 = np.stack([image.range * s, image.remission], axis=-1)
    skip0 = np.concatenate([xyz0 * s, feats0], axis=-1)
    labels = image.pixel_labels(cloud.label) if cloud.label is not None else None
    return ScanPlan(image, xyz, valid, bundles, matrices, fine, feats0, skip0, labels)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


def forward_logits(model: ModelSpec, params: Params, plan: ScanPlan) -> Tensor:
    """Per-pixel logits, shape (H, W, n_classes)."""
    s = model.coord_scale
    feats: list = [Tensor(plan.features0)]
    for i, st in enumerate(model.stages, 1):
        try:
            b = plan.bundles[i - 1]
            F_in = unfold(feats[-1], b, plan.xyz[i - 1] * s)
            feats.append(aggregate(F_in, b, st.sa, _stage_params(params, f"sa{i}")))
        except Exception as exc:  # noqa: BLE001
            raise StageError(f"sa{i}", exc) from exc
    x = feats[-1]
    for i in range(model.n_stages, 0, -1):
        st = model.stages[i - 1]
        skip = Tensor(plan.skip0) if i == 1 else feats[i - 1]
        try:
            x = propagate(
                skip,
                x,
                plan.bundles[i - 1],
                st.fp,
                _stage_params(params, f"fp{i}"),
                matrix=plan.matrices[i - 1],
                fine_bundle=plan.fine_bundles.get(i - 1),
                coords=plan.xyz[i - 1] * s,
            )
        except Exception as exc:  # noqa: BLE001
            raise StageError(f"fp{i}", exc) from exc
    return mlp_forward(model.head, params["head.mlp"], x)


def loss_fn(model: ModelSpec, params: Params, plan: ScanPlan) -> Tensor:
    """Mean cross-entropy over valid, labeled pixels."""
    if plan.pixel_labels is None:
        raise ValueError("scan has no labels")
    target = np.where(plan.image.valid, plan.pixel_labels, IGNORE)
    return softmax_cross_entropy(forward_logits(model, params, plan), target, IGNORE)


@dataclass
class Prediction:
    logits: np.ndarray  # (C, H, W)
    pixel_pred: np.ndarray  # (H, W)
    point_pred: np.ndarray  # (n,)
    image: RangeImage


def forward(
    model: ModelSpec,
    params: Params,
    cloud: PointCloud,
    knn: dict | None = None,
    plan: ScanPlan | None = None,
) -> Prediction:
    """Project, run the network, argmax per pixel, and map back to points.

    ``knn`` (keys ``window``, ``k``, ``sigma``) enables range-image k-NN
    refinement of the per-point labels.
    """
    plan = plan_scan(model, cloud) if plan is None else plan
    logits = forward_logits(model, params, plan).data
    pix = np.argmax(logits, axis=-1)
    logits = np.ascontiguousarray(np.moveaxis(logits, -1, 0))
    if knn:
        pts = knn_refine(
            plan.image, pix, cloud, knn.get("window", 5), knn.get("k", 5), knn.get("sigma", 1.0), model.n_classes
        )
    else:
        pts = unproject(plan.image, pix)
    return Prediction(logits, pix, pts, plan.image)
