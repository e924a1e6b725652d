"""Per-scan momentum SGD on masked cross-entropy."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import checkpoint
from .lidar_io import PointCloud
from .model import ModelSpec, Params, flatten_params, init_params, loss_fn, plan_scan
from .tensor import SGD, TrainingError, backward

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    params: Params
    losses: list[float] = field(default_factory=list)
    pixel_accuracy: float | None = None


def rotate_azimuth(cloud: PointCloud, angle: float) -> PointCloud:
    c, s = math.cos(angle), math.sin(angle)
    xyz = cloud.xyz @ np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    return PointCloud(xyz, cloud.remission, cloud.label, cloud.raw_label, cloud.instance)


def pixel_accuracy(model: ModelSpec, params: Params, plans) -> float:
    from .model import forward_logits

    hit = total = 0
    for plan in plans:
        pred = np.argmax(forward_logits(model, params, plan).data, axis=-1)
        keep = plan.image.valid & (plan.pixel_labels >= 0)
        hit += int((pred[keep] == plan.pixel_labels[keep]).sum())
        total += int(keep.sum())
    return hit / total if total else float("nan")


def train(
    model: ModelSpec,
    scans: Sequence[PointCloud],
    epochs: int,
    lr: float,
    seed: int = 0,
    momentum: float = 0.9,
    augment: bool = False,
    params: Params | None = None,
    checkpoint_path: str | os.PathLike | None = None,
    loss_csv: str | os.PathLike | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Train for ``epochs`` passes (or ``max_steps`` updates) over ``scans``.

    Scan order is shuffled per epoch from ``seed``. With ``augment`` each
    scan is rotated by a random azimuth before projection. A non-finite loss
    aborts training after writing the last good parameters.
    """
    if any(s.label is None for s in scans):
        raise ValueError("training scans must be labeled")
    rng = np.random.default_rng(seed)
    params = init_params(model) if params is None else params
    flat = flatten_params(params)
    opt = SGD(flat, lr=lr, momentum=momentum)
    plans = None if augment else [plan_scan(model, s) for s in scans]
    losses: list[float] = []
    step = 0
    try:
        for epoch in range(epochs):
            for i in rng.permutation(len(scans)):
                if max_steps is not None and step >= max_steps:
                    break
                if plans is not None:
                    plan = plans[i]
                else:
                    plan = plan_scan(model, rotate_azimuth(scans[i], rng.uniform(-math.pi, math.pi)))
                loss = loss_fn(model, params, plan)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at step {step} (epoch {epoch})")
                backward(loss, flat.values())
                opt.step()
                losses.append(value)
                step += 1
    except TrainingError:
        if checkpoint_path is not None:
            # parameters are only mutated after a finite loss and gradient
            checkpoint.save(checkpoint_path, params, model.nets(), model.flat)
        _write_losses(loss_csv, losses)
        raise
    if checkpoint_path is not None:
        checkpoint.save(checkpoint_path, params, model.nets(), model.flat)
    _write_losses(loss_csv, losses)
    return TrainResult(params, losses)


def _write_losses(path, losses):
    if path is None:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(v)])
