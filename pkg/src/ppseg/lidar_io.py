"""SemanticKITTI scan / label readers and writers.

``.bin`` files hold little-endian float32 quadruples (x, y, z, remission).
``.label`` files hold one little-endian uint32 per point: the low 16 bits are
the semantic id, the high 16 bits the instance id.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

IGNORE = -1

_SCAN_DTYPE = np.dtype("<f4")
_LABEL_DTYPE = np.dtype("<u4")


class FormatError(ValueError):
    """Malformed scan, label or label-map file."""


@dataclass
class PointCloud:
    xyz: np.ndarray  # (n, 3) float64, meters
    remission: np.ndarray  # (n,) float64
    label: np.ndarray | None = None  # (n,) int64 train classes, IGNORE allowed
    raw_label: np.ndarray | None = None  # (n,) uint16 semantic ids
    instance: np.ndarray | None = None  # (n,) uint16 instance ids

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.remission = np.asarray(self.remission, dtype=np.float64).reshape(-1)
        if self.remission.shape[0] != self.xyz.shape[0]:
            raise FormatError("remission length does not match point count")
        if self.label is not None:
            self.label = np.asarray(self.label, dtype=np.int64).reshape(-1)
            if self.label.shape[0] != self.n:
                raise FormatError(f"label count {self.label.shape[0]} != point count {self.n}")

    @property
    def n(self) -> int:
        return self.xyz.shape[0]

    @property
    def range(self) -> np.ndarray:
        return np.linalg.norm(self.xyz, axis=1)


class LabelMap:
    """Raw semantic id <-> train class mapping.

    Parsed from text with one ``raw_id train_id name`` triple per line;
    ``train_id`` of -1 marks an ignored raw id. Train ids must be contiguous
    from 0. The first raw id listed for a train class is its export id and
    its name becomes the class name.
    """

    def __init__(self, entries: list[tuple[int, int, str]]):
        self.raw_to_train: dict[int, int] = {}
        self.train_to_raw: dict[int, int] = {}
        names: dict[int, str] = {}
        for raw, train, name in entries:
            if not 0 <= raw < 1 << 16:
                raise FormatError(f"raw id {raw} outside 16-bit range")
            if raw in self.raw_to_train:
                raise FormatError(f"raw id {raw} listed twice")
            self.raw_to_train[raw] = train if train >= 0 else IGNORE
            if train >= 0 and train not in self.train_to_raw:
                self.train_to_raw[train] = raw
                names[train] = name
        n_cls = len(self.train_to_raw)
        if sorted(self.train_to_raw) != list(range(n_cls)):
            raise FormatError(f"train ids must be contiguous from 0, got {sorted(self.train_to_raw)}")
        self.class_names = [names[i] for i in range(n_cls)]
        self._lut = np.full(1 << 16, IGNORE, dtype=np.int64)
        for raw, train in self.raw_to_train.items():
            self._lut[raw] = train
        self._known = np.zeros(1 << 16, dtype=bool)
        self._known[list(self.raw_to_train)] = True
        self._inv = np.array([self.train_to_raw[i] for i in range(n_cls)], dtype=np.uint32)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @classmethod
    def parse(cls, text: str) -> "LabelMap":
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 2)
            if len(parts) < 2:
                raise FormatError(f"label map line {lineno}: expected 'raw_id train_id name'")
            try:
                raw, train = int(parts[0], 0), int(parts[1])
            except ValueError:
                raise FormatError(f"label map line {lineno}: non-integer id") from None
            entries.append((raw, train, parts[2] if len(parts) > 2 else f"class{train}"))
        return cls(entries)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LabelMap":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def semantic_kitti(cls) -> "LabelMap":
        text = resources.files("ppseg").joinpath("data/semantic-kitti.labels").read_text(encoding="utf-8")
        return cls.parse(text)

    def to_train(self, raw: np.ndarray) -> tuple[np.ndarray, int]:
        """Map raw semantic ids; returns (train labels, count of unknown ids)."""
        raw = np.asarray(raw, dtype=np.int64)
        return self._lut[raw], int((~self._known[raw]).sum())

    def to_raw(self, train: np.ndarray) -> np.ndarray:
        train = np.asarray(train, dtype=np.int64)
        bad = (train < 0) | (train >= self.n_classes)
        if np.any(bad):
            raise ValueError(f"class {int(train[bad][0])} has no raw id in the label map")
        return self._inv[train]


def read_scan(path: str | os.PathLike) -> PointCloud:
    buf = Path(path).read_bytes()
    if len(buf) % 16:
        raise FormatError(f"{path}: truncated scan, {len(buf) % 16} stray bytes at offset {len(buf) - len(buf) % 16}")
    arr = np.frombuffer(buf, dtype=_SCAN_DTYPE).reshape(-1, 4).astype(np.float64)
    return PointCloud(arr[:, :3], arr[:, 3])


def write_scan(path: str | os.PathLike, cloud: PointCloud) -> None:
    arr = np.empty((cloud.n, 4), dtype=_SCAN_DTYPE)
    arr[:, :3] = cloud.xyz
    arr[:, 3] = cloud.remission
    Path(path).write_bytes(arr.tobytes())


def read_labels(path: str | os.PathLike, label_map: LabelMap, n_points: int | None = None):
    """Read a ``.label`` file.

    Returns ``(train_labels, raw_semantic, instance)``. Unknown raw ids map
    to the ignore class and are counted in a warning.
    """
    buf = Path(path).read_bytes()
    if len(buf) % 4:
        raise FormatError(f"{path}: truncated label file, stray bytes at offset {len(buf) - len(buf) % 4}")
    entries = np.frombuffer(buf, dtype=_LABEL_DTYPE)
    if n_points is not None and entries.shape[0] != n_points:
        raise FormatError(f"{path}: {entries.shape[0]} labels for {n_points} points")
    raw = (entries & 0xFFFF).astype(np.uint16)
    instance = (entries >> 16).astype(np.uint16)
    train, unknown = label_map.to_train(raw)
    if unknown:
        logger.warning("%s: %d labels with unknown raw ids mapped to ignore", path, unknown)
    return train, raw, instance


def load_labeled_scan(scan_path, label_path, label_map: LabelMap) -> PointCloud:
    cloud = read_scan(scan_path)
    train, raw, inst = read_labels(label_path, label_map, cloud.n)
    cloud.label, cloud.raw_label, cloud.instance = train, raw, inst
    return cloud


def write_labels(path: str | os.PathLike, raw: np.ndarray, instance: np.ndarray | None = None) -> None:
    raw = np.asarray(raw, dtype=np.uint32)
    inst = np.zeros_like(raw) if instance is None else np.asarray(instance, dtype=np.uint32)
    Path(path).write_bytes(((inst << 16) | (raw & 0xFFFF)).astype(_LABEL_DTYPE).tobytes())


def write_predictions(path: str | os.PathLike, cloud: PointCloud, preds: np.ndarray, label_map: LabelMap) -> None:
    """Write per-point train classes as raw semantic ids, instance bits zero."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    if preds.shape[0] != cloud.n:
        raise ValueError(f"{preds.shape[0]} predictions for {cloud.n} points")
    write_labels(path, label_map.to_raw(preds))
