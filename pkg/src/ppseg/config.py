"""Flat ``key = value`` pipeline configuration.

Keys carry section prefixes (``proj.``, ``model.``, ``sa1.``, ``fp1.``,
``head.``, ``train.``, ``knn.``). ``#`` starts a comment. Lists are
comma separated. Unknown sections are rejected so typos surface early.
"""
from __future__ import annotations

import os
import re
from pathlib import Path

from .projection import ConfigError

_SECTIONS = re.compile(r"^(proj|model|head|train|knn|data|sa\d+|fp\d+)\.[a-z_]+$")

DEFAULTS: dict[str, str] = {
    "proj.height": "64",
    "proj.width": "512",
    "proj.fov_up_deg": "3.0",
    "proj.fov_down_deg": "-25.0",
    "model.n_stages": "4",
    "model.num_classes": "19",
    "model.variant": "pointnet",
    "model.coord_scale": "0.1",
    "model.seed": "0",
    "model.k": "5",
    "head.mlp": "128",
    "train.epochs": "1",
    "train.lr": "0.01",
    "train.momentum": "0.9",
    "train.seed": "0",
    "train.augment": "0",
    "knn.enabled": "0",
    "knn.window": "5",
    "knn.k": "5",
    "knn.sigma": "1.0",
}

STAGE_WIDTHS = (32, 64, 128, 256)
STAGE_RADII = (0.5, 1.0, 2.0, 4.0)


def parse(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _SECTIONS.match(key):
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load(path: str | os.PathLike | None) -> dict[str, str]:
    """Read a config file and overlay it on the defaults."""
    flat = dict(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        flat.update(parse(text))
    return flat


def dump(flat: dict[str, str]) -> str:
    return "".join(f"{k} = {flat[k]}\n" for k in sorted(flat))


def get_int(flat, key, default=None) -> int:
    return int(_get(flat, key, default))


def get_float(flat, key, default=None) -> float:
    return float(_get(flat, key, default))


def get_str(flat, key, default=None) -> str:
    return str(_get(flat, key, default))


def get_bool(flat, key, default=None) -> bool:
    return str(_get(flat, key, default)).lower() in ("1", "true", "yes", "on")


def get_ints(flat, key, default=None) -> tuple[int, ...]:
    val = str(_get(flat, key, default))
    return tuple(int(v) for v in val.replace(" ", "").split(",") if v)


def _get(flat, key, default):
    if key in flat:
        value = flat[key]
    elif default is not None:
        value = default
    else:
        raise ConfigError(f"missing config key {key!r}")
    return value


def checked(fn, flat, key, default=None):
    """Fetch a typed value, turning conversion failures into ConfigError."""
    try:
        return fn(flat, key, default)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value for {key!r}: {flat.get(key, default)!r}") from None
