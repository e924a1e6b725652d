"""Parameter checkpoint files.

Layout::

    b"PPSEG1"                       magic with format version
    uint32 LE                       header length in bytes
    header                          UTF-8 JSON: {"config": {...}, "nets": {name: MlpSpec},
                                    "tensors": [{"name": str, "shape": [...]}, ...]}
    payload                         tensors in header order, little-endian float64
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .tensor import MlpSpec, Tensor

MAGIC = b"PPSEG1"


class CheckpointError(ValueError):
    pass


def save(path: str | os.PathLike, params: dict[str, dict[str, Tensor]], nets: dict[str, MlpSpec], config: dict) -> None:
    entries, blobs = [], []
    for net in sorted(params):
        for leaf in sorted(params[net]):
            arr = params[net][leaf].data
            entries.append({"name": f"{net}/{leaf}", "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = json.dumps(
        {"config": config, "nets": {k: v.to_dict() for k, v in nets.items()}, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def load(path: str | os.PathLike):
    """Returns ``(params, nets, config)``."""
    buf = Path(path).read_bytes()
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a PPSEG1 checkpoint")
    off = len(MAGIC)
    if len(buf) < off + 4:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    try:
        header = json.loads(buf[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    off += hlen
    params: dict[str, dict[str, Tensor]] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(buf):
            raise CheckpointError(f"{path}: payload truncated at {entry['name']}")
        arr = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=off).reshape(shape).astype(np.float64)
        off += nbytes
        net, leaf = entry["name"].rsplit("/", 1)
        params.setdefault(net, {})[leaf] = Tensor(arr, requires_grad=True)
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    nets = {k: MlpSpec.from_dict(v) for k, v in header["nets"].items()}
    return params, nets, header["config"]
