"""CSV plot data with fixed column schemas.

Every file starts with a header row; an empty report is a header-only file.
Schemas:

* ``EVAL_FIELDS``: one row per class (class id, name, IoU) followed by
  ``miou`` and ``accuracy`` summary rows (class column holds the label).
* ``ABLATION_FIELDS``: one row per ablated setting.
* ``BenchRow.FIELDS`` (``ppseg.baseline``): one row per timed method.
* ``KERNEL_FIELDS``: per-kernel backend comparison.
"""
from __future__ import annotations

import csv
import io
import math
import os
from typing import Iterable, Sequence

EVAL_FIELDS = ("class", "name", "iou")
ABLATION_FIELDS = ("k", "acc", "miou", "scans_per_sec")
KERNEL_FIELDS = ("kernel", "backend", "median_ms")


def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def emit_plotdata(fields: Sequence[str], rows: Iterable[Sequence], path: str | os.PathLike | None = None) -> str:
    """Render ``rows`` under header ``fields``; write to ``path`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        if len(row) != len(fields):
            raise ValueError(f"row {row!r} does not match columns {tuple(fields)}")
        w.writerow([_cell(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_plotdata(path_or_text: str | os.PathLike, is_text: bool = False) -> tuple[list[str], list[list[str]]]:
    text = path_or_text if is_text else open(path_or_text, encoding="utf-8").read()
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


def evaluation_rows(ev, class_names: Sequence[str] | None = None) -> list[tuple]:
    names = class_names or [f"class{i}" for i in range(len(ev.iou))]
    rows = [(i, names[i], float(v)) for i, v in enumerate(ev.iou)]
    rows.append(("miou", "", float(ev.miou)))
    rows.append(("accuracy", "", float(ev.accuracy)))
    return rows
