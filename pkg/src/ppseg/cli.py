"""Command-line pipeline: ``ppseg {project,train,infer,eval,bench,ablate}``.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data error.
``PPSEG_THREADS`` caps the number of scans processed concurrently.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint, kernels
from . import config as cfgmod
from .baseline import BenchRow, bench_backends, bench_compare, pick_grid, rows_to_csv
from .lidar_io import FormatError, LabelMap, load_labeled_scan, read_labels, read_scan, write_predictions
from .metrics import confusion_matrix, scores
from .model import StageError, build_model_spec, forward, init_params
from .projection import ConfigError, project
from .report import ABLATION_FIELDS, EVAL_FIELDS, KERNEL_FIELDS, emit_plotdata, evaluation_rows
from .synthetic import CLASS_NAMES, cloud_of_size, scene_set

logger = logging.getLogger("ppseg")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


class DataError(Exception):
    """Input data missing or inconsistent."""


def worker_count() -> int:
    raw = os.environ.get("PPSEG_THREADS")
    cap = os.cpu_count() or 1
    if raw is None:
        return cap
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PPSEG_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("PPSEG_THREADS must be at least 1")
    return min(n, cap)


def parallel_map(fn, items):
    items = list(items)
    n = min(worker_count(), max(1, len(items)))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# data discovery
# ---------------------------------------------------------------------------


def synthetic_label_map() -> LabelMap:
    return LabelMap([(i, i, name) for i, name in enumerate(CLASS_NAMES)])


def find_scans(paths) -> list[Path]:
    out: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.rglob("*.bin")))
        elif p.is_file():
            out.append(p)
        else:
            raise DataError(f"no such scan file or directory: {p}")
    if not out:
        raise DataError("no .bin scans found")
    return out


def label_path_for(scan: Path, label_dir: str | None) -> Path:
    if label_dir is not None:
        return Path(label_dir) / (scan.stem + ".label")
    sibling = scan.parent.parent / "labels" / (scan.stem + ".label")
    return sibling if sibling.exists() else scan.with_suffix(".label")


class Dataset:
    """Named scans plus the label map used to interpret and export them."""

    def __init__(self, names, clouds, label_map):
        self.names, self.clouds, self.label_map = list(names), list(clouds), label_map


def load_dataset(args, flat, need_labels: bool) -> Dataset:
    from .projection import ProjectionConfig

    if getattr(args, "synthetic", None):
        proj = ProjectionConfig.from_degrees(
            cfgmod.checked(cfgmod.get_int, flat, "proj.height"),
            cfgmod.checked(cfgmod.get_int, flat, "proj.width"),
            cfgmod.checked(cfgmod.get_float, flat, "proj.fov_up_deg"),
            cfgmod.checked(cfgmod.get_float, flat, "proj.fov_down_deg"),
        )
        clouds = scene_set(args.synthetic, proj, seed=args.data_seed)
        names = [f"synthetic_{args.data_seed + i:06d}" for i in range(args.synthetic)]
        return Dataset(names, clouds, synthetic_label_map())
    if not args.scans:
        raise DataError("give scan files/directories or --synthetic N")
    label_map = LabelMap.load(args.label_map) if args.label_map else LabelMap.semantic_kitti()
    paths = find_scans(args.scans)
    clouds = []
    for p in paths:
        if need_labels:
            lp = label_path_for(p, args.labels)
            if not lp.exists():
                raise DataError(f"no labels for {p} (looked for {lp})")
            clouds.append(load_labeled_scan(p, lp, label_map))
        else:
            clouds.append(read_scan(p))
    return Dataset([p.stem for p in paths], clouds, label_map)


def check_classes(model, ds: Dataset) -> None:
    for name, c in zip(ds.names, ds.clouds):
        if c.label is not None and c.label.size and c.label.max() >= model.n_classes:
            raise ConfigError(
                f"{name}: label {int(c.label.max())} outside model.num_classes={model.n_classes}"
            )


def load_model(path):
    params, nets, flat = checkpoint.load(path)
    model = build_model_spec(flat)
    want = model.nets()
    if set(want) != set(nets) or any(want[k].widths != nets[k].widths for k in want):
        raise checkpoint.CheckpointError(f"{path}: stored networks do not match the stored config")
    return model, params


def knn_options(args, flat):
    enabled = args.knn or cfgmod.checked(cfgmod.get_bool, flat, "knn.enabled")
    if not enabled:
        return None
    return {
        "window": args.knn_window if args.knn_window is not None else cfgmod.checked(cfgmod.get_int, flat, "knn.window"),
        "k": args.knn_k if args.knn_k is not None else cfgmod.checked(cfgmod.get_int, flat, "knn.k"),
        "sigma": args.knn_sigma if args.knn_sigma is not None else cfgmod.checked(cfgmod.get_float, flat, "knn.sigma"),
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_project(args) -> int:
    flat = cfgmod.load(args.config)
    model_proj = build_model_spec(flat).projection
    cloud = read_scan(args.scan)
    image = project(cloud, model_proj)
    n_valid = int(image.valid.sum())
    print(
        f"{args.scan}: {cloud.n} points -> {image.shape[0]}x{image.shape[1]} image, "
        f"{n_valid} valid pixels, {image.skipped} skipped"
    )
    if args.out:
        np.savez_compressed(
            args.out, channels=image.channels, valid=image.valid, pix2pt=image.pix2pt, pt2pix=image.pt2pix
        )
    return EXIT_OK


def _override(flat, args, pairs):
    for attr, key in pairs:
        val = getattr(args, attr, None)
        if val is not None:
            flat[key] = str(val)


def cmd_train(args) -> int:
    from .train import train

    flat = cfgmod.load(args.config)
    _override(flat, args, [("epochs", "train.epochs"), ("lr", "train.lr"), ("seed", "train.seed")])
    model = build_model_spec(flat)
    ds = load_dataset(args, flat, need_labels=True)
    check_classes(model, ds)
    g = lambda fn, key: cfgmod.checked(fn, flat, key)  # noqa: E731
    epochs = g(cfgmod.get_int, "train.epochs")
    if args.steps is not None and args.epochs is None:
        epochs = -(-args.steps // len(ds.clouds))  # enough passes to reach --steps
    res = train(
        model,
        ds.clouds,
        epochs=epochs,
        lr=g(cfgmod.get_float, "train.lr"),
        seed=g(cfgmod.get_int, "train.seed"),
        momentum=g(cfgmod.get_float, "train.momentum"),
        augment=g(cfgmod.get_bool, "train.augment"),
        checkpoint_path=args.out,
        loss_csv=args.loss_csv,
        max_steps=args.steps,
    )
    last = f"{res.losses[-1]:.4f}" if res.losses else "n/a"
    print(f"trained {len(res.losses)} steps, final loss {last}, checkpoint {args.out}")
    return EXIT_OK


def _predict_all(model, params, ds: Dataset, knn):
    return parallel_map(lambda c: forward(model, params, c, knn=knn).point_pred, ds.clouds)


def cmd_infer(args) -> int:
    model, params = load_model(args.checkpoint)
    ds = load_dataset(args, model.flat, need_labels=False)
    knn = knn_options(args, model.flat)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    preds = _predict_all(model, params, ds, knn)
    elapsed = time.perf_counter() - t0
    for name, cloud, pred in zip(ds.names, ds.clouds, preds):
        try:
            write_predictions(out / f"{name}.label", cloud, pred, ds.label_map)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from None
    print(f"wrote {len(preds)} prediction files to {out} ({len(preds) / max(elapsed, 1e-9):.2f} scans/sec)")
    return EXIT_OK


def _pair_files(pred_paths, gt_paths):
    preds = {p.stem: p for p in _label_files(pred_paths)}
    gts = {p.stem: p for p in _label_files(gt_paths)}
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise DataError(f"prediction/ground-truth files do not pair up: {missing[:5]}")
    return [(preds[k], gts[k]) for k in sorted(preds)]


def _label_files(paths):
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.rglob("*.label")))
        elif p.is_file():
            out.append(p)
        else:
            raise DataError(f"no such label file or directory: {p}")
    return out


def cmd_eval(args) -> int:
    if args.checkpoint:
        model, params = load_model(args.checkpoint)
        ds = load_dataset(args, model.flat, need_labels=True)
        check_classes(model, ds)
        n_cls, names = model.n_classes, ds.label_map.class_names
        preds = _predict_all(model, params, ds, knn_options(args, model.flat))
        conf = sum(confusion_matrix(p, c.label, n_cls) for p, c in zip(preds, ds.clouds))
    else:
        if not (args.pred and args.gt):
            raise DataError("eval needs --checkpoint with scans, or --pred and --gt label files")
        label_map = LabelMap.load(args.label_map) if args.label_map else LabelMap.semantic_kitti()
        n_cls, names = label_map.n_classes, label_map.class_names
        conf = np.zeros((n_cls, n_cls), dtype=np.int64)
        for pp, gp in _pair_files(args.pred, args.gt):
            p, _, _ = read_labels(pp, label_map)
            g, _, _ = read_labels(gp, label_map, n_points=p.size)
            # predictions of ignored raw ids count as wrong only if the truth is labeled
            p = np.where((p < 0) & (g >= 0), (g + 1) % n_cls, p)
            conf += confusion_matrix(p, g, n_cls)
    ev = scores(conf)
    for i, name in enumerate(names):
        print(f"  {i:2d} {name:<16s} IoU {ev.iou[i]:.4f}")
    print(f"mIoU {ev.miou:.4f}  accuracy {ev.accuracy:.4f}  points {ev.total}")
    if args.csv:
        emit_plotdata(EVAL_FIELDS, evaluation_rows(ev, names), args.csv)
    return EXIT_OK


def cmd_bench(args) -> int:
    cloud = cloud_of_size(args.n, seed=args.seed)
    oh, ow = pick_grid(args.height, args.width, args.m)
    configs = [dict(height=args.height, width=args.width, out_height=oh, out_width=ow, k=args.k, radius=args.radius)]
    if args.backend == "all":
        names = sorted(kernels.backends(), key=lambda b: b != kernels.BACKEND)  # active backend first
    else:
        names = [None if args.backend == "active" else args.backend]
    rows: list[BenchRow] = []
    for i, name in enumerate(names):
        # the point-domain baseline is timed once, with the active backend
        rows += bench_compare(cloud, configs, reps=args.reps, backend=name, include_baseline=not args.no_baseline and i == 0)
    for r in rows:
        print(f"{r.method:<16s} backend={r.backend:<7s} n={r.n} M={r.m} k={r.k} median {r.median_ms:.3f} ms")
    proj = [r for r in rows if r.method == "projected"]
    base = [r for r in rows if r.method != "projected"]
    if proj and base:
        print(f"speedup (fps+ball_query / projected, {proj[0].backend}): {base[0].median_ms / proj[0].median_ms:.1f}x")
    if args.csv:
        rows_to_csv(rows, args.csv)
    if args.kernel_csv:
        krows = bench_backends(cloud, args.height, args.width, args.m, args.k, args.radius, args.reps)
        for kname, be, ms in krows:
            print(f"kernel {kname:<13s} {be:<7s} {ms:.3f} ms")
        emit_plotdata(KERNEL_FIELDS, krows, args.kernel_csv)
    return EXIT_OK


ABLATE_KEYS = {"k": "model.k", "width": "proj.width", "height": "proj.height"}


def cmd_ablate(args) -> int:
    from .train import train

    base = cfgmod.load(args.config)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be integers, got {args.values!r}") from None
    rows = []
    for val in values:
        flat = dict(base)
        flat[ABLATE_KEYS[args.param]] = str(val)
        model = build_model_spec(flat)
        train_set = scene_set(args.train_scans, model.projection, seed=args.data_seed)
        eval_set = scene_set(args.eval_scans, model.projection, seed=args.data_seed + 10_000)
        check_classes(model, Dataset([], train_set + eval_set, None))
        if args.steps:
            params = train(
                model,
                train_set,
                epochs=10**9,
                lr=cfgmod.checked(cfgmod.get_float, flat, "train.lr"),
                seed=cfgmod.checked(cfgmod.get_int, flat, "train.seed"),
                momentum=cfgmod.checked(cfgmod.get_float, flat, "train.momentum"),
                max_steps=args.steps,
            ).params
        else:
            params = init_params(model)
        t0 = time.perf_counter()
        preds = [forward(model, params, c).point_pred for c in eval_set]
        rate = len(eval_set) / (time.perf_counter() - t0)
        conf = sum(confusion_matrix(p, c.label, model.n_classes) for p, c in zip(preds, eval_set))
        ev = scores(conf)
        rows.append((val, ev.accuracy, ev.miou, rate))
        print(f"{args.param}={val}: acc {ev.accuracy:.4f} mIoU {ev.miou:.4f} {rate:.2f} scans/sec")
    fields = (args.param,) + ABLATION_FIELDS[1:]
    text = emit_plotdata(fields, rows, args.csv)
    if not args.csv:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _data_args(p, labels=True):
    p.add_argument("scans", nargs="*", help=".bin files or directories searched recursively")
    p.add_argument("--synthetic", type=int, metavar="N", help="use N generated scenes instead of files")
    p.add_argument("--data-seed", type=int, default=0, help="first seed of the generated scenes")
    p.add_argument("--label-map", help="label map text file (default: bundled SemanticKITTI map)")
    if labels:
        p.add_argument("--labels", help="directory holding <scan>.label files")


def _knn_args(p):
    p.add_argument("--knn", action="store_true", help="refine per-point labels by range-image k-NN voting")
    p.add_argument("--knn-window", type=int, help="odd window side in pixels")
    p.add_argument("--knn-k", type=int, help="number of voting pixels")
    p.add_argument("--knn-sigma", type=float, help="range bandwidth of the vote weights, meters")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ppseg", description="Projected-point LiDAR semantic segmentation")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="project a scan to a range image")
    p.add_argument("scan")
    p.add_argument("--config")
    p.add_argument("--out", help="write channels/valid/pix2pt/pt2pix to an .npz file")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _data_args(p)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", help="per-step loss curve (step,loss)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int, help="stop after this many updates")
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict labels for scans")
    _data_args(p, labels=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    _knn_args(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="confusion matrix, IoU and accuracy")
    _data_args(p)
    p.add_argument("--checkpoint", help="evaluate a model on labeled scans")
    p.add_argument("--pred", nargs="+", help="prediction .label files or directories")
    p.add_argument("--gt", nargs="+", help="ground-truth .label files or directories")
    p.add_argument("--csv", help="per-class IoU plot data")
    _knn_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time projected vs point-domain sampling and grouping")
    p.add_argument("--n", type=int, default=120_000, help="points in the synthetic cloud")
    p.add_argument("--m", type=int, default=2048, help="sampled points")
    p.add_argument("--k", type=int, default=5, help="window side")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", default="active", choices=("active", "python", "cython", "all"))
    p.add_argument("--no-baseline", action="store_true", help="skip the fps+ball_query timing")
    p.add_argument("--csv", help="method timings (method,n,M,k,median_ms,backend)")
    p.add_argument("--kernel-csv", help="also time each kernel per backend (kernel,backend,median_ms)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="accuracy and throughput across window sizes or resolutions")
    p.add_argument("--config")
    p.add_argument("--param", choices=sorted(ABLATE_KEYS), default="k")
    p.add_argument("--values", default="3,5,7")
    p.add_argument("--steps", type=int, default=0, help="training updates per setting (0 = untrained)")
    p.add_argument("--train-scans", type=int, default=5)
    p.add_argument("--eval-scans", type=int, default=3)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        return _report(exc.cause, f"{exc.stage}: ")
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        return _report(exc)


def _report(exc, prefix="") -> int:
    if isinstance(exc, ConfigError):
        code = EXIT_CONFIG
    elif isinstance(exc, (DataError, FormatError, checkpoint.CheckpointError, OSError)):
        code = EXIT_DATA
    else:
        code = EXIT_FAIL
    print(f"ppseg: error: {prefix}{exc}", file=sys.stderr)
    if code == EXIT_FAIL:
        logger.debug("traceback", exc_info=exc)
    return code


if __name__ == "__main__":
    sys.exit(main())
