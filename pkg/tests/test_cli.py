import numpy as np
import pytest

from ppseg.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from ppseg.lidar_io import LabelMap, read_labels, write_labels, write_scan
from ppseg.report import read_plotdata
from ppseg.synthetic import synthetic_scan


@pytest.fixture
def cfg(tmp_path, tiny_config):
    p = tmp_path / "tiny.cfg"
    p.write_text("".join(f"{k} = {v}\n" for k, v in tiny_config.items()))
    return str(p)


@pytest.fixture
def trained(tmp_path, cfg):
    ckpt = tmp_path / "m.ckpt"
    rc = main(["train", "--synthetic", "2", "--config", cfg, "--out", str(ckpt), "--steps", "3", "--loss-csv", str(tmp_path / "loss.csv")])
    assert rc == EXIT_OK
    return ckpt


def test_train_writes_checkpoint_and_loss_curve(tmp_path, trained):
    header, rows = read_plotdata(tmp_path / "loss.csv")
    assert header == ["step", "loss"] and len(rows) == 3
    assert trained.stat().st_size > 0


def test_infer_writes_label_files(tmp_path, trained):
    out = tmp_path / "pred"
    assert main(["infer", "--synthetic", "2", "--checkpoint", str(trained), "--out-dir", str(out), "--knn"]) == EXIT_OK
    files = sorted(out.glob("*.label"))
    assert len(files) == 2
    assert files[0].stat().st_size % 4 == 0 and files[0].stat().st_size > 0


def test_eval_with_checkpoint(tmp_path, trained, capsys):
    csv_path = tmp_path / "iou.csv"
    assert main(["eval", "--synthetic", "2", "--checkpoint", str(trained), "--csv", str(csv_path)]) == EXIT_OK
    assert "mIoU" in capsys.readouterr().out
    header, rows = read_plotdata(csv_path)
    assert header == ["class", "name", "iou"] and rows[-1][0] == "accuracy"


def test_eval_pred_gt_pairs(tmp_path, capsys):
    lm = LabelMap.semantic_kitti()
    raw = lm.to_raw([0, 0, 0, 1])
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    write_labels(tmp_path / "p" / "000.label", raw)
    write_labels(tmp_path / "g" / "000.label", raw)
    assert main(["eval", "--pred", str(tmp_path / "p"), "--gt", str(tmp_path / "g")]) == EXIT_OK
    assert "accuracy 1.0000" in capsys.readouterr().out


def test_project_npz(tmp_path, cfg):
    scan = tmp_path / "s.bin"
    write_scan(scan, synthetic_scan(0))
    out = tmp_path / "img.npz"
    assert main(["project", str(scan), "--config", cfg, "--out", str(out)]) == EXIT_OK
    z = np.load(out)
    assert z["valid"].shape == (16, 128)


def test_bench_and_ablate(tmp_path, cfg):
    rc = main(["bench", "--n", "4000", "--m", "128", "--reps", "1", "--height", "16", "--width", "128",
               "--backend", "all", "--csv", str(tmp_path / "b.csv"), "--kernel-csv", str(tmp_path / "k.csv")])
    assert rc == EXIT_OK
    header, rows = read_plotdata(tmp_path / "k.csv")
    assert header == ["kernel", "backend", "median_ms"] and rows
    rc = main(["ablate", "--config", cfg, "--values", "3,5,7", "--train-scans", "1", "--eval-scans", "1", "--csv", str(tmp_path / "a.csv")])
    assert rc == EXIT_OK
    header, rows = read_plotdata(tmp_path / "a.csv")
    assert header == ["k", "acc", "miou", "scans_per_sec"] and [r[0] for r in rows] == ["3", "5", "7"]


def test_exit_codes(tmp_path, cfg, trained, monkeypatch):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nope.key = 1\n")
    assert main(["train", "--synthetic", "1", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["train", "--synthetic", "1", "--config", str(tmp_path / "absent"), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    trunc = tmp_path / "t.bin"
    trunc.write_bytes(b"\0" * 10)
    assert main(["project", str(trunc)]) == EXIT_DATA
    assert main(["infer", "--synthetic", "1", "--checkpoint", str(tmp_path / "absent.ckpt"), "--out-dir", str(tmp_path)]) == EXIT_DATA
    assert main(["eval", "--synthetic", "1"]) == EXIT_DATA
    monkeypatch.setenv("PPSEG_THREADS", "lots")
    assert main(["infer", "--synthetic", "1", "--checkpoint", str(trained), "--out-dir", str(tmp_path / "o")]) == EXIT_CONFIG


def test_labels_round_trip_through_cli_map(tmp_path):
    lm = LabelMap.semantic_kitti()
    raw = lm.to_raw([0, 1, 2, 3])
    write_labels(tmp_path / "a.label", raw)
    sem, raw_back, _ = read_labels(tmp_path / "a.label", lm)
    np.testing.assert_array_equal(raw_back, raw)
    np.testing.assert_array_equal(sem, [0, 1, 2, 3])
