from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import make_set
from fixtures import dead_image
from relabel import cli
from relabel.errors import SolverError
from relabel.geometry import Detection, apply_view, default_views
from relabel.io import read_annotations, read_pgm, write_annotations, write_pgm, write_view_predictions

SMALL = {"world": {"n_images": 3, "n_source": 4}, "max_epochs": 6, "frame_every": 2}


@pytest.fixture
def gt_file(tmp_path):
    path = tmp_path / "gt.json"
    write_annotations(make_set({"a": [(0, 0, 10, 10), (50, 50, 60, 60)], "b": [(5, 5, 25, 25)]}), path)
    return path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_evaluate_identical_files(gt_file, capsys):
    code, out, _ = run(["evaluate", "--pred", gt_file, "--gt", gt_file], capsys)
    assert code == 0
    assert out.strip() == "ap50=1.0 ap75=1.0 ap=1.0 ar=1.0"


def test_evaluate_several_files_and_csv(gt_file, tmp_path, capsys):
    half = tmp_path / "half.json"
    write_annotations(make_set({"a": [(0, 0, 10, 10)], "b": []}), half)
    code, out, _ = run(["evaluate", "--pred", gt_file, "--pred", half, "--gt", gt_file,
                        "--csv", tmp_path / "r.csv"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("gt ap50=1.0") and lines[1].startswith("half ")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "annotations,ap50,ap75,ap,ar" and rows[1] == "gt,1.0,1.0,1.0,1.0"


@pytest.mark.parametrize(
    "argv",
    [["bogus"], [], ["evaluate"], ["evaluate", "--pred", "x"], ["synth", "--blur", "medium"], ["--seed", "x", "simulate"]],
)
def test_usage_errors_exit_1(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 1 and "error" in err


def test_data_errors_exit_2(gt_file, tmp_path, capsys):
    code, _, err = run(["evaluate", "--pred", tmp_path / "missing.json", "--gt", gt_file], capsys)
    assert code == 2 and "missing.json" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"images": [{"id": "a", "width": 1, "height": 1}], "annotations": '
                   '[{"image_id": "q", "bbox": [0, 0, 1, 1]}]}')
    code, _, err = run(["evaluate", "--pred", bad, "--gt", gt_file], capsys)
    assert code == 2 and "'q'" in err
    cfg = tmp_path / "c.json"
    cfg.write_text('{"threshold": 2}')
    code, _, err = run(["--config", cfg, "simulate", "--out", tmp_path / "o"], capsys)
    assert code == 2 and "threshold" in err


def test_numerical_failure_exit_3(tmp_path, capsys, monkeypatch):
    write_pgm(tmp_path / "a.pgm", np.zeros((20, 20)))
    write_annotations(make_set({"a": [(2, 2, 8, 8)]}, (20, 20)), tmp_path / "a.json")

    def fail(*args, **kwargs):
        raise SolverError("solver failed on box 0", 0.5)

    monkeypatch.setattr(cli, "compose_synthetic", fail)
    code, _, err = run(["synth", "--image", tmp_path / "a.pgm", "--annotations", tmp_path / "a.json",
                        "--out", tmp_path / "o.pgm"], capsys)
    assert code == 3 and "final residual" in err


def test_detect_transition(tmp_path, capsys):
    f = tmp_path / "curve.csv"
    f.write_text("epoch,ap50\n" + "".join(f"{t},{0.8 * (1 - math.exp(-0.5 * t))!r}\n" for t in range(1, 13)))
    assert run(["detect-transition", "--csv", f], capsys)[:2] == (0, "6\n")
    f.write_text("".join(f"{t},{0.04 * t}\n" for t in range(1, 13)))
    assert run(["detect-transition", "--csv", f], capsys)[:2] == (0, "none\n")
    assert run(["detect-transition", "--csv", f, "--threshold", "1.5"], capsys)[0] == 1
    f.write_text("epoch,ap50\n1,0.1\nx,y\n")
    assert run(["detect-transition", "--csv", f], capsys)[0] == 2


def test_synth(tmp_path, capsys):
    img = np.random.default_rng(0).integers(0, 256, (40, 48)).astype(float)
    write_pgm(tmp_path / "a.pgm", img)
    write_annotations(make_set({"a": [(5, 6, 20, 22), (25, 10, 40, 30)]}, (48, 40)), tmp_path / "a.json")
    args = ["synth", "--image", tmp_path / "a.pgm", "--annotations", tmp_path / "a.json", "--blur", "strong",
            "--margin", "2"]
    assert run(args + ["--out", tmp_path / "o1.pgm"], capsys)[0] == 0
    assert run(args + ["--out", tmp_path / "o2.pgm"], capsys)[0] == 0
    assert (tmp_path / "o1.pgm").read_bytes() == (tmp_path / "o2.pgm").read_bytes()
    assert read_pgm(tmp_path / "o1.pgm").shape == (40, 48)
    assert run(args + ["--image-id", "zz", "--out", tmp_path / "o3.pgm"], capsys)[0] == 2
    write_annotations(make_set({"a": []}, (10, 10)), tmp_path / "small.json")
    args[4] = tmp_path / "small.json"
    assert run(args + ["--out", tmp_path / "o4.pgm"], capsys)[0] == 2


def test_weaklabel_dead(tmp_path, capsys):
    write_pgm(tmp_path / "dead1.pgm", dead_image())
    code, out, _ = run(["weaklabel", "--image", tmp_path / "dead1.pgm", "--category", "dead",
                        "--rmin", 6, "--rmax", 20, "--out", tmp_path / "w.json"], capsys)
    assert code == 0
    aset = read_annotations(tmp_path / "w.json")
    assert aset.image_ids == ["dead1"] and len(aset.get("dead1")) == 5
    assert aset.image("dead1").file.endswith("dead1.pgm")
    assert run(["weaklabel", "--image", tmp_path / "dead1.pgm", "--category", "dead", "--rmin", 9,
                "--rmax", 3, "--out", tmp_path / "x.json"], capsys)[0] == 1


def test_fuse(tmp_path, capsys):
    labels = make_set({"a": [(0, 0, 5, 5)]})
    write_annotations(labels, tmp_path / "labels.json")
    pred_dir = tmp_path / "preds"
    pred_dir.mkdir()
    truth = make_set({"a": [(10, 20, 30, 40, 0.9)]}).get("a")[0]
    for k, v in enumerate(default_views()):
        preds = labels.replaced({"a": [Detection(apply_view(truth.box, v, 100, 100), 0.9)]})
        write_view_predictions(v, preds, pred_dir / f"v{k}.json")
    code, _, _ = run(["fuse", "--labels", tmp_path / "labels.json", "--pred-dir", pred_dir,
                      "--out", tmp_path / "fused.json"], capsys)
    assert code == 0
    (d,) = read_annotations(tmp_path / "fused.json").get("a")
    np.testing.assert_allclose(d.box.as_tuple(), (10, 20, 30, 40), atol=1e-9)
    assert d.score == pytest.approx(0.9)
    assert run(["fuse", "--labels", tmp_path / "labels.json", "--pred-dir", tmp_path / "empty",
                "--out", tmp_path / "x.json"], capsys)[0] == 2


def _snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_simulate_outputs_and_determinism(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert run(["--config", cfg, "simulate", "--out", tmp_path / "a"], capsys)[0] == 0
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "b"], capsys)[0] == 0
    a, b = _snapshot(tmp_path / "a"), _snapshot(tmp_path / "b")
    assert a == b
    header = a["history.csv"].decode().splitlines()[0]
    assert header.startswith("epoch,phase,ap50_vs_weak,f1,precision,recall")
    assert len(a["history.csv"].decode().splitlines()) == 7
    assert "labels/weak.json" in a and "summary.json" in a
    summary = json.loads(a["summary.json"])
    t = summary["transition_epoch"]
    assert t == 3
    frames = sorted(k for k in a if k.startswith("frames/") and "epoch" in k)
    assert [int(k.rsplit("_", 1)[1][:3]) for k in frames] == list(range(t, 7, 2))
    assert run(["--seed", 99, "simulate", "--config", cfg, "--out", tmp_path / "c"], capsys)[0] == 0
    assert _snapshot(tmp_path / "c")["labels/weak.json"] != a["labels/weak.json"]
