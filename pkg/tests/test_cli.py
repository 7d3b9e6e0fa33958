import json

import numpy as np
import pytest
from PIL import Image

from sitar import cli
from sitar.experiment import STUDIES, _layout_side, format_table, study_grid
from sitar.trainer import TrainConfig

SYN = "num_classes=4\nvideos_per_class=3\nresolution=32\nframes_per_video=8\nseed=3\n"
TRAIN = ("super_image_side=48\nphase1_epochs=1\nphase2_epochs=1\nlabeled_batch=2\nmu=1\n"
         "encoder_width=8\nhead_hidden=16\n")


@pytest.fixture
def dataset(tmp_path):
    (tmp_path / "syn.txt").write_text(SYN)
    assert cli.main(["make-synthetic", "--spec", str(tmp_path / "syn.txt"), "--out", str(tmp_path / "d")]) == 0
    assert cli.main(["split", "--manifest", str(tmp_path / "d/manifest.jsonl"), "--fraction", "0.34", "--seed", "1"]) == 0
    return tmp_path


def test_make_synthetic_writes_manifest_and_snapshot(dataset, capsys):
    d = dataset / "d"
    assert (d / "manifest.jsonl").exists()
    snap = (d / "resolved_config.txt").read_text()
    assert "videos_per_class=3" in snap and "seed=3" in snap


def test_sitar_seed_env_overrides(tmp_path, monkeypatch):
    (tmp_path / "syn.txt").write_text(SYN)
    monkeypatch.setenv("SITAR_SEED", "42")
    assert cli.main(["make-synthetic", "--spec", str(tmp_path / "syn.txt"), "--out", str(tmp_path / "d")]) == 0
    assert "seed=42" in (tmp_path / "d/resolved_config.txt").read_text()


def test_bad_sitar_seed_is_usage_error(tmp_path, monkeypatch):
    monkeypatch.setenv("SITAR_SEED", "abc")
    assert cli.main(["make-synthetic", "--out", str(tmp_path / "d")]) == 2


def test_split_outputs(dataset):
    lab = (dataset / "d/labeled.jsonl").read_text().splitlines()
    unl = (dataset / "d/unlabeled.jsonl").read_text().splitlines()
    assert len(lab) - 1 == 4 and len(unl) - 1 == 8
    assert all(json.loads(line)["label"] == -1 for line in unl[1:])


def test_split_fraction_too_small_is_data_error(dataset, capsys):
    rc = cli.main(["split", "--manifest", str(dataset / "d/manifest.jsonl"), "--fraction", "0.1", "--seed", "0"])
    assert rc == 3
    assert "class" in capsys.readouterr().err


def test_train_eval_roundtrip(dataset, capsys):
    (dataset / "tr.txt").write_text(TRAIN + f"labeled={dataset}/d/labeled.jsonl\nunlabeled={dataset}/d/unlabeled.jsonl\n")
    assert cli.main(["train-phase1", "--config", str(dataset / "tr.txt"), "--override", f"out={dataset}/r1"]) == 0
    assert cli.main(["train-phase2", "--config", str(dataset / "tr.txt"),
                     "--override", f"out={dataset}/r2", f"init={dataset}/r1/last.ckpt"]) == 0
    for run in ("r1", "r2"):
        assert (dataset / run / "metrics.jsonl").exists()
        assert "labeled=" in (dataset / run / "run_config.txt").read_text()
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", f"{dataset}/r2/last.ckpt", "--manifest", f"{dataset}/d/manifest.jsonl"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("top1=")
    report = json.loads((dataset / "r2/eval_report.json").read_text())
    assert report["top1"] == pytest.approx(float(line.split("=")[1]), abs=1e-6)
    assert report["num_samples"] == 12


def test_snapshot_rerun_is_identical(dataset):
    (dataset / "tr.txt").write_text(TRAIN + f"labeled={dataset}/d/labeled.jsonl\n")
    assert cli.main(["train-phase1", "--config", str(dataset / "tr.txt"), "--override", f"out={dataset}/a"]) == 0
    snap = dataset / "a/run_config.txt"
    assert cli.main(["train-phase1", "--config", str(snap), "--override", f"out={dataset}/b"]) == 0
    assert (dataset / "a/metrics.jsonl").read_text() == (dataset / "b/metrics.jsonl").read_text()


def test_unknown_config_key_named(dataset, capsys):
    (dataset / "bad.txt").write_text("phase1_epochs=1\nlearning_rate=0.1\n")
    assert cli.main(["train-phase1", "--config", str(dataset / "bad.txt")]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_phase2_missing_paths_usage(capsys):
    assert cli.main(["train-phase2", "--override", "labeled=x"]) == 2
    err = capsys.readouterr().err
    assert "unlabeled" in err and "init" in err


def test_missing_manifest_is_data_error(tmp_path):
    assert cli.main(["train-phase1", "--override", f"labeled={tmp_path}/none.jsonl"]) == 3


def test_unknown_subcommand_and_study(capsys):
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["ablate", "--study", "depth"]) == 2
    err = capsys.readouterr().err
    for s in STUDIES:
        assert s in err


@pytest.mark.parametrize("order", ["normal", "reverse", "random"])
def test_compose_superimage_png(dataset, order, capsys):
    vid = sorted(p for p in (dataset / "d").iterdir() if p.is_dir())[0]
    out = dataset / f"{order}.png"
    assert cli.main(["compose-superimage", "--video", str(vid), "--frames", "4", "--order", order, "--out", str(out)]) == 0
    img = np.asarray(Image.open(out))
    assert img.shape == (64, 64, 3)
    first = np.asarray(Image.open(vid / "00000.png"))
    # frame 0 sits top-left under normal order, bottom-right under reverse
    src_idx = [int(s) for s in capsys.readouterr().out.split("frames=")[1].strip("[]\n").split(",")]
    cell = src_idx.index(0) if 0 in src_idx else None
    if order == "normal":
        assert src_idx == sorted(src_idx)
    if order == "reverse":
        assert src_idx == sorted(src_idx, reverse=True)
    if cell is not None:
        r, c = divmod(cell, 2)
        np.testing.assert_array_equal(img[r * 32:(r + 1) * 32, c * 32:(c + 1) * 32], first)


def test_compose_missing_video_is_data_error(tmp_path):
    assert cli.main(["compose-superimage", "--video", str(tmp_path / "nope"), "--frames", "4",
                     "--out", str(tmp_path / "x.png")]) == 3


def test_study_grids():
    base = TrainConfig(super_image_side=96)
    assert [n for n, _ in study_grid("order", base)] == ["normal", "random", "reverse"]
    assert [kw["mu"] for _, kw in study_grid("mu", base)] == [2, 4, 6, 8]
    assert [kw["gamma"] for _, kw in study_grid("gamma", base)] == [0.1, 0.2, 0.4, 0.6, 0.8, 1.0]
    assert [kw["beta"] for _, kw in study_grid("beta", base)] == [0.5, 1.0, 2.0, 4.0]
    gl = dict(study_grid("group_loss", base))
    assert gl["beta=0"] == {"beta": 0.0} and gl["pseudo_consistency"]["loss_mode"] == "pseudo_consistency"
    layout = study_grid("layout", base)
    assert len(layout) == 3
    for _, kw in layout:  # every variant must be constructible
        TrainConfig(**{**base.__dict__, **kw}).super_images
    assert _layout_side(576, 8) == 768 and _layout_side(96, 8) == 144


def test_format_table_aligned():
    rows = [{"variant": "a", "top1_phase1": 0.1, "top1": 0.5, "L_sup": 1.0, "L_ic": 2.0, "L_gc": 3.0},
            {"variant": "longer-name", "top1_phase1": 0.1, "top1": 0.25, "L_sup": 1.0, "L_ic": 2.0, "L_gc": 3.0}]
    lines = format_table(rows).splitlines()
    assert len(lines) == 4
    assert len({line.index("top1 ") for line in lines[:1]}) == 1
    assert lines[2].index("0.1000") == lines[3].index("0.1000")


def test_ablate_tiny_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "ab.txt"
    cfg.write_text(TRAIN + "experiment.labeled_per_class=1\nexperiment.unlabeled_per_class=2\n"
                   "experiment.test_per_class=1\nexperiment.seeds=0\n"
                   f"experiment.data_dir={tmp_path}/data\n"
                   "synthetic.num_classes=4\nsynthetic.resolution=32\nsynthetic.frames_per_video=8\n")
    assert cli.main(["ablate", "--study", "order", "--config", str(cfg), "--out", str(tmp_path / "ab")]) == 0
    table = json.loads((tmp_path / "ab/order.json").read_text())
    assert [r["variant"] for r in table["rows"]] == ["normal", "random", "reverse"]
    for r in table["rows"]:
        assert {"top1", "L_sup", "L_ic", "L_gc"} <= r.keys()
    text = (tmp_path / "ab/order.txt").read_text()
    assert text.splitlines()[0].split() == ["variant", "top1_phase1", "top1", "L_sup", "L_ic", "L_gc"]
    assert (tmp_path / "ab/resolved_config.txt").read_text().count("experiment.") == 5


def test_ablate_parallel_requires_fresh_dir(tmp_path):
    (tmp_path / "ab").mkdir()
    (tmp_path / "ab/old.txt").write_text("x")
    assert cli.main(["ablate", "--study", "mu", "--out", str(tmp_path / "ab"), "--parallel", "2"]) == 2
