import json
from pathlib import Path

import numpy as np
import pytest

from voxcomplete.cli import PARTIAL, USAGE, int_range, main
from voxcomplete.shapes import make_objects
from voxcomplete.voxels import read_binvox, save_binvox

CUBE_OFF = """OFF
8 12 0
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
3 0 2 1
3 0 3 2
3 4 5 6
3 4 6 7
3 0 1 5
3 0 5 4
3 2 3 7
3 2 7 6
3 1 2 6
3 1 6 5
3 0 4 7
3 0 7 3
"""

TINY_CONFIG = {"arch": {"dim": 8, "num_classes": 6, "enc_channels": [4, 8], "dec_channels": [4, 1],
                        "se_ratio": 2, "label_embed_dim": 4, "label_channels": 2, "critic_hidden": 8},
               "train": {"batch_size": 4}}


def lines(path):
    return Path(path).read_text().splitlines()


@pytest.fixture()
def objects(tmp_path):
    """Eight dim-8 objects with a manifest."""
    grids, labels = make_objects(2, 8, seed=0)
    d = tmp_path / "objects"
    d.mkdir()
    recs = []
    for i, (g, lab) in enumerate(zip(grids[:8], labels[:8])):
        save_binvox(g, d / f"o{i}.binvox")
        recs.append({"path": f"o{i}.binvox", "label": lab, "split": "test" if i >= 6 else "train"})
    (d / "manifest.jsonl").write_text("".join(json.dumps(r) + "\n" for r in recs))
    (tmp_path / "tiny.json").write_text(json.dumps(TINY_CONFIG))
    return d / "manifest.jsonl"


# ------------------------------------------------------------ voxelize

def test_voxelize_one_cube(tmp_path):
    (tmp_path / "m").mkdir()
    (tmp_path / "m" / "cube.off").write_text(CUBE_OFF)
    assert main(["voxelize", "--input", str(tmp_path / "m"), "--dim", "8", "--out", str(tmp_path / "v")]) == 0
    assert len(lines(tmp_path / "v" / "manifest.jsonl")) == 1
    g = read_binvox(tmp_path / "v" / "cube.binvox")
    assert g.dim == 8 and g.occupied_count() == 6 ** 3


def test_voxelize_empty_dir_warns(tmp_path, capsys):
    (tmp_path / "m").mkdir()
    assert main(["voxelize", "--input", str(tmp_path / "m"), "--out", str(tmp_path / "v")]) == 0
    assert lines(tmp_path / "v" / "manifest.jsonl") == []
    assert "warning" in capsys.readouterr().err


def test_voxelize_partial_failure(tmp_path):
    (tmp_path / "m").mkdir()
    (tmp_path / "m" / "cube.off").write_text(CUBE_OFF)
    (tmp_path / "m" / "bad.off").write_text("OFF\n3 1 0\n0 0 0\n")
    rc = main(["voxelize", "--input", str(tmp_path / "m"), "--dim", "8", "--out", str(tmp_path / "v")])
    assert rc == PARTIAL
    assert len(lines(tmp_path / "v" / "manifest.jsonl")) == 1
    assert "bad.off" in (tmp_path / "v" / "errors.log").read_text()


# ------------------------------------------------------------ fracture

def test_fracture_counts_and_determinism(tmp_path, objects):
    (objects.parent / "two.jsonl").write_text("\n".join(lines(objects)[:2]) + "\n")
    args = ["fracture", "--manifest", str(objects.parent / "two.jsonl"), "--pairs", "3", "--m", "2:3",
            "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert len(lines(tmp_path / "a" / "pairs.jsonl")) == 6
    for f in sorted((tmp_path / "a" / "fractured").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / "fractured" / f.name).read_bytes()
    assert (tmp_path / "a" / "pairs.jsonl").read_bytes() == (tmp_path / "b" / "pairs.jsonl").read_bytes()


def test_fracture_split_filter(tmp_path, objects):
    assert main(["fracture", "--manifest", str(objects), "--split", "test", "--m", "2:3",
                 "--out", str(tmp_path / "f")]) == 0
    recs = [json.loads(x) for x in lines(tmp_path / "f" / "pairs.jsonl")]
    assert len(recs) == 2 and all(r["split"] == "test" for r in recs)


# ------------------------------------------------- train and friends

def test_train_eval_reconstruct_sweep(tmp_path, objects, capsys):
    cfg = str(tmp_path / "tiny.json")
    assert main(["fracture", "--manifest", str(objects), "--m", "2:3", "--out", str(tmp_path / "f")]) == 0
    pairs = str(tmp_path / "f" / "pairs.jsonl")
    run = tmp_path / "run"
    assert main(["train", "--pairs", pairs, "--split", "train", "--config", cfg, "--epochs", "1",
                 "--out", str(run)]) == 0
    assert [p.name for p in (run / "checkpoints").iterdir()] == ["epoch-0001.ckpt"]
    log = lines(run / "progress.log")
    assert len(log) == 1 and log[0].startswith("epoch=1")
    assert (run / "progress.png").stat().st_size > 0

    # resume one more epoch
    run2 = tmp_path / "run2"
    assert main(["train", "--pairs", pairs, "--split", "train", "--config", cfg, "--epochs", "2",
                 "--resume", str(run / "checkpoints" / "epoch-0001.ckpt"), "--out", str(run2),
                 "--no-figures"]) == 0
    assert len(lines(run2 / "progress.log")) == 2
    ckpt = str(run2 / "checkpoints" / "epoch-0002.ckpt")

    src = str(objects.parent / "o0.binvox")
    assert main(["reconstruct", "--checkpoint", ckpt, "--input", src, "--label", "0",
                 "--iterations", "2", "--out", str(tmp_path / "r.binvox")]) == 0
    assert read_binvox(tmp_path / "r.binvox").dim == 8
    assert main(["reconstruct", "--checkpoint", ckpt, "--input", src, "--label", "6",
                 "--out", str(tmp_path / "r2.binvox")]) == USAGE
    assert main(["reconstruct", "--checkpoint", str(tmp_path / "nope"), "--input", src, "--label", "0",
                 "--out", str(tmp_path / "r3.binvox")]) == USAGE

    assert main(["eval", "--checkpoint", ckpt, "--pairs", pairs, "--split", "test",
                 "--out", str(tmp_path / "ev")]) == 0
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert len(rep["classes"]) == 2 and rep["output_loss"] >= 0
    assert (tmp_path / "ev" / "report.png").exists()
    assert "Overall" in (tmp_path / "ev" / "report.txt").read_text()

    assert main(["eval", "--identity", "--pairs", pairs, "--out", str(tmp_path / "id")]) == 0
    rep = json.loads((tmp_path / "id" / "report.json").read_text())
    assert rep["output_loss"] == rep["input_loss"]

    capsys.readouterr()
    assert main(["sweep", "--checkpoint", ckpt, "--manifest", str(objects), "--sizes", "1:3",
                 "--out", str(tmp_path / "sw")]) == 0
    csv_lines = lines(tmp_path / "sw" / "sweep.csv")
    assert csv_lines[0] == "size,missing_fraction,recovery,misplaced_rate" and len(csv_lines) == 4
    assert "closest to 40% missing" in capsys.readouterr().out
    assert (tmp_path / "sw" / "sweep.png").exists()


# --------------------------------------------------------------- errors

def test_config_error_names_key(tmp_path, objects, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"train": {"lamda_gp": 3}}))
    rc = main(["train", "--pairs", str(objects), "--config", str(tmp_path / "bad.json"),
               "--out", str(tmp_path / "o")])
    assert rc == USAGE
    assert "lamda_gp" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    (tmp_path / "bad2.json").write_text(json.dumps({"model": {}}))
    assert main(["train", "--pairs", str(objects), "--config", str(tmp_path / "bad2.json"),
                 "--out", str(tmp_path / "o")]) == USAGE
    assert "model" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["bogus"], ["fracture", "--manifest", "x", "--n", "4:1", "--out", "o"],
                                  ["eval", "--pairs", "p", "--out", "o"],
                                  ["fracture", "--manifest", "/nonexistent.jsonl", "--out", "o"]])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == USAGE


def test_int_range():
    assert int_range("1:4") == (1, 4) and int_range("7") == (7, 7)
    for bad in ("4:1", "a:b", "1:2:3"):
        with pytest.raises(Exception):
            int_range(bad)
