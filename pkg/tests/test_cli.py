import csv
import io
import json
import subprocess
import sys

import pytest

from eigenrank.cli import main
from eigenrank.formats import write_mask
from eigenrank.masks import BinaryMask


@pytest.fixture
def masks(tmp_path):
    paths = []
    for i, bits in enumerate([[1, 1, 0, 0], [1, 0, 1, 0], [1, 1, 0, 0]]):
        p = tmp_path / f"m{i}.emsk"
        write_mask(BinaryMask(2, 2, bits), p)
        paths.append(str(p))
    return paths


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["synth-gen", "--n", "40", "--seed", "3", "--width", "16", "--height", "16", "--out-dir", str(out)]) == 0
    return out / "manifest.json"


def test_dice_self(masks, capsys):
    assert main(["dice", masks[0], masks[0]]) == 0
    assert capsys.readouterr().out == "1\n"


def test_dice_and_jaccard(masks, capsys):
    main(["dice", masks[0], masks[1]])
    main(["dice", masks[0], masks[1], "--metric", "jaccard"])
    assert capsys.readouterr().out.split() == ["0.5", "0.333333333333"]


def test_matrix(masks, capsys):
    assert main(["matrix", *masks]) == 0
    out = capsys.readouterr().out
    assert "  1 0.5 1" in out
    assert "lambda_max: 2.36602540378" in out  # (3 + sqrt 3) / 2
    assert "psd: true" in out


def test_simulate_epsilon_zero(capsys):
    assert main(["simulate", "--t", "4", "9", "--epsilon", "0", "--trials", "5"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["t"] for r in rows] == ["4", "9"]
    assert all(float(r["mean_ratio"]) == 1.0 and float(r["stdev_ratio"]) == 0.0 for r in rows)


def test_synth_gen_layout(dataset):
    doc = json.loads(dataset.read_text())
    assert len(doc["cases"]) == 40 and doc["seed"] == 3
    assert (dataset.parent / doc["cases"][0]["truth"]).exists()


def test_synth_gen_bimodal(tmp_path):
    main(["synth-gen", "--n", "20", "--bimodal", "--out-dir", str(tmp_path / "b")])
    diffs = [c["difficulty"] for c in json.loads((tmp_path / "b" / "manifest.json").read_text())["cases"]]
    assert sum(d > 0.6 for d in diffs) == 2


def test_select_rank_simulate_byte_identical(dataset, tmp_path):
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        main(["select", "--manifest", str(dataset), "--k", "2", "--iterations", "4", "--seed", "1",
              "--out", str(d / "sel.json")])
        models = json.loads((d / "sel.json").read_text())["models"]
        main(["rank", "--manifest", str(dataset), "--models", *models[:3], "--mode", "iterative",
              "--k", "2", "--iterations", "3", "--seed", "1", "--out", str(d / "rank.json")])
        main(["rank", "--manifest", str(dataset), "--models", *models[:3], "--mode", "fixed",
              "--out", str(d / "fixed.json")])
        main(["simulate", "--t", "5", "--epsilon", "0.1", "--trials", "20", "--out", str(d / "sim.csv")])
        outputs.append([(d / f).read_bytes() for f in ("sel.json", "rank.json", "fixed.json", "sim.csv")])
    assert outputs[0] == outputs[1]
    sel = json.loads(outputs[0][0])
    assert len(sel["selected"]) == 8
    fixed = json.loads(outputs[0][2])
    assert len(fixed["ranking"]) == 40


def test_eval(dataset, tmp_path):
    out = tmp_path / "eval.json"
    assert main(["eval", "--manifest", str(dataset), "--model", "theta=0.5,seed=1", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["kind"] == "evaluation" and len(doc["scores"]) == 40
    assert 0 < doc["mean"] <= 1


def test_runtime_error_exit_1(tmp_path, capsys):
    assert main(["dice", str(tmp_path / "missing.emsk"), str(tmp_path / "missing.emsk")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: FileNotFoundError:")


def test_bad_model_ref_exit_1(dataset, tmp_path, capsys):
    assert main(["eval", "--manifest", str(dataset), "--model", "junk", "--out", str(tmp_path / "e.json")]) == 1
    assert "error: ValueError:" in capsys.readouterr().err


def test_external_requires_commands(dataset, tmp_path):
    assert main(["select", "--manifest", str(dataset), "--k", "2", "--iterations", "3",
                 "--backend", "external", "--out", str(tmp_path / "s.json")]) == 2


@pytest.mark.parametrize("argv", [["frobnicate"], [], ["select", "--k", "x"]])
def test_usage_exit_2(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_module_entry_point(masks):
    proc = subprocess.run([sys.executable, "-m", "eigenrank", "dice", masks[0], masks[2]],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == "1\n"
    proc = subprocess.run([sys.executable, "-m", "eigenrank", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
