import json

import numpy as np
import pytest
from PIL import Image

from busip.cli import main
from busip.scattering import num_channels
from busip.tensorio import read_dump


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-synthetic -> init-config -> train on a tiny set, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    data, run_dir = root / "data", root / "run"
    assert main(["gen-synthetic", "--classes", "4", "--per-class", "4", "--test-per-class", "2",
                 "--seed", "5", "--out", str(data)]) == 0
    assert main(["init-config", "--data", str(data), "--out-dir", str(run_dir), "--epochs", "1",
                 "--out", str(root / "config.json")]) == 0
    assert main(["train", "--config", str(root / "config.json")]) == 0
    return root, data, run_dir


def test_train_writes_run_directory(pipeline):
    _, _, run_dir = pipeline
    for name in ("checkpoint.pt", "losses.csv", "metrics.json", "losses.png"):
        assert (run_dir / name).is_file()


def test_eval_reports_test_split(pipeline, capsys):
    root, data, run_dir = pipeline
    code, out, _ = run(capsys, "eval", "--ckpt", run_dir / "checkpoint.pt", "--data", data,
                       "--out", root / "eval.json")
    report = json.loads(out)
    assert code == 0 and report["n"] == 8
    assert json.loads((root / "eval.json").read_text()) == report
    code, out, _ = run(capsys, "eval", "--ckpt", run_dir / "checkpoint.pt", "--data", data,
                       "--subset", "all")
    assert json.loads(out)["n"] == 24


def test_visualize_parts(pipeline, capsys):
    root, data, run_dir = pipeline
    image = sorted(data.rglob("*.png"))[0]
    code, out, _ = run(capsys, "visualize-parts", "--ckpt", run_dir / "checkpoint.pt",
                       "--image", image, "--out", root / "parts.png")
    assert code == 0
    info = json.loads((root / "parts.json").read_text())
    png = Image.open(root / "parts.png")
    assert png.size == Image.open(image).size and png.mode == "RGB"
    assert len(info["palette"]) == info["num_parts"] == 5
    assert len({tuple(c) for c in info["palette"].values()}) == 5
    assert abs(sum(info["part_scores"]) - 1) <= 1e-6 and min(info["part_scores"]) >= 0


def test_visualize_rejects_wrong_size(pipeline, capsys, tmp_path):
    _, _, run_dir = pipeline
    Image.fromarray(np.zeros((32, 32), np.uint8)).save(tmp_path / "small.png")
    code, _, err = run(capsys, "visualize-parts", "--ckpt", run_dir / "checkpoint.pt",
                       "--image", tmp_path / "small.png", "--out", tmp_path / "o.png")
    assert code == 1 and json.loads(err)["error"] == "ConfigurationError"


def test_export_bank_and_extract_scattering(pipeline, capsys, tmp_path):
    _, data, run_dir = pipeline
    code, out, _ = run(capsys, "export-bank", "--ckpt", run_dir / "checkpoint.pt",
                       "--out", tmp_path / "bank.json")
    manifest = json.loads(out)
    assert code == 0 and len(manifest["filters"]) == 12
    kernels, header = read_dump(tmp_path / "bank.bin")
    assert kernels.shape == tuple(manifest["tensor"]["shape"]) == (13, 27, 27, 2)

    image = sorted(data.rglob("*.png"))[0]
    code, out, _ = run(capsys, "extract-scattering", "--image", image,
                       "--bank", tmp_path / "bank.json", "--out", tmp_path / "s.f32")
    values, header = read_dump(tmp_path / "s.f32")
    assert code == 0 and values.shape == (64, 64, num_channels(3, 4, 2))
    assert header["layout"] == "HWC" and len(header["paths"]) == values.shape[-1]
    assert np.isfinite(values).all() and (values >= 0).all()


def test_errors_are_one_json_line(capsys, tmp_path):
    code, out, err = run(capsys, "eval", "--ckpt", tmp_path / "missing.pt", "--data", tmp_path)
    assert code == 1 and out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 1 and set(json.loads(lines[0])) == {"error", "message"}


def test_gen_synthetic_refuses_to_overwrite(capsys, tmp_path):
    assert run(capsys, "gen-synthetic", "--per-class", "1", "--out", tmp_path / "d")[0] == 0
    code, _, err = run(capsys, "gen-synthetic", "--per-class", "1", "--out", tmp_path / "d")
    assert code == 1 and "error" in json.loads(err)
    assert run(capsys, "gen-synthetic", "--per-class", "1", "--out", tmp_path / "d", "--force")[0] == 0
