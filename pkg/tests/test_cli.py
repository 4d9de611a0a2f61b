import json

import pytest

from ctscan_tl.cli import main
from ctscan_tl.report import parse_csv
from ctscan_tl.synthetic import make_synthetic_dataset


@pytest.fixture
def toy(tmp_path):
    """12-image dark/bright tree with a fast stub configuration."""
    root = make_synthetic_dataset(tmp_path / "data", 6, (16, 16), seed=1)

    def config(**overrides):
        cfg = {
            "class_names": ["dark", "bright"],
            "data_root": str(root),
            "image": {"size": [16, 16]},
            "split": {"test_subsets": 1},
            "model": {"backbone_name": "stub", "weights_source": "random",
                      "head": {"dense_widths": [8, 4]}},
            "training": {"max_epochs": 2, "batch_size": 4},
            "output_dir": str(tmp_path / "runs"),
        }
        cfg.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        return path
    return tmp_path, root, config


def run_all(tmp_path, config_path):
    manifest = tmp_path / "manifest.json"
    run_dir = tmp_path / "run"
    assert main(["split", "--config", str(config_path), "--out", str(manifest)]) == 0
    assert main(["train", "--config", str(config_path), "--manifest", str(manifest),
                 "--run-dir", str(run_dir)]) == 0
    assert main(["evaluate", "--run-dir", str(run_dir), "--manifest", str(manifest),
                 "--out", str(run_dir / "report.json")]) == 0
    return manifest, run_dir


def test_pipeline_on_toy_tree(toy):
    tmp_path, _, config = toy
    manifest, run_dir = run_all(tmp_path, config())
    for name in ("config.json", "history.json", "log.txt", "report.json",
                 "report_predictions.csv", "model-best/weights.npz", "model-final/weights.npz"):
        assert (run_dir / name).exists(), name
    out = tmp_path / "out"
    assert main(["report", "--report", str(run_dir / "report.json"), "--history",
                 str(run_dir / "history.json"), "--out-dir", str(out)]) == 0
    parsed = parse_csv((out / "report.csv").read_text())
    for values in parsed.values():
        assert values[0] == values[-1]  # one subset: Avg equals Test1
    assert (out / "figures" / "confusion_test1.png").is_file()
    assert (out / "figures" / "loss_curves.png").is_file()


def test_split_manifests_are_byte_identical(toy):
    tmp_path, _, config = toy
    path = config(split={"test_subsets": 2})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["split", "--config", str(path), "--out", str(a)]) == 0
    assert main(["split", "--config", str(path), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["split", "--config", str(path), "--out", str(b), "--seed", "3"]) == 0
    assert a.read_bytes() != b.read_bytes()


def test_report_csv_only_has_no_figures(toy):
    tmp_path, _, config = toy
    _, run_dir = run_all(tmp_path, config())
    out = tmp_path / "csv-only"
    assert main(["report", "--report", str(run_dir / "report.json"), "--out-dir", str(out),
                 "--format", "csv"]) == 0
    assert [p.name for p in out.iterdir()] == ["report.csv"]


def test_missing_class_exits_2(toy, capsys):
    tmp_path, _, config = toy
    path = config(class_names=["dark", "viral"])
    assert main(["split", "--config", str(path), "--out", str(tmp_path / "m.json")]) == 2
    assert "viral" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["split", "--config", str(path), "--out", str(tmp_path / "m.json")]) == 2
    path.write_text(json.dumps({"class_names": ["a", "b"], "data_root": "x", "bogus": 1}))
    assert main(["split", "--config", str(path), "--out", str(tmp_path / "m.json")]) == 2


def test_corrupt_image_exits_3(toy, capsys):
    tmp_path, root, config = toy
    path = config()
    manifest = tmp_path / "m.json"
    assert main(["split", "--config", str(path), "--out", str(manifest)]) == 0
    doc = json.loads(manifest.read_text())
    victim = next(r["path"] for r in doc["records"] if r["split"] == "train")
    (root / victim).write_bytes(b"garbage")
    code = main(["train", "--config", str(path), "--manifest", str(manifest),
                 "--run-dir", str(tmp_path / "run")])
    assert code == 3
    assert victim.split("/")[-1] in capsys.readouterr().err


def test_evaluate_without_run_exits_2(toy):
    tmp_path, _, _ = toy
    assert main(["evaluate", "--run-dir", str(tmp_path / "nothing"), "--manifest",
                 str(tmp_path / "m.json"), "--out", str(tmp_path / "r.json")]) == 2


def test_unwritable_report_exits_5(toy):
    tmp_path, _, config = toy
    _, run_dir = run_all(tmp_path, config())
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["report", "--report", str(run_dir / "report.json"),
                 "--out-dir", str(blocker / "x")]) == 5


def test_unknown_format_exits_2(toy):
    tmp_path, _, config = toy
    _, run_dir = run_all(tmp_path, config())
    assert main(["report", "--report", str(run_dir / "report.json"), "--out-dir",
                 str(tmp_path / "o"), "--format", "gif"]) == 2


def test_output_root_env(toy, monkeypatch):
    tmp_path, _, config = toy
    path = config()
    manifest = tmp_path / "m.json"
    assert main(["split", "--config", str(path), "--out", str(manifest)]) == 0
    monkeypatch.setenv("CTSCAN_TL_OUTPUT_ROOT", str(tmp_path / "elsewhere"))
    assert main(["train", "--config", str(path), "--manifest", str(manifest)]) == 0
    runs = list((tmp_path / "elsewhere" / "run").iterdir())
    assert len(runs) == 1 and (runs[0] / "model-best").is_dir()
