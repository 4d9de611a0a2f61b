import json
import time
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from ctscan_tl.synthetic import make_synthetic_dataset

_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _acceptance:
        status = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"[{status}] {name} ({duration:.2f}s)")


def write_jpeg(path, array):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path, quality=95)
    return path


@pytest.fixture
def toy_tree(tmp_path):
    """covid/{a,b}.jpg and normal/c.jpg, 8x8 grey images."""
    root = tmp_path / "data"
    grey = np.full((8, 8), 128, np.uint8)
    for rel in ("covid/a.jpg", "covid/b.jpg", "normal/c.jpg"):
        write_jpeg(root / rel, grey)
    return root


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    return make_synthetic_dataset(tmp_path_factory.mktemp("synth") / "data", 100, (64, 64), seed=7)


@pytest.fixture
def stub_config(tmp_path, synthetic_root):
    def make(**training):
        cfg = {
            "task": "binary",
            "class_names": ["dark", "bright"],
            "data_root": str(synthetic_root),
            "image": {"size": [64, 64]},
            "model": {"backbone_name": "stub", "weights_source": "random"},
            "training": {"max_epochs": 20, **training},
            "output_dir": str(tmp_path / "runs"),
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        return path
    return make


@pytest.fixture
def timer():
    class Timer:
        def __enter__(self):
            self.start = time.perf_counter()
            return self

        def __exit__(self, *exc):
            self.elapsed = time.perf_counter() - self.start
    return Timer
