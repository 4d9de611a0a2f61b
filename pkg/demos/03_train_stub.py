"""Training, evaluating and reporting with the desk-scale stub backbone.

Everything runs in-process through the library API; the CLI performs the
same steps (see the README).

Run:  python demos/03_train_stub.py [output_dir]
"""
# %%
import logging
import sys
from pathlib import Path

from ctscan_tl.data import (compute_class_weights, partition_test_subsets, scan_dataset,
                            stratified_split)
from ctscan_tl.evaluation import evaluate
from ctscan_tl.model import HeadConfig, Model, build_head, load_backbone
from ctscan_tl.report import write_report
from ctscan_tl.synthetic import make_synthetic_dataset
from ctscan_tl.train import ImageSource, TrainingConfig, fit
from ctscan_tl.transform import build_policy

logging.basicConfig(level=logging.INFO, format="%(message)s")
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-output") / "train"
names = ["dark", "bright"]

# %%
root = make_synthetic_dataset(out / "data", 100, (64, 64), seed=7)
manifest = partition_test_subsets(stratified_split(scan_dataset(root, names), seed=1), 3)

# %% [markdown]
# The stub backbone maps 64x64x3 to an 8x8x32 feature map. It stays frozen,
# so only the head (batch norm and three dense layers) is trained.

# %%
backbone = load_backbone("stub", "random", (64, 64, 3))
head = build_head(backbone.output_shape, HeadConfig(num_classes=2))
model = Model(backbone, head, freeze=True)
print("trainable parameters:", model.trainable_parameter_count())

# %%
config = TrainingConfig(max_epochs=10, class_weights=compute_class_weights(manifest), seed=1)
result = fit(model, ImageSource(manifest.subset("train"), names, (64, 64)),
             ImageSource(manifest.subset("validation"), names, (64, 64)),
             build_policy("binary"), config, names, run_dir=out / "run")
print("best epoch:", result.history.best_epoch)

# %% [markdown]
# Evaluation runs on each test subset separately and averages the metrics.

# %%
report = evaluate(model, manifest, (64, 64))
bundle = write_report(report, out / "report", result.history, {"txt", "csv", "png"})
print(bundle.text)
