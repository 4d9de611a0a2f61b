"""Full-scale run: Inception-ResNet-V2 features on the real CT corpus.

Needs TensorFlow (``pip install ctscan-tl[keras]``), the dataset laid out as
``<data_root>/<class>/*.jpg`` and a few hours of compute. Not part of the
test suite.

Run:  python demos/reproduce_full.py --data-root /path/to/ct --task binary
"""
import argparse
import json
import sys
from pathlib import Path

from ctscan_tl.cli import main

CLASSES = {"binary": ["covid", "normal"],
           "multiclass": ["normal", "covid", "viral", "bacterial"]}

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--data-root", required=True)
parser.add_argument("--task", choices=sorted(CLASSES), default="binary")
parser.add_argument("--out", default="full-run")
parser.add_argument("--weights", default="imagenet",
                    help="'imagenet' or a local Keras weight file")
parser.add_argument("--seed", type=int, default=42)
args = parser.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
config = json.loads((Path(__file__).parent / "configs" / f"{args.task}.json").read_text())
config.update(data_root=str(Path(args.data_root).resolve()), output_dir=str(out))
config["model"]["weights_source"] = args.weights
config_path = out / "config.json"
config_path.write_text(json.dumps(config, indent=2))

seed = ["--seed", str(args.seed)]
steps = [
    ["split", "--config", str(config_path), "--out", str(out / "manifest.json")],
    ["-v", "train", "--config", str(config_path), "--manifest", str(out / "manifest.json"),
     "--run-dir", str(out / "run")],
    ["evaluate", "--run-dir", str(out / "run"), "--manifest", str(out / "manifest.json"),
     "--out", str(out / "run" / "report.json")],
    ["report", "--report", str(out / "run" / "report.json"), "--history",
     str(out / "run" / "history.json"), "--out-dir", str(out / "report"),
     "--display-names", ",".join(config["display_names"])],
]
for step in steps:
    code = main(step + seed)
    if code:
        sys.exit(code)
