"""JSON pipeline configuration."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import SplitRatios
from .errors import ConfigError
from .model import HeadConfig
from .train import TrainingConfig
from .transform import TASKS, build_policy

logger = logging.getLogger(__name__)

EXPECTED_CLASS_COUNT = {"binary": 2, "multiclass": 4}

DEFAULTS = {
    "task": "binary",
    "class_names": None,
    "display_names": None,
    "data_root": None,
    "split": {"ratios": {"train": 0.6, "validation": 0.2, "test": 0.2}, "seed": 42,
              "test_subsets": 3},
    "image": {"size": [224, 224]},
    "augmentation": {},
    "model": {"backbone_name": "inception-resnet-v2", "weights_source": "imagenet",
              "head": {}, "freeze": True, "seed": 0},
    "training": {"class_weights": "auto"},
    "output_dir": "runs",
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        unknown = set(self.raw) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        self.raw = _merge(DEFAULTS, self.raw)
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        names = self.class_names
        if not names or len(set(names)) != len(names):
            raise ConfigError("class_names must be a non-empty list of unique names")
        if len(names) < 2:
            raise ConfigError("class_names needs at least two classes")
        if len(names) != EXPECTED_CLASS_COUNT[self.task]:
            logger.warning("task %s usually has %d classes, config lists %d", self.task,
                           EXPECTED_CLASS_COUNT[self.task], len(names))
        if self.raw["data_root"] is None:
            raise ConfigError("data_root is required")
        size = self.raw["image"]["size"]
        if len(size) != 2 or min(size) < 1:
            raise ConfigError(f"image.size must be [height, width], got {size}")
        if int(self.raw["split"]["test_subsets"]) < 1:
            raise ConfigError("split.test_subsets must be >= 1")
        # validate eagerly so errors surface before any work starts
        self.ratios, self.head, self.policy, self.training()

    @classmethod
    def load(cls, path, seed: Optional[int] = None) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        cfg = cls(raw, path.parent.resolve())
        if seed is not None:
            cfg.override_seed(seed)
        return cfg

    def override_seed(self, seed: int) -> None:
        self.raw["split"]["seed"] = int(seed)
        self.raw["training"]["seed"] = int(seed)
        self.raw["model"]["seed"] = int(seed)

    def _path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def task(self) -> str:
        return self.raw["task"]

    @property
    def class_names(self) -> list:
        return list(self.raw["class_names"] or [])

    @property
    def display_names(self):
        return self.raw["display_names"]

    @property
    def data_root(self) -> Path:
        return self._path(self.raw["data_root"])

    @property
    def output_dir(self) -> Path:
        return self._path(self.raw["output_dir"])

    @property
    def ratios(self) -> SplitRatios:
        return SplitRatios.from_dict(self.raw["split"]["ratios"])

    @property
    def split_seed(self) -> int:
        return int(self.raw["split"]["seed"])

    @property
    def test_subsets(self) -> int:
        return int(self.raw["split"]["test_subsets"])

    @property
    def image_size(self) -> tuple:
        return tuple(int(v) for v in self.raw["image"]["size"])

    @property
    def policy(self):
        return build_policy(self.task, self.raw["augmentation"])

    @property
    def head(self) -> HeadConfig:
        head = dict(self.raw["model"]["head"])
        head.setdefault("num_classes", len(self.class_names))
        if head["num_classes"] != len(self.class_names):
            raise ConfigError("model.head.num_classes disagrees with class_names")
        try:
            return HeadConfig(**head)
        except TypeError as exc:
            raise ConfigError(f"bad head config: {exc}") from exc

    @property
    def backbone_name(self) -> str:
        return self.raw["model"]["backbone_name"]

    @property
    def weights_source(self) -> str:
        src = self.raw["model"]["weights_source"]
        if src in ("random", "imagenet", None):
            return src or "random"
        return str(self._path(src))

    @property
    def freeze(self) -> bool:
        return bool(self.raw["model"]["freeze"])

    @property
    def model_seed(self) -> int:
        return int(self.raw["model"].get("seed", 0))

    def training(self, class_weights: Optional[dict] = None) -> TrainingConfig:
        d = dict(self.raw["training"])
        cw = d.pop("class_weights", "auto")
        if cw not in ("auto", None) and not isinstance(cw, dict):
            raise ConfigError("training.class_weights must be 'auto', null or a map")
        if isinstance(cw, dict):
            class_weights = cw
        d.setdefault("seed", self.split_seed)
        return TrainingConfig.from_dict({**d, "class_weights": class_weights})

    @property
    def wants_auto_class_weights(self) -> bool:
        return self.raw["training"].get("class_weights", "auto") == "auto"

    def snapshot(self) -> dict:
        """Fully resolved config, sufficient to re-run the experiment."""
        snap = copy.deepcopy(self.raw)
        snap["data_root"] = str(self.data_root)
        snap["output_dir"] = str(self.output_dir)
        snap["model"]["weights_source"] = self.weights_source
        return snap

    def digest(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
