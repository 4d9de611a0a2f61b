"""Dataset discovery, stratified splitting and class weighting.

Datasets are laid out one directory per class::

    <root>/<class_name>/*.jpg

Manifests are immutable; every split operation returns a new one.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SPLITS = ("train", "validation", "test")
JPEG_SUFFIXES = {".jpg", ".jpeg"}


@dataclass(frozen=True, slots=True)
class ImageRecord:
    path: Path
    class_label: str
    split: Optional[str] = None
    test_subset: Optional[int] = None

    def __post_init__(self):
        if self.split is not None and self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r} for {self.path}")
        # test records carry no subset until partition_test_subsets runs
        if self.test_subset is not None and self.split != "test":
            raise DataError(f"test_subset set on a non-test record: {self.path}")


@dataclass(frozen=True)
class SplitRatios:
    train_fraction: float = 0.6
    validation_fraction: float = 0.2
    test_fraction: float = 0.2

    def __post_init__(self):
        fracs = self.as_tuple()
        if any(not 0.0 <= f <= 1.0 for f in fracs):
            raise ConfigError(f"split fractions must lie in [0, 1], got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)!r}")

    def as_tuple(self):
        return (self.train_fraction, self.validation_fraction, self.test_fraction)

    def to_dict(self):
        return {"train": self.train_fraction, "validation": self.validation_fraction,
                "test": self.test_fraction}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(float(d["train"]), float(d["validation"]), float(d["test"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"split ratios need train/validation/test keys: {d!r}") from exc


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    records: tuple
    class_names: tuple
    seed: Optional[int] = None
    ratios: Optional[SplitRatios] = None
    counts: dict = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        pairs = Counter((r.class_label, r.split) for r in self.records)
        known = set(self.class_names)
        for label, _ in pairs:
            if label not in known:
                bad = next(r for r in self.records if r.class_label == label)
                raise DataError(f"record {bad.path} has unknown class {label!r}")
        tally = {name: {s: 0 for s in (*SPLITS, "unassigned")} for name in self.class_names}
        for (label, split), n in pairs.items():
            tally[label][split or "unassigned"] += n
        if self.counts is not None and self.counts != tally:
            raise DataError("stored counts disagree with the record tally")
        object.__setattr__(self, "counts", tally)
        for name in self.class_names:
            if sum(tally[name].values()) == 0:
                raise DataError(f"class {name!r} has no records")

    def subset(self, split: str, test_subset: Optional[int] = None) -> list:
        return [r for r in self.records if r.split == split
                and (test_subset is None or r.test_subset == test_subset)]

    def test_subset_ids(self) -> list:
        return sorted({r.test_subset for r in self.records if r.test_subset is not None})

    def class_index(self, label: str) -> int:
        return self.class_names.index(label)

    def to_dict(self) -> dict:
        records = []
        prefix = self.root.as_posix().rstrip("/") + "/"
        for r in self.records:
            entry = {"path": _relative(r.path, prefix), "class": r.class_label,
                     "split": r.split}
            if r.test_subset is not None:
                entry["test_subset"] = r.test_subset
            records.append(entry)
        return {
            "schema_version": SCHEMA_VERSION,
            "class_names": list(self.class_names),
            "seed": self.seed,
            "ratios": self.ratios.to_dict() if self.ratios else None,
            "records": records,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d: dict, root) -> "DatasetManifest":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported manifest schema_version {d.get('schema_version')!r}")
        root = Path(root)
        records = [ImageRecord(root / e["path"], e["class"], e.get("split"), e.get("test_subset"))
                   for e in d["records"]]
        ratios = SplitRatios.from_dict(d["ratios"]) if d.get("ratios") else None
        return cls(root, records, d["class_names"], d.get("seed"), ratios)

    @classmethod
    def load(cls, path, root=None) -> "DatasetManifest":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        if root is None:
            root = d.get("root", path.parent)
        return cls.from_dict(d, root)


def _relative(path, prefix: str) -> str:
    # string prefix test; Path.relative_to is far slower on large manifests
    s = Path(path).as_posix()
    return s[len(prefix):] if s.startswith(prefix) else s


def class_seed(seed: int, class_label: str, stream: int = 0) -> np.random.Generator:
    """Generator for one class, independent of which other classes exist."""
    digest = hashlib.sha256(class_label.encode("utf-8")).digest()
    label_key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), label_key, stream]))


def scan_dataset(root, class_names: Sequence[str]) -> DatasetManifest:
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"data_root {root} is not a directory")
    if len(set(class_names)) != len(class_names) or not class_names:
        raise ConfigError(f"class_names must be unique and non-empty: {list(class_names)}")
    records = []
    for name in class_names:
        class_dir = root / name
        if not class_dir.is_dir():
            raise ConfigError(f"missing class directory for class {name!r}: {class_dir}")
        found = 0
        for p in sorted(class_dir.iterdir()):
            if not p.is_file():
                continue
            if p.suffix.lower() not in JPEG_SUFFIXES:
                logger.warning("skipping non-JPEG file %s", p)
                continue
            records.append(ImageRecord(p, name))
            found += 1
        if found == 0:
            raise DataError(f"class directory {class_dir} contains no JPEG files")
    prefix = root.as_posix().rstrip("/") + "/"
    records.sort(key=lambda r: _relative(r.path, prefix))
    return DatasetManifest(root, records, class_names)


def _split_sizes(n: int, ratios: SplitRatios) -> tuple:
    # exact decimal rationals so that e.g. 0.6 * 100 floors to 60, not 59
    n_train = math.floor(Fraction(str(ratios.train_fraction)) * n)
    n_val = math.floor(Fraction(str(ratios.validation_fraction)) * n)
    return n_train, n_val, n - n_train - n_val


def assign_splits(n: int, ratios: SplitRatios, rng: np.random.Generator) -> np.ndarray:
    """Split index (0 train, 1 validation, 2 test) for each of ``n`` ordered records."""
    order = rng.permutation(n)
    out = np.empty(n, dtype=np.int8)
    out[order] = np.repeat(np.arange(3, dtype=np.int8), _split_sizes(n, ratios))
    return out


def deal_subsets(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Subset id in 1..k for each of ``n`` ordered records, dealt round-robin after a shuffle."""
    order = rng.permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[order] = np.arange(n) % k + 1
    return out


def _by_class(manifest: DatasetManifest, predicate=None) -> dict:
    groups = {name: [] for name in manifest.class_names}
    for i, r in enumerate(manifest.records):
        if predicate is None or predicate(r):
            groups[r.class_label].append(i)
    return groups


def stratified_split(manifest: DatasetManifest, ratios: SplitRatios = SplitRatios(),
                     seed: int = 0) -> DatasetManifest:
    if any(r.split is not None for r in manifest.records):
        raise DataError("manifest already has split assignments")
    needed = sum(1 for f in ratios.as_tuple() if f > 0)
    split_of = [None] * len(manifest.records)
    for name, idx in _by_class(manifest).items():
        n = len(idx)
        if n < needed:
            raise DataError(f"class {name!r} has {n} records; at least {needed} are needed "
                            f"to populate every split")
        for split, size, frac in zip(SPLITS, _split_sizes(n, ratios), ratios.as_tuple()):
            if size == 0 and frac > 0:
                logger.warning("class %r: %s split is empty (%d records)", name, split, n)
        for i, s in zip(idx, assign_splits(n, ratios, class_seed(seed, name)).tolist()):
            split_of[i] = SPLITS[s]
    records = [ImageRecord(r.path, r.class_label, s)
               for r, s in zip(manifest.records, split_of)]
    return DatasetManifest(manifest.root, records, manifest.class_names, seed, ratios)


def partition_test_subsets(manifest: DatasetManifest, k: int = 3,
                           seed: Optional[int] = None) -> DatasetManifest:
    if k < 1:
        raise ConfigError(f"number of test subsets must be >= 1, got {k}")
    if any(r.split is None for r in manifest.records):
        raise DataError("manifest has unassigned records; run stratified_split first")
    if seed is None:
        seed = manifest.seed if manifest.seed is not None else 0
    subset_of = [None] * len(manifest.records)
    for name, idx in _by_class(manifest, lambda r: r.split == "test").items():
        if len(idx) < k:
            logger.warning("class %r has %d test records for %d subsets", name, len(idx), k)
        for i, s in zip(idx, deal_subsets(len(idx), k, class_seed(seed, name, 1)).tolist()):
            subset_of[i] = s
    records = [ImageRecord(r.path, r.class_label, r.split, s)
               for r, s in zip(manifest.records, subset_of)]
    return DatasetManifest(manifest.root, records, manifest.class_names, manifest.seed,
                           manifest.ratios)


def compute_class_weights(manifest: DatasetManifest) -> dict:
    """Inverse-frequency weights ``N_train / (K * n_train(c))`` per class."""
    n_train = {name: manifest.counts[name]["train"] for name in manifest.class_names}
    for name, n in n_train.items():
        if n == 0:
            raise DataError(f"class {name!r} has no training records")
    total = sum(n_train.values())
    k = len(n_train)
    return {name: total / (k * n) for name, n in n_train.items()}


def summarize_counts(manifest: DatasetManifest) -> str:
    lines = [f"{'class':<16}" + "".join(f"{s:>12}" for s in SPLITS) + f"{'total':>12}"]
    for name in manifest.class_names:
        c = manifest.counts[name]
        total = sum(c.values())
        lines.append(f"{name:<16}" + "".join(f"{c[s]:>12}" for s in SPLITS) + f"{total:>12}")
    subsets = Counter((r.class_label, r.test_subset) for r in manifest.records
                      if r.test_subset is not None)
    for sid in manifest.test_subset_ids():
        per = ", ".join(f"{n}={subsets[(n, sid)]}" for n in manifest.class_names)
        lines.append(f"test subset {sid}: {per}")
    return "\n".join(lines)
