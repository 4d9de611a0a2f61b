import json
import logging
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctscan_tl.data import (DatasetManifest, ImageRecord, SplitRatios, compute_class_weights,
                            partition_test_subsets, scan_dataset, stratified_split)
from ctscan_tl.errors import ConfigError, DataError

from conftest import write_jpeg


def fake_manifest(sizes, root="/nowhere"):
    """Manifest over non-existent paths; split arithmetic never touches disk."""
    from pathlib import Path
    names = list(sizes)
    records = [ImageRecord(Path(root) / name / f"{i:05d}.jpg", name)
               for name in names for i in range(sizes[name])]
    return DatasetManifest(Path(root), records, names)


def test_scan_toy_tree(toy_tree):
    m = scan_dataset(toy_tree, ["covid", "normal"])
    assert len(m.records) == 3
    assert {k: sum(v.values()) for k, v in m.counts.items()} == {"covid": 2, "normal": 1}
    paths = [r.path.relative_to(toy_tree).as_posix() for r in m.records]
    assert paths == sorted(paths)
    assert [r.class_label for r in m.records] == ["covid", "covid", "normal"]


def test_scan_skips_non_jpeg(tmp_path, caplog):
    root = tmp_path / "d"
    write_jpeg(root / "a" / "x.jpg", np.zeros((4, 4)))
    write_jpeg(root / "b" / "y.JPEG", np.zeros((4, 4)))
    (root / "a" / "notes.txt").write_text("hi")
    with caplog.at_level(logging.WARNING):
        m = scan_dataset(root, ["a", "b"])
    assert m.counts["a"]["unassigned"] == 1
    assert m.counts["b"]["unassigned"] == 1
    assert "notes.txt" in caplog.text


def test_scan_missing_class_names_it(toy_tree):
    with pytest.raises(ConfigError, match="viral"):
        scan_dataset(toy_tree, ["covid", "viral"])


def test_scan_empty_class_is_data_error(toy_tree):
    (toy_tree / "empty").mkdir()
    with pytest.raises(DataError):
        scan_dataset(toy_tree, ["covid", "empty"])


def test_four_class_corpus_counts():
    sizes = {"normal": 4698, "covid": 4001, "viral": 1255, "bacterial": 1977}
    m = fake_manifest(sizes)
    assert sum(sum(c.values()) for c in m.counts.values()) == 11931
    assert sizes["covid"] + sizes["normal"] == 8699


@pytest.mark.parametrize("n,expected", [(100, (60, 20, 20)), (4001, (2400, 800, 801))])
def test_split_sizes(n, expected):
    m = stratified_split(fake_manifest({"c": n}), SplitRatios(), seed=3)
    c = m.counts["c"]
    assert (c["train"], c["validation"], c["test"]) == expected


def test_split_is_deterministic():
    base = fake_manifest({"a": 57, "b": 91})
    one = stratified_split(base, SplitRatios(), seed=11).to_json()
    two = stratified_split(base, SplitRatios(), seed=11).to_json()
    assert one == two
    assert stratified_split(base, SplitRatios(), seed=12).to_json() != one


def test_adding_a_class_does_not_perturb_others():
    a = stratified_split(fake_manifest({"a": 50}), seed=5)
    ab = stratified_split(fake_manifest({"a": 50, "b": 30}), seed=5)
    split_a = {r.path: r.split for r in a.records}
    assert all(split_a[r.path] == r.split for r in ab.records if r.class_label == "a")


def test_split_rejects_tiny_class():
    with pytest.raises(DataError, match="'b'"):
        stratified_split(fake_manifest({"a": 10, "b": 2}))


def test_split_ratios_validation():
    with pytest.raises(ConfigError):
        SplitRatios(0.5, 0.2, 0.2)
    with pytest.raises(ConfigError):
        SplitRatios(1.2, -0.1, -0.1)


@settings(max_examples=60, deadline=None)
@given(sizes=st.lists(st.integers(3, 400), min_size=1, max_size=4), seed=st.integers(0, 2**31))
def test_split_properties(sizes, seed):
    names = [f"c{i}" for i in range(len(sizes))]
    base = fake_manifest(dict(zip(names, sizes)))
    m = partition_test_subsets(stratified_split(base, SplitRatios(), seed), 3, seed)
    assert {r.path for r in m.records} == {r.path for r in base.records}
    for name, n in zip(names, sizes):
        c = m.counts[name]
        assert abs(c["train"] / n - 0.6) < 1 / n
        assert abs(c["validation"] / n - 0.2) < 1 / n
        assert c["train"] + c["validation"] + c["test"] == n
        subset_sizes = [len([r for r in m.records if r.class_label == name
                             and r.test_subset == k]) for k in (1, 2, 3)]
        assert max(subset_sizes) - min(subset_sizes) <= 1
        assert sum(subset_sizes) == c["test"]


@pytest.mark.parametrize("n_test,k,expected", [(801, 3, [267, 267, 267]), (7, 3, [3, 2, 2]),
                                               (5, 1, [5])])
def test_partition_round_robin(n_test, k, expected):
    m = stratified_split(fake_manifest({"c": n_test}), SplitRatios(0.0, 0.0, 1.0), seed=0)
    m = partition_test_subsets(m, k, seed=0)
    sizes = [len(m.subset("test", s)) for s in range(1, k + 1)]
    assert sizes == expected


def test_partition_warns_when_class_too_small(caplog):
    m = stratified_split(fake_manifest({"a": 3}), seed=0)
    with caplog.at_level(logging.WARNING):
        partition_test_subsets(m, 3)
    assert "test records" in caplog.text


def test_partition_needs_splits():
    with pytest.raises(DataError):
        partition_test_subsets(fake_manifest({"a": 5}))


def _weights_from_train_counts(counts):
    sizes = {k: v for k, v in counts.items()}
    m = stratified_split(fake_manifest(sizes), SplitRatios(1.0, 0.0, 0.0), seed=0)
    return compute_class_weights(m)


def test_class_weights_balanced():
    assert _weights_from_train_counts({"a": 50, "b": 50}) == {"a": 1.0, "b": 1.0}


def test_class_weights_four_classes():
    w = _weights_from_train_counts({"a": 4, "b": 2, "c": 1, "d": 1})
    assert w == {"a": 0.5, "b": 1.0, "c": 2.0, "d": 2.0}


def test_class_weights_binary_corpus():
    w = _weights_from_train_counts({"covid": 4001, "normal": 4698})
    assert w["covid"] == pytest.approx(float(Fraction(8699, 2 * 4001)), rel=1e-15)
    assert w["normal"] == pytest.approx(float(Fraction(8699, 2 * 4698)), rel=1e-15)
    assert round(w["normal"], 4) == 0.9258
    assert round(w["covid"], 4) == 1.0871


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 500), min_size=2, max_size=5))
def test_class_weights_preserve_mass(counts):
    names = [f"c{i}" for i in range(len(counts))]
    w = _weights_from_train_counts(dict(zip(names, counts)))
    assert sum(n * w[c] for c, n in zip(names, counts)) == pytest.approx(sum(counts), rel=1e-12)
    assert all(v > 0 for v in w.values())


def test_class_weights_zero_training_records():
    m = stratified_split(fake_manifest({"a": 5, "b": 5}), SplitRatios(0.0, 0.5, 0.5), seed=0)
    with pytest.raises(DataError):
        compute_class_weights(m)


def test_manifest_json_roundtrip(toy_tree, tmp_path):
    m = scan_dataset(toy_tree, ["covid", "normal"])
    m = partition_test_subsets(stratified_split(m, SplitRatios(0.0, 0.0, 1.0), seed=1), 3)
    path = tmp_path / "m.json"
    m.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"schema_version", "class_names", "seed", "ratios", "records"}
    assert all(not r["path"].startswith("/") for r in doc["records"])
    assert all("test_subset" in r for r in doc["records"] if r["split"] == "test")
    loaded = DatasetManifest.load(path, root=toy_tree)
    assert loaded.to_json() == m.to_json()
    assert loaded.counts == m.counts


def test_manifest_rejects_tampered_counts(toy_tree):
    m = scan_dataset(toy_tree, ["covid", "normal"])
    bad = {k: dict(v) for k, v in m.counts.items()}
    bad["covid"]["unassigned"] += 1
    with pytest.raises(DataError):
        DatasetManifest(m.root, m.records, m.class_names, counts=bad)


def test_record_invariants():
    from pathlib import Path
    with pytest.raises(DataError):
        ImageRecord(Path("x.jpg"), "a", "train", 1)
    with pytest.raises(DataError):
        ImageRecord(Path("x.jpg"), "a", "holdout")
