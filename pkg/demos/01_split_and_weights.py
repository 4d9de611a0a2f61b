"""Scanning a class-per-directory image tree, splitting it and weighting classes.

Run:  python demos/01_split_and_weights.py [output_dir]
"""
# %%
import sys
from pathlib import Path

from ctscan_tl.data import (compute_class_weights, partition_test_subsets, scan_dataset,
                            stratified_split, summarize_counts)
from ctscan_tl.synthetic import make_synthetic_dataset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-output") / "split"

# %% [markdown]
# A deliberately imbalanced toy corpus: 90 dark slices and 40 bright ones.

# %%
root = make_synthetic_dataset(out / "data", [90, 40], (32, 32), seed=0)
manifest = scan_dataset(root, ["dark", "bright"])
print(len(manifest.records), "records found")

# %% [markdown]
# Each class is shuffled with its own seed stream, so adding a class later
# leaves the existing assignments alone. Train and validation sizes are
# floored and test takes the remainder; the test split is then dealt
# round-robin into three near-equal subsets.

# %%
split = partition_test_subsets(stratified_split(manifest, seed=42), k=3)
print(summarize_counts(split))

# %% [markdown]
# Inverse-frequency weights N / (K * n_c) give both classes the same total mass.

# %%
weights = compute_class_weights(split)
for name, w in weights.items():
    n = split.counts[name]["train"]
    print(f"{name:>7}: n_train={n:3d}  weight={w:.4f}  mass={n * w:.1f}")

# %%
split.save(out / "manifest.json")
print("manifest written to", out / "manifest.json")
