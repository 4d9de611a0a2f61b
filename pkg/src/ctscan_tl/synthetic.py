"""Toy image trees for tests and demos: dark versus bright JPEG slices."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def make_image(rng, size, bright: bool) -> np.ndarray:
    h, w = size
    base = rng.uniform(0.65, 0.9) if bright else rng.uniform(0.1, 0.35)
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.full((h, w), base)
    # a soft blob so images are not flat fields
    cy, cx = rng.uniform(0.25, 0.75, size=2) * (h, w)
    r = rng.uniform(0.1, 0.25) * min(h, w)
    img += 0.1 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)) * (-1 if bright else 1)
    img += rng.normal(0.0, 0.03, size=(h, w))
    return (np.clip(img, 0, 1) * 255).astype(np.uint8)


def make_synthetic_dataset(root, n_per_class=100, size=(64, 64), seed=0,
                           class_names=("dark", "bright")) -> Path:
    """Write ``n_per_class`` grayscale JPEGs per class under ``root/<class>/``.

    The first class is dark, every following class bright.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    counts = n_per_class if isinstance(n_per_class, (list, tuple)) else [n_per_class] * len(class_names)
    for c, (name, n) in enumerate(zip(class_names, counts)):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(n):
            Image.fromarray(make_image(rng, size, bright=c > 0)).save(
                d / f"{name}_{i:04d}.jpg", quality=95)
    return root
