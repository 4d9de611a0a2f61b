"""What the two task policies do to an image.

Run:  python demos/02_augmentation.py [output_dir]
"""
# %%
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from ctscan_tl.transform import AugmentationPolicy, apply_augmentation, build_policy

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-output") / "augmentation"
out.mkdir(parents=True, exist_ok=True)

# %% [markdown]
# A synthetic 96x96 test card with an off-centre disc and a bar, so rotation,
# shear and flips are easy to tell apart.

# %%
yy, xx = np.mgrid[0:96, 0:96]
card = np.full((96, 96), 0.15)
card[(yy - 30) ** 2 + (xx - 62) ** 2 < 14 ** 2] = 0.9
card[60:70, 15:80] = 0.6
image = np.repeat(card[:, :, None], 3, axis=2)

# %%
for task in ("binary", "multiclass"):
    policy = build_policy(task)
    print(task, {k: v for k, v in policy.to_dict().items() if v not in (0, 0.0, False)})

# %% [markdown]
# Eight draws per policy. A draw depends only on its seed, so the grid is
# identical on every run.

# %%
rows = []
for task in ("binary", "multiclass"):
    policy = build_policy(task)
    rows.append(np.concatenate([apply_augmentation(image, policy, seed) for seed in range(8)], 1))
grid = np.concatenate(rows, axis=0)
Image.fromarray((grid * 255).round().astype(np.uint8)).save(out / "draws.png")
print("wrote", out / "draws.png")

# %%
assert np.array_equal(apply_augmentation(image, AugmentationPolicy(), 0), image)
print("identity policy leaves the image untouched")
