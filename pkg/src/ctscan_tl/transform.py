"""Image decoding, resizing and random augmentation.

Images are float64 arrays of shape (H, W, 3) with values in [0, 1].
Geometric augmentations are composed into a single affine warp
(rotation, then shear, then zoom, then shift) followed by an optional
horizontal flip, so each image is resampled at most once.
"""
from __future__ import annotations

import io
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import ConfigError, DataError, DecodeError

logger = logging.getLogger(__name__)

DEFAULT_SIZE = (224, 224)
FILL_MODES = ("nearest", "constant")
TASKS = ("binary", "multiclass")

# mild, label-preserving magnitudes; every value can be overridden from config
DEFAULT_ROTATION = 15.0
DEFAULT_SHIFT = 0.10
DEFAULT_SHEAR = 10.0
DEFAULT_ZOOM = 0.10


@dataclass(frozen=True)
class AugmentationPolicy:
    rotation_range_degrees: float = 0.0
    width_shift_fraction: float = 0.0
    height_shift_fraction: float = 0.0
    shear_range_degrees: float = 0.0
    zoom_range_fraction: float = 0.0
    horizontal_flip: bool = False
    rescale_factor: float = 1.0
    fill_mode: str = "nearest"
    constant_value: float = 0.0

    def __post_init__(self):
        for name in ("rotation_range_degrees", "width_shift_fraction", "height_shift_fraction",
                     "shear_range_degrees", "zoom_range_fraction"):
            if getattr(self, name) < 0:
                raise ConfigError(f"augmentation {name} must be >= 0")
        if self.zoom_range_fraction >= 1:
            raise ConfigError("zoom_range_fraction must be < 1")
        if self.rescale_factor <= 0:
            raise ConfigError("rescale_factor must be positive")
        if self.fill_mode not in FILL_MODES:
            raise ConfigError(f"fill_mode must be one of {FILL_MODES}, got {self.fill_mode!r}")

    @property
    def is_identity(self) -> bool:
        return (self.rotation_range_degrees == 0 and self.width_shift_fraction == 0
                and self.height_shift_fraction == 0 and self.shear_range_degrees == 0
                and self.zoom_range_fraction == 0 and not self.horizontal_flip
                and self.rescale_factor == 1.0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown augmentation settings: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TransformParams:
    """One concrete draw from an :class:`AugmentationPolicy`."""

    rotation_degrees: float = 0.0
    shear_degrees: float = 0.0
    zoom: float = 1.0
    shift_x: float = 0.0  # pixels, positive moves content right
    shift_y: float = 0.0  # pixels, positive moves content down
    flip: bool = False


def build_policy(task: str, overrides: dict | None = None) -> AugmentationPolicy:
    """Default augmentation policy for the ``binary`` or ``multiclass`` task.

    The binary task uses rotation, both shifts and horizontal flip. The
    multiclass task uses both shifts, shear, zoom, rescale and flip; its rescale
    factor is 1.0 because pixels are already divided by 255 at decode time.
    """
    if task == "binary":
        policy = AugmentationPolicy(
            rotation_range_degrees=DEFAULT_ROTATION,
            width_shift_fraction=DEFAULT_SHIFT,
            height_shift_fraction=DEFAULT_SHIFT,
            horizontal_flip=True,
        )
    elif task == "multiclass":
        policy = AugmentationPolicy(
            width_shift_fraction=DEFAULT_SHIFT,
            height_shift_fraction=DEFAULT_SHIFT,
            shear_range_degrees=DEFAULT_SHEAR,
            zoom_range_fraction=DEFAULT_ZOOM,
            horizontal_flip=True,
            rescale_factor=1.0,
        )
    else:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    if overrides:
        merged = policy.to_dict()
        merged.update(overrides)
        policy = AugmentationPolicy.from_dict(merged)
    return policy


def _bilinear_resize(arr: np.ndarray, size) -> np.ndarray:
    h, w = arr.shape[:2]
    th, tw = size
    if (h, w) == (th, tw):
        return arr
    # half-pixel centres, edge pixels replicated
    rows = (np.arange(th) + 0.5) * (h / th) - 0.5
    cols = (np.arange(tw) + 0.5) * (w / tw) - 0.5
    grid = np.meshgrid(rows, cols, indexing="ij")
    out = np.empty((th, tw, arr.shape[2]), dtype=np.float64)
    for c in range(arr.shape[2]):
        out[..., c] = ndimage.map_coordinates(arr[..., c], grid, order=1, mode="nearest")
    return out


def decode_and_resize(data: bytes, target=DEFAULT_SIZE, source=None) -> np.ndarray:
    """Decode JPEG bytes into a ``target`` sized RGB array scaled to [0, 1]."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {source or '<bytes>'}: {exc}", source) from exc
    if img.width == 0 or img.height == 0:
        raise DataError(f"zero-area image {source or '<bytes>'}")
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB" if img.mode in ("RGBA", "P", "CMYK", "YCbCr", "LA") else "L")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    out = _bilinear_resize(arr, tuple(target))
    return np.clip(out, 0.0, 1.0)


def load_image(path, target=DEFAULT_SIZE) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DecodeError(f"cannot read image {path}: {exc}", path) from exc
    return decode_and_resize(data, target, source=path)


def sample_seed(global_seed: int, epoch: int, index: int) -> int:
    """Per-sample seed, independent of worker scheduling."""
    ss = np.random.SeedSequence([int(global_seed), int(epoch), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_params(policy: AugmentationPolicy, shape, rng: np.random.Generator) -> TransformParams:
    h, w = shape[:2]
    # draw every component in a fixed order so the stream does not depend on the policy
    rot = rng.uniform(-1.0, 1.0) * policy.rotation_range_degrees
    shear = rng.uniform(-1.0, 1.0) * policy.shear_range_degrees
    zoom = 1.0 + rng.uniform(-1.0, 1.0) * policy.zoom_range_fraction
    tx = rng.uniform(-1.0, 1.0) * policy.width_shift_fraction * w
    ty = rng.uniform(-1.0, 1.0) * policy.height_shift_fraction * h
    flip = bool(rng.random() < 0.5) and policy.horizontal_flip
    return TransformParams(rot, shear, zoom, tx, ty, flip)


def affine_matrix(params: TransformParams) -> np.ndarray:
    """Forward 2x2 map in (x, y) image coordinates: zoom @ shear @ rotation."""
    t = np.deg2rad(params.rotation_degrees)
    rot = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
    shear = np.array([[1.0, np.tan(np.deg2rad(params.shear_degrees))], [0.0, 1.0]])
    zoom = np.eye(2) * params.zoom
    return zoom @ shear @ rot


def apply_transform(image: np.ndarray, params: TransformParams,
                    fill_mode: str = "nearest", constant_value: float = 0.0) -> np.ndarray:
    h, w = image.shape[:2]
    fwd = affine_matrix(params)
    out = image
    if not (np.array_equal(fwd, np.eye(2)) and params.shift_x == 0 and params.shift_y == 0):
        centre = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        inv = np.linalg.inv(fwd)
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        ox = xs - centre[0] - params.shift_x
        oy = ys - centre[1] - params.shift_y
        src_x = inv[0, 0] * ox + inv[0, 1] * oy + centre[0]
        src_y = inv[1, 0] * ox + inv[1, 1] * oy + centre[1]
        mode = "nearest" if fill_mode == "nearest" else "grid-constant"
        out = np.empty_like(image, dtype=np.float64)
        for c in range(image.shape[2]):
            out[..., c] = ndimage.map_coordinates(image[..., c], [src_y, src_x], order=1,
                                                  mode=mode, cval=constant_value)
    if params.flip:
        out = out[:, ::-1, :]
    return np.ascontiguousarray(out)


def apply_augmentation(image: np.ndarray, policy: AugmentationPolicy, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    params = sample_params(policy, image.shape, rng)
    out = apply_transform(image, params, policy.fill_mode, policy.constant_value)
    if policy.rescale_factor != 1.0:
        out = out * policy.rescale_factor
    return out
