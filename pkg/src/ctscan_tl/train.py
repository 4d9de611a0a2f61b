"""Loss, optimizer, callbacks and the training loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, TrainingError
from .transform import AugmentationPolicy, apply_augmentation, load_image, sample_seed

logger = logging.getLogger(__name__)

CLIP_EPSILON = 1e-7
MIN_DELTA = 1e-4
MONITORS = ("val_loss", "val_acc", "train_loss", "train_acc")


# -- configuration --------------------------------------------------------------

@dataclass
class OptimizerConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")


@dataclass
class EarlyStoppingConfig:
    monitor: str = "val_loss"
    patience: int = 5
    restore_best: bool = True
    min_delta: float = MIN_DELTA

    def __post_init__(self):
        if self.monitor not in MONITORS:
            raise ConfigError(f"unknown monitor {self.monitor!r}; expected one of {MONITORS}")
        if self.patience < 1:
            raise ConfigError("early stopping patience must be >= 1")


@dataclass
class ReduceLRConfig:
    monitor: str = "val_loss"
    factor: float = 0.5
    patience: int = 3
    min_lr: float = 1e-6
    min_delta: float = MIN_DELTA

    def __post_init__(self):
        if self.monitor not in MONITORS:
            raise ConfigError(f"unknown monitor {self.monitor!r}; expected one of {MONITORS}")
        if self.patience < 1:
            raise ConfigError("reduce_lr patience must be >= 1")
        if not 0 < self.factor < 1:
            raise ConfigError("reduce_lr factor must lie in (0, 1)")
        if self.min_lr < 0:
            raise ConfigError("min_lr must be >= 0")


@dataclass
class CallbackConfig:
    early_stopping: EarlyStoppingConfig = field(default_factory=EarlyStoppingConfig)
    reduce_lr: ReduceLRConfig = field(default_factory=ReduceLRConfig)


@dataclass
class TrainingConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    callbacks: CallbackConfig = field(default_factory=CallbackConfig)
    batch_size: int = 32
    max_epochs: int = 50
    class_weights: Optional[dict] = None
    seed: int = 0
    cache_images: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        try:
            opt = OptimizerConfig(**d.pop("optimizer", {}))
            cb = dict(d.pop("callbacks", {}))
            callbacks = CallbackConfig(EarlyStoppingConfig(**cb.pop("early_stopping", {})),
                                       ReduceLRConfig(**cb.pop("reduce_lr", {})))
            if cb:
                raise ConfigError(f"unknown callback settings: {sorted(cb)}")
            return cls(optimizer=opt, callbacks=callbacks, **d)
        except TypeError as exc:
            raise ConfigError(f"bad training config: {exc}") from exc


# -- loss -------------------------------------------------------------------------

def _check_loss_inputs(probs, labels, sample_weights):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape or probs.ndim != 2:
        raise ValueError(f"probabilities {probs.shape} and labels {labels.shape} must match")
    if sample_weights is None:
        w = np.ones(len(probs))
    else:
        w = np.asarray(sample_weights, dtype=np.float64)
        if w.shape != (len(probs),):
            raise ValueError(f"sample_weights shape {w.shape} does not match batch {len(probs)}")
    return probs, labels, w


def categorical_crossentropy(probs, labels, sample_weights=None) -> float:
    """Sample-weighted mean of ``-sum(y * ln(max(p, 1e-7)))``."""
    probs, labels, w = _check_loss_inputs(probs, labels, sample_weights)
    per_sample = -(labels * np.log(np.maximum(probs, CLIP_EPSILON))).sum(axis=1)
    return float((w * per_sample).sum() / w.sum())


def crossentropy_grad(probs, labels, sample_weights=None) -> np.ndarray:
    """Gradient of :func:`categorical_crossentropy` with respect to ``probs``."""
    probs, labels, w = _check_loss_inputs(probs, labels, sample_weights)
    unclipped = probs > CLIP_EPSILON
    grad = np.where(unclipped, -labels / np.where(unclipped, probs, 1.0), 0.0)
    return grad * (w / w.sum())[:, None]


def one_hot(indices, num_classes) -> np.ndarray:
    out = np.zeros((len(indices), num_classes))
    out[np.arange(len(indices)), indices] = 1.0
    return out


# -- optimizer --------------------------------------------------------------------

def adam_step(params: dict, grads: dict, state: dict, config: OptimizerConfig, step_index: int,
              learning_rate: Optional[float] = None):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    ``state`` maps each parameter name to its ``(m, v)`` moment pair; missing
    entries start at zero.
    """
    if step_index < 1:
        raise ValueError("step_index starts at 1")
    lr = config.learning_rate if learning_rate is None else learning_rate
    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    bc1 = 1.0 - b1 ** step_index
    bc2 = 1.0 - b2 ** step_index
    new_params, new_state = {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m, v = state.get(name, (np.zeros_like(p), np.zeros_like(p)))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_state[name] = (m, v)
    return new_params, new_state


class Adam:
    def __init__(self, config: OptimizerConfig = OptimizerConfig()):
        self.config = config
        self.learning_rate = config.learning_rate
        self.state = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        new_params, self.state = adam_step(params, grads, self.state, self.config, self.t,
                                           self.learning_rate)
        return new_params


# -- callbacks ----------------------------------------------------------------------

def _improved(value, best, mode, min_delta):
    if best is None:
        return True
    if mode == "min":
        return value < best - min_delta
    return value > best + min_delta


def monitor_mode(monitor: str) -> str:
    return "max" if monitor.endswith("acc") else "min"


def early_stopping_decision(values: Sequence[float], patience: int, restore_best: bool = True,
                            min_delta: float = MIN_DELTA, mode: str = "min"):
    """Return ``(stop, best_epoch)`` for a monitored series, epochs counted from 1.

    Training stops once ``patience`` consecutive epochs fail to beat the running
    best by more than ``min_delta``. ``restore_best`` does not change the
    decision; the trainer uses it to reload the weights of ``best_epoch``.
    """
    if not values:
        raise ValueError("history is empty")
    best, best_epoch, wait = None, 0, 0
    for epoch, value in enumerate(values, start=1):
        if _improved(value, best, mode, min_delta):
            best, best_epoch, wait = value, epoch, 0
        else:
            wait += 1
    return wait >= patience, best_epoch


class ReduceLROnPlateau:
    def __init__(self, factor=0.5, patience=3, min_lr=1e-6, min_delta=MIN_DELTA, mode="min"):
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.min_delta = min_delta
        self.mode = mode
        self.best = None
        self.wait = 0
        self.reduced = False

    def update(self, value, lr):
        """Feed one epoch's monitored value; returns the learning rate for the next epoch."""
        self.reduced = False
        if _improved(value, self.best, self.mode, self.min_delta):
            self.best = value
            self.wait = 0
            return lr
        self.wait += 1
        if self.wait >= self.patience:
            self.wait = 0
            self.reduced = True
            return max(lr * self.factor, self.min_lr)
        return lr


def reduce_lr_on_plateau(values: Sequence[float], current_lr: float, factor: float = 0.5,
                         patience: int = 3, min_lr: float = 1e-6, min_delta: float = MIN_DELTA,
                         mode: str = "min") -> float:
    """Learning rate to use after the last epoch of ``values``.

    Replays the plateau counter over the whole series, so earlier reductions
    reset it exactly as they would have during training.
    """
    if current_lr <= 0:
        raise ValueError("current_lr must be positive")
    tracker = ReduceLROnPlateau(factor, patience, min_lr, min_delta, mode)
    for value in values:
        tracker.update(value, current_lr)
    return max(current_lr * factor, min_lr) if tracker.reduced else current_lr


# -- history ------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)
    monitor: str = "val_loss"
    min_delta: float = MIN_DELTA

    @property
    def stop_epoch(self) -> int:
        return len(self.records)

    @property
    def best_epoch(self) -> int:
        return early_stopping_decision(self.series(self.monitor), 1, min_delta=self.min_delta,
                                       mode=monitor_mode(self.monitor))[1]

    def series(self, key: str) -> list:
        return [getattr(r, key) for r in self.records]

    def to_list(self) -> list:
        return [asdict(r) for r in self.records]

    def to_json(self) -> str:
        return json.dumps(self.to_list(), indent=2) + "\n"

    @classmethod
    def from_list(cls, items, monitor="val_loss") -> "TrainingHistory":
        return cls([EpochRecord(**item) for item in items], monitor)

    @classmethod
    def load(cls, path, monitor="val_loss") -> "TrainingHistory":
        return cls.from_list(json.loads(Path(path).read_text()), monitor)


# -- data feeding -------------------------------------------------------------------

class ImageSource:
    """Loads decoded, resized images for a list of records, optionally cached."""

    def __init__(self, records, class_names, image_size, cache=True):
        self.records = list(records)
        self.class_names = list(class_names)
        self.image_size = tuple(image_size)
        self.labels = np.array([self.class_names.index(r.class_label) for r in self.records],
                               dtype=np.int64)
        self._cache = {} if cache else None

    def __len__(self):
        return len(self.records)

    def image(self, i) -> np.ndarray:
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        img = load_image(self.records[i].path, self.image_size)
        if self._cache is not None:
            self._cache[i] = img
        return img

    def batch(self, indices) -> np.ndarray:
        return np.stack([self.image(i) for i in indices])


class ArraySource:
    """In-memory stand-in for :class:`ImageSource`."""

    def __init__(self, images, labels):
        self.images = np.asarray(images, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def image(self, i):
        return self.images[i]

    def batch(self, indices):
        return self.images[np.asarray(indices)]


def evaluate_loss(model, source, sample_weights=None, batch_size=32,
                  include_regularization=True):
    """Inference-mode weighted loss and accuracy over a whole source."""
    n = len(source)
    k = model.num_classes
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    weighted, correct = 0.0, 0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        probs = model.forward(source.batch(idx), training=False)
        y = one_hot(source.labels[idx], k)
        weighted += categorical_crossentropy(probs, y, w[idx]) * w[idx].sum()
        correct += int((probs.argmax(axis=1) == source.labels[idx]).sum())
    loss = weighted / w.sum()
    if include_regularization:
        loss += model.regularization_loss()
    return loss, correct / n


# -- training loop --------------------------------------------------------------------

@dataclass
class FitResult:
    history: TrainingHistory
    model: object
    best_weights: dict
    final_weights: dict


def fit(model, train_source, val_source, policy: AugmentationPolicy, config: TrainingConfig,
        class_names: Sequence[str], run_dir=None) -> FitResult:
    """Train ``model`` in place and return its history.

    Mini-batches are shuffled per epoch, augmented per sample with seeds
    derived from (seed, epoch, sample index) and weighted by class. Validation
    is un-augmented. With ``restore_best`` the model ends on its best epoch.
    """
    if len(train_source) == 0 or len(val_source) == 0:
        raise DataError("training and validation sets must be non-empty")
    k = len(class_names)
    present = np.bincount(train_source.labels, minlength=k)
    for name, count in zip(class_names, present):
        if count == 0:
            raise DataError(f"class {name!r} has no training records")
    if config.class_weights:
        missing = set(class_names) - set(config.class_weights)
        if missing:
            raise ConfigError(f"class_weights missing classes {sorted(missing)}")
        class_w = np.array([config.class_weights[c] for c in class_names], dtype=np.float64)
    else:
        class_w = np.ones(k)

    es, rl = config.callbacks.early_stopping, config.callbacks.reduce_lr
    optimizer = Adam(config.optimizer)
    plateau = ReduceLROnPlateau(rl.factor, rl.patience, rl.min_lr, rl.min_delta,
                                monitor_mode(rl.monitor))
    history = TrainingHistory(monitor=es.monitor, min_delta=es.min_delta)
    es_mode = monitor_mode(es.monitor)
    best_value, best_weights = None, model.get_weights()
    n = len(train_source)

    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        dropout_rng = np.random.default_rng([config.seed, epoch, 1])
        weighted_loss, weight_sum, correct, reg_sum, n_batches = 0.0, 0.0, 0, 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start:start + config.batch_size]
            x = np.stack([apply_augmentation(train_source.image(i), policy,
                                             sample_seed(config.seed, epoch, i)) for i in idx])
            labels = train_source.labels[idx]
            y = one_hot(labels, k)
            w = class_w[labels]
            probs = model.forward(x, training=True, rng=dropout_rng)
            data_loss = categorical_crossentropy(probs, y, w)
            reg = model.regularization_loss()
            if not math.isfinite(data_loss + reg):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            model.backward(crossentropy_grad(probs, y, w))
            model.set_trainable(optimizer.step(model.trainable_params(), model.trainable_grads()))
            weighted_loss += data_loss * w.sum()
            weight_sum += w.sum()
            reg_sum += reg
            n_batches += 1
            correct += int((probs.argmax(axis=1) == labels).sum())

        train_loss = weighted_loss / weight_sum + reg_sum / n_batches
        val_loss, val_acc = evaluate_loss(model, val_source, batch_size=config.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        rec = EpochRecord(epoch, float(train_loss), correct / n, float(val_loss), float(val_acc),
                          float(optimizer.learning_rate))
        history.records.append(rec)
        logger.info("epoch %d: loss=%.4f acc=%.4f val_loss=%.4f val_acc=%.4f lr=%.2e", epoch,
                    rec.train_loss, rec.train_acc, rec.val_loss, rec.val_acc, rec.lr)

        value = getattr(rec, es.monitor)
        if _improved(value, best_value, es_mode, es.min_delta):
            best_value = value
            best_weights = model.get_weights()
        stop, _ = early_stopping_decision(history.series(es.monitor), es.patience,
                                          es.restore_best, es.min_delta, es_mode)
        if stop:
            logger.info("early stopping after epoch %d (best epoch %d)", epoch,
                        history.best_epoch)
            break
        optimizer.learning_rate = plateau.update(getattr(rec, rl.monitor),
                                                 optimizer.learning_rate)

    final_weights = model.get_weights()
    if es.restore_best:
        model.set_weights(best_weights)
    result = FitResult(history, model, best_weights, final_weights)
    if run_dir is not None:
        save_run(result, run_dir, class_names)
    return result


def save_run(result: FitResult, run_dir, class_names) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "history.json").write_text(result.history.to_json())
    model = result.model
    current = model.get_weights()
    model.set_weights(result.best_weights)
    model.save(run_dir / "model-best", class_names)
    model.set_weights(result.final_weights)
    model.save(run_dir / "model-final", class_names)
    model.set_weights(current)
