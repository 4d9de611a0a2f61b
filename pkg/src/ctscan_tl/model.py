"""Backbones, the residual-Inception block and the classifier head.

Everything except the optional Keras-backed Inception-ResNet-V2 provider is
plain numpy with hand-written backward passes. Feature maps are NHWC float64.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, LoadError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64


# -- layers -------------------------------------------------------------------

class Layer:
    """Base layer. ``params`` are trainable, ``state`` arrays are not."""

    def __init__(self, name):
        self.name = name
        self.params = {}
        self.grads = {}
        self.state = {}

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def output_shape(self, input_shape):
        raise NotImplementedError


def _same_padding(size, k, s):
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return out, total // 2, total - total // 2


class Conv2D(Layer):
    """2-D convolution, TF-style ``same`` padding, kernel stored as (kh, kw, cin, cout)."""

    def __init__(self, name, in_channels, out_channels, kernel_size=3, stride=1,
                 activation=None, rng=None):
        super().__init__(name)
        self.k = kernel_size
        self.stride = stride
        self.in_channels = in_channels
        self.out_channels = out_channels
        if activation not in (None, "relu"):
            raise ConfigError(f"unsupported activation {activation!r}")
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = kernel_size * kernel_size * in_channels
        self.params["kernel"] = rng.normal(0.0, math.sqrt(2.0 / fan_in),
                                           (kernel_size, kernel_size, in_channels,
                                            out_channels)).astype(DTYPE)
        self.params["bias"] = np.zeros(out_channels, dtype=DTYPE)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} channels, got {c}")
        return (-(-h // self.stride), -(-w // self.stride), self.out_channels)

    def forward(self, x, training=False, rng=None):
        n, h, w, c = x.shape
        if c != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} channels, got {c}")
        k, s = self.k, self.stride
        oh, pt, pb = _same_padding(h, k, s)
        ow, pl, pr = _same_padding(w, k, s)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s][:, :oh, :ow]
        cols = win.reshape(n * oh * ow, c * k * k)
        wmat = self.params["kernel"].transpose(2, 0, 1, 3).reshape(c * k * k, -1)
        out = (cols @ wmat + self.params["bias"]).reshape(n, oh, ow, -1)
        if self.activation == "relu":
            out = np.maximum(out, 0.0)
        self._cache = (x.shape, xp.shape, cols, wmat, (pt, pl), out)
        return out

    def backward(self, dout):
        xshape, xpshape, cols, wmat, (pt, pl), out = self._cache
        n, h, w, c = xshape
        k, s = self.k, self.stride
        if self.activation == "relu":
            dout = dout * (out > 0)
        oh, ow = dout.shape[1:3]
        dflat = dout.reshape(-1, self.out_channels)
        self.grads["kernel"] = (cols.T @ dflat).reshape(c, k, k, -1).transpose(1, 2, 0, 3)
        self.grads["bias"] = dflat.sum(axis=0)
        dcols = (dflat @ wmat.T).reshape(n, oh, ow, c, k, k)
        dxp = np.zeros(xpshape, dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += dcols[..., i, j]
        return dxp[:, pt:pt + h, pl:pl + w, :]


class MaxPool2D(Layer):
    """Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped."""

    def __init__(self, name, pool=2):
        super().__init__(name)
        self.pool = pool

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (h // self.pool, w // self.pool, c)

    def forward(self, x, training=False, rng=None):
        n, h, w, c = x.shape
        p = self.pool
        oh, ow = h // p, w // p
        blocks = x[:, :oh * p, :ow * p].reshape(n, oh, p, ow, p, c).transpose(0, 1, 3, 5, 2, 4)
        blocks = blocks.reshape(n, oh, ow, c, p * p)
        arg = blocks.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        shape, arg = self._cache
        n, h, w, c = shape
        p = self.pool
        oh, ow = dout.shape[1:3]
        blocks = np.zeros((n, oh, ow, c, p * p), dtype=DTYPE)
        np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
        blocks = blocks.reshape(n, oh, ow, c, p, p).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros(shape, dtype=DTYPE)
        dx[:, :oh * p, :ow * p] = blocks.reshape(n, oh * p, ow * p, c)
        return dx


@dataclass
class ResidualBlockConfig:
    branch_widths: tuple = (8, 8, 8)
    expansion_width: int = 32
    residual_scale: float = 0.2

    def __post_init__(self):
        self.branch_widths = tuple(int(b) for b in self.branch_widths)
        if not self.branch_widths or min(self.branch_widths) < 1:
            raise ConfigError("branch_widths must be a non-empty list of positive ints")
        if not 0.1 <= self.residual_scale <= 0.3:
            raise ConfigError(f"residual_scale must lie in [0.1, 0.3], got {self.residual_scale}")


class ResidualInceptionBlock(Layer):
    """Parallel conv branches, linear 1x1 expansion, scaled residual sum, ReLU.

    Branch ``i`` is a 1x1 ReLU convolution followed by ``i`` 3x3 ReLU
    convolutions, so the branches see growing receptive fields. Their
    concatenation is expanded back to the input depth by a 1x1 convolution
    without activation, multiplied by ``residual_scale`` and added to the input.
    """

    def __init__(self, name, config: ResidualBlockConfig, rng=None):
        super().__init__(name)
        self.config = config
        self.residual_scale = config.residual_scale
        rng = rng if rng is not None else np.random.default_rng(0)
        cin = config.expansion_width
        self.branches = []
        for b, width in enumerate(config.branch_widths):
            convs = [Conv2D(f"{name}/branch{b}/conv0", cin, width, 1, activation="relu", rng=rng)]
            for d in range(b):
                convs.append(Conv2D(f"{name}/branch{b}/conv{d + 1}", width, width, 3,
                                    activation="relu", rng=rng))
            self.branches.append(convs)
        self.expand = Conv2D(f"{name}/expand", sum(config.branch_widths), cin, 1, rng=rng)

    def sublayers(self):
        for convs in self.branches:
            yield from convs
        yield self.expand

    def output_shape(self, input_shape):
        if input_shape[2] != self.config.expansion_width:
            raise ShapeError(f"{self.name}: input has {input_shape[2]} channels, expansion "
                             f"width is {self.config.expansion_width}")
        return tuple(input_shape)

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.config.expansion_width:
            raise ShapeError(f"{self.name}: input has {x.shape[-1]} channels, expansion "
                             f"width is {self.config.expansion_width}")
        outs = []
        for convs in self.branches:
            h = x
            for conv in convs:
                h = conv.forward(h)
            outs.append(h)
        mixed = np.concatenate(outs, axis=-1)
        residual = self.expand.forward(mixed)
        out = np.maximum(x + self.residual_scale * residual, 0.0)
        self._cache = out
        return out

    def backward(self, dout):
        dsum = dout * (self._cache > 0)
        dmixed = self.expand.backward(self.residual_scale * dsum)
        dx = dsum.copy()
        start = 0
        for convs, width in zip(self.branches, self.config.branch_widths):
            d = dmixed[..., start:start + width]
            start += width
            for conv in reversed(convs):
                d = conv.backward(d)
            dx += d
        return dx


class Flatten(Layer):
    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class BatchNorm(Layer):
    """Batch normalization over the last axis (momentum 0.99, eps 1e-3).

    Moving statistics are bias-corrected averages: the first training batch
    sets them outright, so short runs do not evaluate with the 0/1 initial
    values.
    """

    def __init__(self, name, features, momentum=0.99, epsilon=1e-3):
        super().__init__(name)
        self.momentum = momentum
        self.epsilon = epsilon
        self.params["gamma"] = np.ones(features, dtype=DTYPE)
        self.params["beta"] = np.zeros(features, dtype=DTYPE)
        self.state["moving_mean"] = np.zeros(features, dtype=DTYPE)
        self.state["moving_variance"] = np.ones(features, dtype=DTYPE)
        self.state["num_batches"] = np.zeros(1, dtype=DTYPE)

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x, training=False, rng=None):
        if training:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            t = self.state["num_batches"][0] + 1
            alpha = (1 - m) / (1 - m ** t)
            self.state["moving_mean"] = (1 - alpha) * self.state["moving_mean"] + alpha * mean
            self.state["moving_variance"] = ((1 - alpha) * self.state["moving_variance"]
                                             + alpha * var)
            self.state["num_batches"] = np.array([t], dtype=DTYPE)
        else:
            mean = self.state["moving_mean"]
            var = self.state["moving_variance"]
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, training)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout):
        xhat, inv_std, training = self._cache
        gamma = self.params["gamma"]
        self.grads["gamma"] = (dout * xhat).sum(axis=0)
        self.grads["beta"] = dout.sum(axis=0)
        dxhat = dout * gamma
        if not training:
            return dxhat * inv_std
        n = dout.shape[0]
        return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class Dense(Layer):
    def __init__(self, name, in_features, out_features, activation=None, rng=None,
                 l2=0.0):
        super().__init__(name)
        if activation not in (None, "relu", "softmax"):
            raise ConfigError(f"unsupported activation {activation!r}")
        self.activation = activation
        self.l2 = l2
        rng = rng if rng is not None else np.random.default_rng(0)
        limit = math.sqrt(6.0 / (in_features + out_features))
        self.params["kernel"] = rng.uniform(-limit, limit, (in_features, out_features)).astype(DTYPE)
        self.params["bias"] = np.zeros(out_features, dtype=DTYPE)

    def output_shape(self, input_shape):
        return (self.params["kernel"].shape[1],)

    def forward(self, x, training=False, rng=None):
        z = x @ self.params["kernel"] + self.params["bias"]
        if self.activation == "relu":
            out = np.maximum(z, 0.0)
        elif self.activation == "softmax":
            e = np.exp(z - z.max(axis=1, keepdims=True))
            out = e / e.sum(axis=1, keepdims=True)
        else:
            out = z
        self._cache = (x, out)
        return out

    def regularization_loss(self):
        return self.l2 * float(np.sum(self.params["kernel"] ** 2)) if self.l2 else 0.0

    def backward(self, dout):
        x, out = self._cache
        if self.activation == "relu":
            dz = dout * (out > 0)
        elif self.activation == "softmax":
            dz = out * (dout - (dout * out).sum(axis=1, keepdims=True))
        else:
            dz = dout
        self.grads["kernel"] = x.T @ dz
        if self.l2:
            self.grads["kernel"] = self.grads["kernel"] + 2.0 * self.l2 * self.params["kernel"]
        self.grads["bias"] = dz.sum(axis=0)
        return dz @ self.params["kernel"].T


class Dropout(Layer):
    def __init__(self, name, rate):
        super().__init__(name)
        self.rate = rate

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0:
            self._mask = None
            return x
        rng = rng if rng is not None else np.random.default_rng()
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


def _walk(layers):
    for layer in layers:
        if isinstance(layer, ResidualInceptionBlock):
            yield from layer.sublayers()
        else:
            yield layer


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, training=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def output_shape(self, input_shape):
        shape = tuple(input_shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def named_params(self):
        return {f"{l.name}/{k}": v for l in _walk(self.layers) for k, v in l.params.items()}

    def named_grads(self):
        return {f"{l.name}/{k}": v for l in _walk(self.layers) for k, v in l.grads.items()}

    def named_state(self):
        return {f"{l.name}/{k}": v for l in _walk(self.layers) for k, v in l.state.items()}

    def assign(self, arrays: dict, strict=True):
        """Copy named arrays into params/state, checking shapes."""
        for layer in _walk(self.layers):
            for store in (layer.params, layer.state):
                for k, v in store.items():
                    key = f"{layer.name}/{k}"
                    if key not in arrays:
                        if strict:
                            raise LoadError(f"missing array {key!r}")
                        continue
                    new = np.asarray(arrays[key], dtype=DTYPE)
                    if new.shape != v.shape:
                        raise LoadError(f"shape mismatch for array {key!r}: expected "
                                        f"{v.shape}, got {new.shape}")
                    store[k] = new.copy()


# -- backbones ----------------------------------------------------------------

class Backbone:
    """A feature extractor mapping (N, H, W, C) images to (N, h, w, c) maps."""

    name = "backbone"
    supports_backward = True

    def __init__(self, input_shape, weights_source="random"):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.weights_source = str(weights_source)
        self.trainable = True

    @property
    def output_shape(self):
        raise NotImplementedError

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def named_params(self):
        return {}

    def named_state(self):
        return {}

    def parameter_count(self):
        return int(sum(v.size for v in self.named_params().values()))

    def trainable_parameter_count(self):
        return self.parameter_count() if self.trainable else 0

    def descriptor(self):
        return {"name": self.name, "input_shape": list(self.input_shape),
                "weights_source": self.weights_source}


class StubBackbone(Backbone):
    """Small random-weight backbone for tests.

    A stride-2 3x3 convolution (16 channels) with 2x2 max pooling, a stride-2
    3x3 convolution (32 channels), then one residual-Inception block.
    A 64x64x3 input produces an 8x8x32 feature map.
    """

    name = "stub"

    def __init__(self, input_shape=(64, 64, 3), weights_source="random", seed=0,
                 block: ResidualBlockConfig | None = None):
        super().__init__(input_shape, weights_source)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ShapeError(f"input_shape must be (H, W, C), got {input_shape}")
        rng = np.random.default_rng(seed)
        block = block or ResidualBlockConfig(expansion_width=32)
        if block.expansion_width != 32:
            raise ConfigError("stub residual block must have expansion_width 32")
        self.block_config = block
        self.net = Sequential([
            Conv2D("stem/conv1", self.input_shape[2], 16, 3, stride=2, activation="relu", rng=rng),
            MaxPool2D("stem/pool1"),
            Conv2D("stage2/conv", 16, 32, 3, stride=2, activation="relu", rng=rng),
            ResidualInceptionBlock("block_a", block, rng=rng),
        ])
        self._output_shape = self.net.output_shape(self.input_shape)
        if min(self._output_shape) < 1:
            raise ShapeError(f"input_shape {input_shape} is too small for the stub backbone")
        if weights_source not in ("random", None, ""):
            self.load_weights(weights_source)

    @property
    def output_shape(self):
        return self._output_shape

    def forward(self, x, training=False, rng=None):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"backbone expects {self.input_shape}, got {tuple(x.shape[1:])}")
        return self.net.forward(x, training=training, rng=rng)

    def backward(self, dout):
        return self.net.backward(dout)

    def named_params(self):
        return self.net.named_params()

    def named_grads(self):
        return self.net.named_grads()

    def load_weights(self, path):
        path = Path(path)
        try:
            with np.load(path) as npz:
                arrays = {k: npz[k] for k in npz.files}
        except (OSError, ValueError) as exc:
            raise LoadError(f"cannot read backbone weights {path}: {exc}") from exc
        arrays = {k.removeprefix("backbone/"): v for k, v in arrays.items()}
        self.net.assign(arrays)

    def descriptor(self):
        d = super().descriptor()
        d["block"] = asdict(self.block_config)
        return d


class KerasInceptionResNetV2(Backbone):
    """ImageNet-pretrained Inception-ResNet-V2 from ``tf.keras.applications``.

    Used frozen: only the forward pass is available, so gradients never reach
    it. ``weights_source`` is a Keras weight file, ``"imagenet"`` to let Keras
    fetch the published weights, or ``"random"`` for an untrained network.
    """

    name = "inception-resnet-v2"
    supports_backward = False

    def __init__(self, input_shape=(224, 224, 3), weights_source="imagenet", seed=0):
        super().__init__(input_shape, weights_source)
        try:
            import tensorflow as tf
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise LoadError("the inception-resnet-v2 backbone needs tensorflow installed") from exc
        tf.keras.utils.set_random_seed(seed)
        weights = None if weights_source in ("random", None, "") else weights_source
        from_file = weights not in (None, "imagenet")
        if from_file and not Path(weights).is_file():
            raise LoadError(f"weight file {weights} not found")
        try:
            self.model = tf.keras.applications.InceptionResNetV2(
                include_top=False, weights=None if from_file else weights,
                input_shape=self.input_shape)
            if from_file:
                self.model.load_weights(weights)
        except ValueError as exc:
            raise LoadError(f"cannot load inception-resnet-v2 weights from {weights}: {exc}") from exc
        self.model.trainable = False
        self.trainable = False

    @property
    def output_shape(self):
        return tuple(int(d) for d in self.model.output_shape[1:])

    def forward(self, x, training=False, rng=None):
        # Keras applications expect inputs scaled to [-1, 1]
        feats = self.model(np.asarray(x * 2.0 - 1.0, dtype=np.float32), training=False)
        return np.asarray(feats, dtype=DTYPE)

    def backward(self, dout):
        raise ConfigError("the inception-resnet-v2 backbone is forward-only; keep it frozen")

    def named_params(self):
        return {w.path if hasattr(w, "path") else w.name: w for w in self.model.weights}

    def parameter_count(self):
        return int(self.model.count_params())


BACKBONES = {"stub": StubBackbone, "inception-resnet-v2": KerasInceptionResNetV2}


def load_backbone(name: str, weights_source="random", input_shape=(224, 224, 3), seed=0,
                  **kwargs) -> Backbone:
    try:
        cls = BACKBONES[name]
    except KeyError:
        raise ConfigError(f"unknown backbone {name!r}; registered: {sorted(BACKBONES)}") from None
    if name == "stub" and weights_source not in ("random", None, "") \
            and not Path(weights_source).is_file():
        raise LoadError(f"weight file {weights_source} not found")
    return cls(input_shape=input_shape, weights_source=weights_source, seed=seed, **kwargs)


# -- head -----------------------------------------------------------------------

@dataclass
class HeadConfig:
    dense_widths: tuple = (256, 128)
    dropout_rate: float = 0.5
    kernel_regularization_strength: float = 1e-4
    num_classes: int = 2

    def __post_init__(self):
        self.dense_widths = tuple(int(w) for w in self.dense_widths)
        if len(self.dense_widths) != 2 or min(self.dense_widths) < 1:
            raise ConfigError(f"dense_widths must be two positive ints, got {self.dense_widths}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.kernel_regularization_strength < 0:
            raise ConfigError("kernel_regularization_strength must be >= 0")
        if int(self.num_classes) < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        self.num_classes = int(self.num_classes)

    def to_dict(self):
        d = asdict(self)
        d["dense_widths"] = list(self.dense_widths)
        return d


class Head(Sequential):
    """flatten -> batchnorm -> dense(relu) -> dense(relu) -> dropout -> dense(softmax).

    The L2 kernel penalty sits on the dense layer right after batch norm.
    """

    def __init__(self, input_shape, config: HeadConfig, seed=0):
        if len(input_shape) != 3 or min(input_shape) < 1:
            raise ShapeError(f"head input must be (h, w, c) with positive dims, got {input_shape}")
        self.input_shape = tuple(int(d) for d in input_shape)
        self.config = config
        rng = np.random.default_rng(seed)
        features = int(np.prod(self.input_shape))
        w1, w2 = config.dense_widths
        super().__init__([
            Flatten("head/flatten"),
            BatchNorm("head/batchnorm", features),
            Dense("head/dense1", features, w1, "relu", rng=rng,
                  l2=config.kernel_regularization_strength),
            Dense("head/dense2", w1, w2, "relu", rng=rng),
            Dropout("head/dropout", config.dropout_rate),
            Dense("head/output", w2, config.num_classes, "softmax", rng=rng),
        ])

    def regularization_loss(self):
        return sum(l.regularization_loss() for l in self.layers if isinstance(l, Dense))

    def parameter_count(self):
        return int(sum(v.size for v in self.named_params().values()))


def head_parameter_count(input_shape, config: HeadConfig) -> int:
    """Closed-form trainable parameter count of :class:`Head`."""
    f = int(np.prod(input_shape))
    w1, w2 = config.dense_widths
    k = config.num_classes
    return 2 * f + (f * w1 + w1) + (w1 * w2 + w2) + (w2 * k + k)


def build_head(backbone_output_shape, config: HeadConfig, seed=0) -> Head:
    return Head(backbone_output_shape, config, seed=seed)


# -- assembled model --------------------------------------------------------------

class Model:
    """Backbone plus head. ``forward`` returns class probabilities."""

    def __init__(self, backbone: Backbone, head: Head, freeze=True):
        if tuple(head.input_shape) != tuple(backbone.output_shape):
            raise ShapeError(f"head expects {head.input_shape}, backbone produces "
                             f"{backbone.output_shape}")
        if not freeze and not backbone.supports_backward:
            raise ConfigError(f"backbone {backbone.name!r} cannot be trained; set freeze=true")
        self.backbone = backbone
        self.head = head
        self.freeze = bool(freeze)
        backbone.trainable = not self.freeze

    @property
    def input_shape(self):
        return self.backbone.input_shape

    @property
    def num_classes(self):
        return self.head.config.num_classes

    def features(self, x, training=False, rng=None):
        return self.backbone.forward(x, training=training and not self.freeze, rng=rng)

    def forward(self, x, training=False, rng=None):
        return self.head.forward(self.features(x, training, rng), training=training, rng=rng)

    def forward_features(self, feats, training=False, rng=None):
        return self.head.forward(feats, training=training, rng=rng)

    def backward(self, dprobs):
        dfeat = self.head.backward(dprobs)
        if not self.freeze:
            self.backbone.backward(dfeat)

    def regularization_loss(self):
        return self.head.regularization_loss()

    def trainable_params(self):
        params = {}
        if not self.freeze:
            params.update({f"backbone/{k}": v for k, v in self.backbone.named_params().items()})
        params.update(self.head.named_params())
        return params

    def trainable_grads(self):
        grads = {}
        if not self.freeze:
            grads.update({f"backbone/{k}": v for k, v in self.backbone.named_grads().items()})
        grads.update(self.head.named_grads())
        return grads

    def set_trainable(self, arrays: dict):
        """Write updated trainable arrays back into their layers."""
        backbone = {k.removeprefix("backbone/"): v for k, v in arrays.items()
                    if k.startswith("backbone/")}
        head = {k: v for k, v in arrays.items() if not k.startswith("backbone/")}
        if backbone:
            self.backbone.net.assign(backbone, strict=False)
        self.head.assign(head, strict=False)

    def trainable_parameter_count(self):
        return int(sum(v.size for v in self.trainable_params().values()))

    def get_weights(self) -> dict:
        """Copies of every numpy-held array (params and state)."""
        out = {}
        if isinstance(self.backbone, StubBackbone):
            out.update({f"backbone/{k}": v.copy() for k, v in self.backbone.named_params().items()})
            out.update({f"backbone/{k}": v.copy() for k, v in self.backbone.net.named_state().items()})
        out.update({k: v.copy() for k, v in self.head.named_params().items()})
        out.update({k: v.copy() for k, v in self.head.named_state().items()})
        return out

    def set_weights(self, arrays: dict):
        backbone = {k.removeprefix("backbone/"): v for k, v in arrays.items()
                    if k.startswith("backbone/")}
        if isinstance(self.backbone, StubBackbone):
            self.backbone.net.assign(backbone)
        self.head.assign({k: v for k, v in arrays.items() if not k.startswith("backbone/")})

    def predict(self, x, batch_size=32):
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    def descriptor(self, class_names=None) -> dict:
        return {
            "format": "ctscan-tl-model",
            "version": 1,
            "backbone": self.backbone.descriptor(),
            "head": self.head.config.to_dict(),
            "freeze": self.freeze,
            "class_names": list(class_names) if class_names is not None else None,
        }

    def save(self, directory, class_names=None):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "architecture.json").write_text(
            json.dumps(self.descriptor(class_names), indent=2, sort_keys=True) + "\n")
        np.savez(directory / "weights.npz", **self.get_weights())


def assemble(backbone: Backbone, head: Head, freeze=True) -> Model:
    return Model(backbone, head, freeze)


def load_model(directory) -> tuple:
    """Rebuild a saved model; returns ``(model, class_names)``."""
    directory = Path(directory)
    try:
        desc = json.loads((directory / "architecture.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"cannot read model descriptor in {directory}: {exc}") from exc
    bdesc = desc["backbone"]
    kwargs = {}
    if bdesc["name"] == "stub" and "block" in bdesc:
        kwargs["block"] = ResidualBlockConfig(**bdesc["block"])
    weights_source = bdesc["weights_source"] if bdesc["name"] != "stub" else "random"
    backbone = load_backbone(bdesc["name"], weights_source, tuple(bdesc["input_shape"]), **kwargs)
    head = Head(backbone.output_shape, HeadConfig(**desc["head"]))
    model = Model(backbone, head, desc["freeze"])
    with np.load(directory / "weights.npz") as npz:
        model.set_weights({k: npz[k] for k in npz.files})
    return model, desc.get("class_names")
