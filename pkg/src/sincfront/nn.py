"""Minimal neural building blocks: layers with hand-written adjoints, the
network assembly for both front-ends, RMSprop, and checkpoint I/O.

Tensors are plain float64 numpy arrays. Every layer implements forward /
backward explicitly; there is no general autodiff. Given the same seed,
initialization, forward, backward, and updates are bitwise reproducible.
"""

import json
import zipfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels, sinc_layer
from .errors import (
    CheckpointError,
    InvalidBatchError,
    InvalidLabelError,
    InvalidSpecError,
    ShapeError,
)
from .filters import FilterSpec, WINDOW_KINDS

FRONTEND_SINC = "sinc"
FRONTEND_CONV = "conv"
FRONTENDS = (FRONTEND_SINC, FRONTEND_CONV)


@dataclass
class NetworkConfig:
    """Architecture + optimizer description.

    The defaults give: 80 sinc filters of length 251 over 200 ms chunks,
    two conv blocks of 60 filters of length 5, three 2048-unit dense layers
    with batch norm, leaky-ReLU activations everywhere, and RMSprop with
    lr=0.001, alpha=0.95, eps=1e-7 on minibatches of 128.
    """

    n_classes: int
    frontend: str = FRONTEND_SINC
    n_filters: int = 80
    filter_length: int = 251
    window: str = "hamming"
    conv_blocks: list = field(default_factory=lambda: [(60, 5), (60, 5)])
    pool_size: int = 3
    fc_layers: list = field(default_factory=lambda: [2048, 2048, 2048])
    leaky_slope: float = 0.2
    dropout: float = 0.0
    sample_rate: float = 16000.0
    chunk_seconds: float = 0.2
    learning_rate: float = 0.001
    rms_alpha: float = 0.95
    rms_eps: float = 1e-7
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.frontend not in FRONTENDS:
            raise InvalidSpecError(f"frontend must be one of {FRONTENDS}, got {self.frontend!r}")
        if self.window not in WINDOW_KINDS:
            raise InvalidSpecError(f"unknown window {self.window!r}")
        if self.n_classes < 2:
            raise InvalidSpecError(f"need at least 2 classes, got {self.n_classes}")
        if self.n_filters < 1 or self.filter_length < 1:
            raise InvalidSpecError(
                f"front-end needs positive filter count and length, got "
                f"{self.n_filters} x {self.filter_length}"
            )
        if not self.fc_layers:
            raise InvalidSpecError("at least one dense hidden layer is required")
        if self.pool_size < 1:
            raise InvalidSpecError(f"pool size must be >= 1, got {self.pool_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidSpecError(f"dropout rate must be in [0, 1), got {self.dropout}")
        self.conv_blocks = [tuple(b) for b in self.conv_blocks]
        self.fc_layers = list(self.fc_layers)

    @property
    def chunk_samples(self) -> int:
        return int(round(self.chunk_seconds * self.sample_rate))

    @property
    def first_layer_param_count(self) -> int:
        """Learnable scalars in the front-end layer: 2F for sinc, F*L for conv."""
        if self.frontend == FRONTEND_SINC:
            return 2 * self.n_filters
        return self.n_filters * self.filter_length

    def filter_spec(self) -> FilterSpec:
        return FilterSpec(length=self.filter_length, window=self.window,
                          sample_rate=self.sample_rate)

    def to_dict(self):
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def glorot_uniform(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Layer:
    """Forward/backward pair with named learnable params and state buffers."""

    def __init__(self, name):
        self.name = name
        self._params = {}
        self._grads = {}
        self._buffers = {}

    def params(self):
        return self._params

    def grads(self):
        return self._grads

    def buffers(self):
        return self._buffers

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError


class SincFrontend(Layer):
    """Cutoff-parametrized band-pass bank as the first convolution (no bias)."""

    def __init__(self, name, n_filters, spec):
        super().__init__(name)
        self.layer_params = sinc_layer.mel_initialized(n_filters, spec)
        self._params = {"cutoffs": self.layer_params.raw_cutoffs}
        self._x = None

    def forward(self, x, training=False):
        self._x = x
        return sinc_layer.forward(x, self.layer_params)

    def backward(self, upstream):
        grad_raw, grad_input = sinc_layer.backward(self._x, self.layer_params, upstream)
        self._grads = {"cutoffs": grad_raw}
        return grad_input


class Conv1d(Layer):
    def __init__(self, name, in_channels, out_channels, kernel_size, rng, bias=True):
        super().__init__(name)
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        weight = glorot_uniform(rng, (out_channels, in_channels, kernel_size), fan_in, fan_out)
        self._params = {"weight": weight}
        if bias:
            self._params["bias"] = np.zeros(out_channels)
        self.kernel_size = kernel_size
        self._x = None

    def forward(self, x, training=False):
        if x.shape[2] < self.kernel_size:
            raise ShapeError(f"time axis {x.shape[2]} shorter than kernel {self.kernel_size}")
        self._x = x
        out = kernels.corr1d_forward(x, self._params["weight"])
        if "bias" in self._params:
            out += self._params["bias"][None, :, None]
        return out

    def backward(self, upstream):
        self._grads = {
            "weight": kernels.corr1d_grad_weights(self._x, upstream, self.kernel_size),
        }
        if "bias" in self._params:
            self._grads["bias"] = upstream.sum(axis=(0, 2))
        return kernels.corr1d_grad_input(upstream, self._params["weight"])


class MaxPool1d(Layer):
    def __init__(self, name, pool):
        super().__init__(name)
        if pool < 1:
            raise InvalidSpecError(f"pool size must be >= 1, got {pool}")
        self.pool = int(pool)
        self._idx = None
        self._t_in = None

    def forward(self, x, training=False):
        self._t_in = x.shape[2]
        out, self._idx = kernels.maxpool1d_forward(x, self.pool)
        return out

    def backward(self, upstream):
        return kernels.maxpool1d_backward(self._idx, upstream, self._t_in)


class LayerNorm(Layer):
    """Normalize each sample over all of its features, with per-feature affine."""

    EPS = 1e-5

    def __init__(self, name, feature_shape):
        super().__init__(name)
        self.feature_shape = tuple(feature_shape)
        n = int(np.prod(self.feature_shape))
        if n < 2:
            raise InvalidSpecError(f"layer norm needs a feature extent >= 2, got {n}")
        self._params = {"gain": np.ones(n), "bias": np.zeros(n)}
        self._cache = None

    def forward(self, x, training=False):
        b = x.shape[0]
        flat = x.reshape(b, -1)
        mu = flat.mean(axis=1, keepdims=True)
        var = flat.var(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = (flat - mu) * inv_std
        self._cache = (xhat, inv_std, x.shape)
        return (xhat * self._params["gain"] + self._params["bias"]).reshape(x.shape)

    def backward(self, upstream):
        xhat, inv_std, shape = self._cache
        g = upstream.reshape(upstream.shape[0], -1)
        self._grads = {"gain": (g * xhat).sum(axis=0), "bias": g.sum(axis=0)}
        gx = g * self._params["gain"]
        m1 = gx.mean(axis=1, keepdims=True)
        m2 = (gx * xhat).mean(axis=1, keepdims=True)
        return ((gx - m1 - xhat * m2) * inv_std).reshape(shape)


class BatchNorm(Layer):
    """Per-feature batch statistics in training, running averages at inference."""

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, name, num_features):
        super().__init__(name)
        self._params = {"gain": np.ones(num_features), "bias": np.zeros(num_features)}
        self._buffers = {
            "running_mean": np.zeros(num_features),
            "running_var": np.ones(num_features),
        }
        self._cache = None

    def forward(self, x, training=False):
        if x.ndim != 2:
            raise ShapeError(f"batch norm expects (B, D), got {x.shape}")
        if training:
            if x.shape[0] < 2:
                raise InvalidBatchError(
                    f"batch of {x.shape[0]} too small for batch statistics"
                )
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self._buffers["running_mean"] *= 1.0 - self.MOMENTUM
            self._buffers["running_mean"] += self.MOMENTUM * mu
            self._buffers["running_var"] *= 1.0 - self.MOMENTUM
            self._buffers["running_var"] += self.MOMENTUM * var
        else:
            mu = self._buffers["running_mean"]
            var = self._buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std, training)
        return xhat * self._params["gain"] + self._params["bias"]

    def backward(self, upstream):
        xhat, inv_std, training = self._cache
        self._grads = {"gain": (upstream * xhat).sum(axis=0), "bias": upstream.sum(axis=0)}
        gx = upstream * self._params["gain"]
        if not training:
            return gx * inv_std
        m1 = gx.mean(axis=0)
        m2 = (gx * xhat).mean(axis=0)
        return (gx - m1 - xhat * m2) * inv_std


class LeakyReLU(Layer):
    def __init__(self, name, slope=0.2):
        super().__init__(name)
        self.slope = float(slope)
        self._mask = None

    def forward(self, x, training=False):
        # the gradient at exactly 0 is defined as the slope
        self._mask = x > 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, upstream):
        return np.where(self._mask, upstream, self.slope * upstream)


class Dropout(Layer):
    """Inverted dropout; identity when the rate is 0 or at inference."""

    def __init__(self, name, rate, seed):
        super().__init__(name)
        self.rate = float(rate)
        self._rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self._rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, upstream):
        if self._mask is None:
            return upstream
        return upstream * self._mask


class Flatten(Layer):
    def __init__(self, name):
        super().__init__(name)
        self._shape = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        return upstream.reshape(self._shape)


class Dense(Layer):
    def __init__(self, name, in_features, out_features, rng):
        super().__init__(name)
        self._params = {
            "weight": glorot_uniform(rng, (out_features, in_features), in_features, out_features),
            "bias": np.zeros(out_features),
        }
        self._x = None

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self._params["weight"].shape[1]:
            raise ShapeError(
                f"dense expects (B, {self._params['weight'].shape[1]}), got {x.shape}"
            )
        self._x = x
        return x @ self._params["weight"].T + self._params["bias"]

    def backward(self, upstream):
        self._grads = {
            "weight": upstream.T @ self._x,
            "bias": upstream.sum(axis=0),
        }
        return upstream @ self._params["weight"]


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean cross-entropy over the batch via a stable log-sum-exp.

    Returns (loss, grad_logits) with grad_logits = (softmax - onehot) / B.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"got logits {logits.shape} and targets {targets.shape}")
    n, c = logits.shape
    if n == 0:
        raise InvalidBatchError("empty batch")
    if targets.min() < 0 or targets.max() >= c:
        raise InvalidLabelError(f"targets must lie in [0, {c}), got range "
                                f"[{targets.min()}, {targets.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), targets]))
    grad = softmax(logits)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class RMSProp:
    """v <- a v + (1-a) g^2;  p <- p - lr g / (sqrt(v) + eps)."""

    def __init__(self, learning_rate=0.001, alpha=0.95, eps=1e-7):
        self.learning_rate = float(learning_rate)
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.state = {}

    def step(self, params, grads):
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
            v = self.state.get(name)
            if v is None:
                v = np.zeros_like(p)
                self.state[name] = v
            v *= self.alpha
            v += (1.0 - self.alpha) * g * g
            p -= self.learning_rate * g / (np.sqrt(v) + self.eps)


# ---------------------------------------------------------------------------
# network assembly
# ---------------------------------------------------------------------------

class Network:
    """The raw-waveform classifier: front-end conv, conv blocks, dense stack.

    Layer order per conv stage is conv -> max-pool -> layer norm -> leaky-ReLU;
    dense stages are dense -> batch norm -> leaky-ReLU. Input chunks are layer
    normalized before the front-end. The activation of the last dense stage
    (before the classifier) is exposed as the embedding used for speaker
    vectors.
    """

    def __init__(self, config: NetworkConfig):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        t = config.chunk_samples
        if t < config.filter_length:
            raise InvalidSpecError(
                f"chunk of {t} samples shorter than front-end filters ({config.filter_length})"
            )
        layers = [LayerNorm("input_norm", (1, t))]
        if config.frontend == FRONTEND_SINC:
            layers.append(SincFrontend("frontend", config.n_filters, config.filter_spec()))
        else:
            layers.append(Conv1d("frontend", 1, config.n_filters, config.filter_length,
                                 rng, bias=False))
        t = t - config.filter_length + 1
        channels = config.n_filters
        t = self._add_conv_tail(layers, config, channels, t, stage=0)
        for i, (out_ch, k) in enumerate(config.conv_blocks, start=1):
            if t < k:
                raise InvalidSpecError(f"conv block {i} kernel {k} exceeds remaining length {t}")
            layers.append(Conv1d(f"conv{i}", channels, out_ch, k, rng))
            t = t - k + 1
            channels = out_ch
            t = self._add_conv_tail(layers, config, channels, t, stage=i)
        layers.append(Flatten("flatten"))
        width = channels * t
        self._hidden_index = None
        for i, units in enumerate(config.fc_layers, start=1):
            layers.append(Dense(f"fc{i}", width, units, rng))
            layers.append(BatchNorm(f"bn{i}", units))
            layers.append(LeakyReLU(f"act_fc{i}", config.leaky_slope))
            self._hidden_index = len(layers) - 1
            if config.dropout > 0.0:
                layers.append(Dropout(f"drop{i}", config.dropout, config.seed + 7919 * i))
            width = units
        layers.append(Dense("classifier", width, config.n_classes, rng))
        self.layers = layers

    @staticmethod
    def _add_conv_tail(layers, config, channels, t, stage):
        if config.pool_size > 1:
            layers.append(MaxPool1d(f"pool{stage}", config.pool_size))
            t = t // config.pool_size
        if t < 1:
            raise InvalidSpecError("time axis exhausted; reduce pooling or kernel sizes")
        layers.append(LayerNorm(f"norm{stage}", (channels, t)))
        layers.append(LeakyReLU(f"act{stage}", config.leaky_slope))
        return t

    @property
    def hidden_width(self) -> int:
        return self.config.fc_layers[-1]

    def forward(self, x, training=False, capture=False):
        """Run the stack; with capture=True also return every layer output."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"expected chunks of shape (B, 1, T), got {x.shape}")
        captured = []
        hidden = None
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, training=training)
            if i == self._hidden_index:
                hidden = x
            if capture:
                captured.append((layer.name, x))
        if capture:
            return x, hidden, captured
        return x, hidden

    def backward(self, grad_logits):
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def parameters(self):
        out = {}
        for layer in self.layers:
            for key, val in layer.params().items():
                out[f"{layer.name}.{key}"] = val
        return out

    def gradients(self):
        out = {}
        for layer in self.layers:
            for key, val in layer.grads().items():
                out[f"{layer.name}.{key}"] = val
        return out

    def buffers(self):
        out = {}
        for layer in self.layers:
            for key, val in layer.buffers().items():
                out[f"{layer.name}.{key}"] = val
        return out

    def embed(self, x):
        """Inference-mode activations of the last hidden dense stage."""
        _, hidden = self.forward(x, training=False)
        return hidden

    def frontend_layer(self):
        return self.layers[1]

    def sinc_params(self):
        front = self.frontend_layer()
        if not isinstance(front, SincFrontend):
            raise InvalidSpecError("network front-end is not the sinc parametrization")
        return front.layer_params


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, network, optimizer, epoch, extra_meta=None):
    """Single-file npz: JSON meta plus every parameter, buffer, and v accumulator."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": network.config.to_dict(),
        "seed": network.config.seed,
        "epoch": int(epoch),
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for name, val in network.parameters().items():
        arrays[f"param/{name}"] = val
    for name, val in network.buffers().items():
        arrays[f"buffer/{name}"] = val
    if optimizer is not None:
        for name, val in optimizer.state.items():
            arrays[f"opt/{name}"] = val
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Rebuild (network, optimizer, meta) from a checkpoint file, bit-exactly."""
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        meta = json.loads(arrays.pop("meta").tobytes().decode())
        config = NetworkConfig.from_dict(meta["config"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata in {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    network = Network(config)
    params = network.parameters()
    buffers = network.buffers()
    optimizer = RMSProp(config.learning_rate, config.rms_alpha, config.rms_eps)
    for key, val in arrays.items():
        kind, _, name = key.partition("/")
        if kind == "param":
            if name not in params:
                raise CheckpointError(f"unknown parameter {name} in {path}")
            if params[name].shape != val.shape:
                raise CheckpointError(f"shape mismatch for {name} in {path}")
            params[name][...] = val
        elif kind == "buffer":
            if name not in buffers:
                raise CheckpointError(f"unknown buffer {name} in {path}")
            buffers[name][...] = val
        elif kind == "opt":
            optimizer.state[name] = val.copy()
        else:
            raise CheckpointError(f"unknown checkpoint entry {key} in {path}")
    return network, optimizer, meta


def clone_config(config, **overrides):
    return replace(config, **overrides)
