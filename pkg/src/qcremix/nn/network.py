"""The waveform-to-score regression network.

Stack (for a ``C``-channel, 192,000-sample input with the default widths)::

    norm(C) -> conv 1024/512 x257 -> ReLU -> norm          (257, 375)
    6 x [conv 3/1 x96 -> ReLU -> norm -> max-pool 2]       (96, 188) ... (96, 6)
    flatten                                                576
    2 x [dense 256 -> ReLU -> norm -> dropout 0.4]         256, 256
    dense 1 -> clamp [0, 100]                              1
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    Hardtanh,
    Layer,
    MaxPool1D,
    ReLU,
    he_uniform,
)

OUTPUT_BIAS_INIT = 50.0


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyper-parameters; the defaults give the full-size model."""

    input_channels: int = 2
    input_length: int = 192_000
    front_filters: int = 257
    front_size: int = 1024
    front_stride: int = 512
    block_filters: int = 96
    block_size: int = 3
    n_blocks: int = 6
    pool: int = 2
    dense_units: tuple = (256, 256)
    dropout_rate: float = 0.4
    output_clamp: tuple = (0.0, 100.0)
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.input_channels not in (1, 2):
            raise ValueError("input_channels must be 1 or 2")
        object.__setattr__(self, "dense_units", tuple(int(u) for u in self.dense_units))
        object.__setattr__(self, "output_clamp", tuple(float(v) for v in self.output_clamp))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dense_units"] = list(self.dense_units)
        d["output_clamp"] = list(self.output_clamp)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def reduced(self, **changes) -> "NetworkConfig":
        d = self.to_dict()
        d.update(changes)
        return NetworkConfig.from_dict(d)


class Sequential:
    """Ordered named layers with a shared forward/backward pass."""

    def __init__(self, layers):
        self.names = [name for name, _ in layers]
        self.layers = [layer for _, layer in layers]
        if len(set(self.names)) != len(self.names):
            raise ValueError("layer names must be unique")

    def __iter__(self):
        return iter(zip(self.names, self.layers))

    def layer(self, name) -> Layer:
        return self.layers[self.names.index(name)]

    def forward(self, x, train=False, trace=None):
        """Run the stack; ``trace`` (a list) collects ``(name, shape)`` per layer.

        Shapes are reported per example in ``(channels, length)`` order.
        """
        for name, layer in self:
            x = layer.forward(x, train=train)
            if trace is not None:
                shape = x.shape[1:]
                trace.append((name, (shape[1], shape[0]) if len(shape) == 2 else tuple(shape)))
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self):
        """``(qualified name, layer, key)`` for every trainable tensor, in layer order."""
        return [(f"{n}.{k}", layer, k) for n, layer in self for k in layer.trainable]

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def set_frozen_norm(self, frozen=True):
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                layer.frozen = frozen

    def reseed_dropout(self, seed):
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dropout):
                layer.rng = np.random.default_rng([seed, i])

    def state_arrays(self) -> dict:
        """Every parameter and buffer, keyed ``layer.key`` in layer order."""
        out = {}
        for n, layer in self:
            for k, v in layer.params.items():
                out[f"{n}.{k}"] = v
            for k, v in layer.buffers().items():
                out[f"{n}.{k}"] = v
        return out

    def load_state_arrays(self, arrays):
        for n, layer in self:
            for k in list(layer.params):
                layer.params[k] = np.array(arrays[f"{n}.{k}"], dtype=layer.params[k].dtype)
            for k, v in layer.buffers().items():
                setattr(layer, k, np.array(arrays[f"{n}.{k}"], dtype=v.dtype))


class Network(Sequential):
    """The quality regression network built from a :class:`NetworkConfig`."""

    def __init__(self, config: NetworkConfig, layers, seed=0):
        super().__init__(layers)
        self.config = config
        self.seed = seed

    def predict(self, x, batch_size=16):
        """Inference on ``(n, channels, length)`` input; returns ``(n,)`` scores."""
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        cfg = self.config
        if x.shape[1:] != (cfg.input_channels, cfg.input_length):
            raise ValueError(
                f"expected input (n, {cfg.input_channels}, {cfg.input_length}), got {x.shape}"
            )
        dtype = self.layers[0].params["gamma"].dtype
        out = [
            self.forward(np.ascontiguousarray(x[i : i + batch_size].transpose(0, 2, 1), dtype=dtype))[:, 0]
            for i in range(0, x.shape[0], batch_size)
        ]
        return np.concatenate(out) if out else np.zeros(0, dtype)

    def shape_trace(self):
        """Output shape after each stage of the table layout for one example."""
        cfg = self.config
        trace = []
        dtype = self.layers[0].params["gamma"].dtype
        self.forward(np.zeros((1, cfg.input_length, cfg.input_channels), dtype), trace=trace)
        wanted = {"front.norm": "front"}
        wanted.update({f"block{i}.pool": f"block{i}" for i in range(cfg.n_blocks)})
        wanted["flatten"] = "flatten"
        wanted.update({f"dense{i}.dropout": f"dense{i}" for i in range(len(cfg.dense_units))})
        wanted["clamp"] = "output"
        return [(wanted[name], shape) for name, shape in trace if name in wanted]

    def parameter_ledger(self) -> dict:
        """Trainable counts per weight layer plus the summed normalization count."""
        ledger = {}
        norm = 0
        for name, layer in self:
            if isinstance(layer, BatchNorm):
                norm += layer.n_params()
            elif layer.n_params():
                ledger[name.split(".")[0]] = layer.n_params()
        ledger["norm"] = norm
        return ledger


def build_network(config: NetworkConfig = NetworkConfig(), seed=0, dtype=np.float32) -> Network:
    """Construct and initialise the network deterministically from ``seed``.

    Weights are He-uniform (bound ``sqrt(6 / fan_in)``), biases zero except
    the output bias, which starts at the middle of the score range.
    """
    c = config
    bn = dict(momentum=c.bn_momentum, eps=c.bn_eps)
    layers = [
        ("input.norm", BatchNorm(c.input_channels, **bn)),
        ("front.conv", Conv1D(c.input_channels, c.front_filters, c.front_size, c.front_stride)),
        ("front.relu", ReLU()),
        ("front.norm", BatchNorm(c.front_filters, **bn)),
    ]
    channels = c.front_filters
    length = -(-c.input_length // c.front_stride)
    for i in range(c.n_blocks):
        layers += [
            (f"block{i}.conv", Conv1D(channels, c.block_filters, c.block_size, 1)),
            (f"block{i}.relu", ReLU()),
            (f"block{i}.norm", BatchNorm(c.block_filters, **bn)),
            (f"block{i}.pool", MaxPool1D(c.pool)),
        ]
        channels = c.block_filters
        length = -(-length // c.pool)
    layers.append(("flatten", Flatten()))
    features = channels * length
    for i, units in enumerate(c.dense_units):
        layers += [
            (f"dense{i}.linear", Dense(features, units)),
            (f"dense{i}.relu", ReLU()),
            (f"dense{i}.norm", BatchNorm(units, **bn)),
            (f"dense{i}.dropout", Dropout(c.dropout_rate)),
        ]
        features = units
    layers += [("output.linear", Dense(features, 1)), ("clamp", Hardtanh(*c.output_clamp))]

    net = Network(c, layers, seed)
    initialise(net, seed, dtype)
    net.layer("output.linear").params["bias"][:] = OUTPUT_BIAS_INIT
    return net


def initialise(model: Sequential, seed, dtype=np.float32):
    """He-uniform weights and zero biases for every conv/dense layer, in order."""
    rng = np.random.default_rng(seed)
    for _, layer in model:
        if isinstance(layer, (Conv1D, Dense)):
            w = layer.params["weight"]
            layer.params["weight"] = he_uniform(rng, w.shape, layer.fan_in, dtype)
            layer.params["bias"] = np.zeros_like(layer.params["bias"], dtype=dtype)
    model.astype(dtype)
    model.reseed_dropout(seed)
    return model


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred`` of shape ``(B, 1)``."""
    target = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    diff = pred - target
    return float(np.mean(diff.astype(np.float64) ** 2)), (2.0 / diff.size) * diff
