"""Multilayer perceptrons with ReLU / PReLU activations, optional batch
normalization on hidden layers, and identity-layer insertion for warm-started
deepening.

Trainable arrays of a network are ordered layer by layer as
``W, b, [prelu_alpha], [bn_gamma, bn_beta]``.  Running batch-norm statistics
are state, not trainables.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from .stochastic import SeededRng

ACTIVATIONS = ("relu", "prelu", "linear")
PRELU_INIT = 0.25
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPS

    @classmethod
    def fresh(cls, width: int, momentum=BN_MOMENTUM, epsilon=BN_EPS) -> "BatchNorm":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width),
                   momentum, epsilon)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str
    prelu_alpha: Optional[np.ndarray] = None  # shape (1,): one slope per layer
    batchnorm: Optional[BatchNorm] = None

    @property
    def in_width(self) -> int:
        return self.weight.shape[1]

    @property
    def out_width(self) -> int:
        return self.weight.shape[0]

    def trainables(self) -> list[np.ndarray]:
        out = [self.weight, self.bias]
        if self.prelu_alpha is not None:
            out.append(self.prelu_alpha)
        if self.batchnorm is not None:
            out += [self.batchnorm.gamma, self.batchnorm.beta]
        return out


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an MLP needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_width != b.in_width:
                raise ValueError(f"layer widths do not chain: {a.out_width} -> {b.in_width}")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.activation == "prelu" and layer.prelu_alpha is None:
                raise ValueError("prelu layer without slope")
            if layer.batchnorm is not None and np.any(layer.batchnorm.running_var <= 0):
                raise ValueError("batch-norm running variance must be positive")
        if self.layers[-1].activation != "linear":
            raise ValueError("output layer must be linear")

    @property
    def input_width(self) -> int:
        return self.layers[0].in_width

    @property
    def output_width(self) -> int:
        return self.layers[-1].out_width

    @property
    def widths(self) -> list[int]:
        return [self.input_width] + [layer.out_width for layer in self.layers]

    @property
    def hidden_layers(self) -> int:
        return len(self.layers) - 1

    def trainables(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer.trainables()]

    def with_trainables(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        arrays = list(arrays)
        expected = len(self.trainables())
        if len(arrays) != expected:
            raise ValueError(f"expected {expected} arrays, got {len(arrays)}")
        it = iter(arrays)
        layers = []
        for layer in self.layers:
            w, b = next(it), next(it)
            alpha = next(it) if layer.prelu_alpha is not None else None
            bn = layer.batchnorm
            if bn is not None:
                bn = replace(bn, gamma=next(it), beta=next(it))
            layers.append(Layer(w, b, layer.activation, alpha, bn))
        return MlpParams(layers)

    def copy(self) -> "MlpParams":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class InitSpec:
    scheme: str = "uniform_fanin"  # uniform_fanin | zeros | explicit
    seed: int = 0
    payload: Optional[MlpParams] = field(default=None, compare=False)

    def __post_init__(self):
        if self.scheme not in ("uniform_fanin", "zeros", "explicit"):
            raise ValueError(f"unknown init scheme {self.scheme!r}")
        if self.scheme == "explicit" and self.payload is None:
            raise ValueError("explicit init needs a parameter payload")


# ------------------------------------------------------------ construction
def init_mlp(widths: Sequence[int], activation: str = "relu", spec: InitSpec = InitSpec(),
             batchnorm: bool = False) -> MlpParams:
    """Hidden layers use ``activation``; the output layer is linear.

    ``uniform_fanin`` draws ``W ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` with one
    random stream per layer; biases start at zero.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ValueError("widths must list at least input and output width")
    if any(w < 1 for w in widths):
        raise ValueError("widths must be positive")
    if spec.scheme == "explicit":
        if spec.payload.widths != widths:
            raise ValueError("explicit payload widths do not match")
        return spec.payload.copy()
    layers = []
    n = len(widths) - 1
    for j in range(n):
        fan_in, fan_out = widths[j], widths[j + 1]
        if spec.scheme == "zeros":
            w = np.zeros((fan_out, fan_in))
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w = SeededRng(spec.seed, j).uniform(fan_out * fan_in, -bound, bound).reshape(fan_out, fan_in)
        hidden = j < n - 1
        act = activation if hidden else "linear"
        alpha = np.array([PRELU_INIT]) if act == "prelu" else None
        bn = BatchNorm.fresh(fan_out) if (batchnorm and hidden) else None
        layers.append(Layer(w, np.zeros(fan_out), act, alpha, bn))
    return MlpParams(layers)


def deepen_identity(params: MlpParams, position: Optional[int] = None) -> MlpParams:
    """Insert an identity hidden layer in front of layer ``position``.

    The default position puts the new layer directly before the output layer.
    Its weight is the identity, its bias zero, its PReLU slope 1 and its
    batch-norm block maps every input to itself in inference mode.
    """
    if position is None:
        position = len(params.layers) - 1
    if not 1 <= position <= len(params.layers) - 1:
        raise ValueError("identity layers go between two existing layers")
    prev = params.layers[position - 1]
    nxt = params.layers[position]
    if prev.out_width != nxt.in_width:
        raise ValueError("width mismatch at insertion point")
    width = prev.out_width
    act = prev.activation
    alpha = np.array([1.0]) if act == "prelu" else None
    bn = None
    if prev.batchnorm is not None:
        eps = prev.batchnorm.epsilon
        # rv + eps == 1 exactly in float64, so the normalization divides by 1
        bn = BatchNorm(np.ones(width), np.zeros(width), np.zeros(width),
                       np.full(width, 1.0 - eps), prev.batchnorm.momentum, eps)
    new = Layer(np.eye(width), np.zeros(width), act, alpha, bn)
    layers = [copy.deepcopy(layer) for layer in params.layers]
    layers.insert(position, new)
    return MlpParams(layers)


def count_params(params: MlpParams, include_batchnorm: bool = False) -> int:
    """Learnable parameter count: weights, biases and PReLU slopes, plus the
    batch-norm affine pairs when ``include_batchnorm`` is set."""
    total = 0
    for layer in params.layers:
        total += layer.weight.size + layer.bias.size
        if layer.prelu_alpha is not None:
            total += layer.prelu_alpha.size
        if include_batchnorm and layer.batchnorm is not None:
            total += 2 * layer.batchnorm.gamma.size
    return total


# ------------------------------------------------------------ evaluation
def prelu(x, alpha):
    """``max(0, x) + alpha * min(0, x)``."""
    return dc.prelu(x, alpha)


def batchnorm_forward(block: BatchNorm, x, mode: str = "inference", gamma=None, beta=None,
                      stats_out: Optional[list] = None):
    """Normalize the rows of a 2-D batch ``x`` (batch, width).

    Train mode uses the batch mean and biased variance and appends
    ``(mean, unbiased_var)`` to ``stats_out`` for the running-stat update.
    ``gamma``/``beta`` override the block's affine parameters (e.g. with tape
    variables).
    """
    gamma = block.gamma if gamma is None else gamma
    beta = block.beta if beta is None else beta
    if mode == "train":
        n = dc.value_of(x).shape[0]
        if n < 2:
            raise ValueError("batch normalization in train mode needs batch size >= 2")
        mu = dc.mean(x, axis=0, keepdims=True)
        centered = dc.sub(x, mu)
        var = dc.mean(dc.abs_pow(centered, 2), axis=0, keepdims=True)
        inv = dc.power(dc.add(var, block.epsilon), -0.5)
        xhat = dc.mul(centered, inv)
        if stats_out is not None:
            v = dc.value_of(var)[0]
            stats_out.append((dc.value_of(mu)[0].copy(), v * n / (n - 1)))
    elif mode == "inference":
        inv = 1.0 / np.sqrt(block.running_var + block.epsilon)
        xhat = dc.mul(dc.sub(x, block.running_mean), inv)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return dc.add(dc.mul(xhat, gamma), beta)


def mlp_forward(params: MlpParams, x, mode: str = "inference", trainables=None,
                stats_out: Optional[list] = None):
    """Evaluate the network on the last axis of ``x``.

    ``trainables`` optionally replaces ``params.trainables()`` (same order),
    typically with tape variables.  Batch normalization flattens all leading
    axes into one batch axis.
    """
    xv = dc.value_of(x)
    if xv.shape[-1] != params.input_width:
        raise ValueError(f"input width {xv.shape[-1]} != network width {params.input_width}")
    tensors = iter(trainables if trainables is not None else params.trainables())
    lead = xv.shape[:-1]
    h = x
    for layer in params.layers:
        w, b = next(tensors), next(tensors)
        alpha = next(tensors) if layer.prelu_alpha is not None else None
        h = dc.affine(w, h, b)
        if layer.batchnorm is not None:
            g, be = next(tensors), next(tensors)
            flat = len(lead) != 1
            if flat:
                h = dc.reshape(h, (-1, layer.out_width))
            h = batchnorm_forward(layer.batchnorm, h, mode, g, be, stats_out)
            if flat:
                h = dc.reshape(h, lead + (layer.out_width,))
        if layer.activation == "relu":
            h = dc.relu(h)
        elif layer.activation == "prelu":
            h = dc.prelu(h, alpha)
    return h


def update_running_stats(params: MlpParams, stats: Sequence[tuple]) -> MlpParams:
    """Apply momentum updates from train-mode batch statistics, in layer order."""
    it = iter(stats)
    out = params.copy()
    for layer in out.layers:
        bn = layer.batchnorm
        if bn is None:
            continue
        mu, var = next(it)
        bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mu
        bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * var
    return out


# ------------------------------------------------------------ serialization
def _arr(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _unarr(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def to_json_dict(params: MlpParams) -> dict:
    layers = []
    for layer in params.layers:
        entry = {
            "activation": layer.activation,
            "weight": _arr(layer.weight),
            "bias": _arr(layer.bias),
            "prelu_alpha": None if layer.prelu_alpha is None else _arr(layer.prelu_alpha),
            "batchnorm": None,
        }
        if layer.batchnorm is not None:
            bn = layer.batchnorm
            entry["batchnorm"] = {
                "gamma": _arr(bn.gamma), "beta": _arr(bn.beta),
                "running_mean": _arr(bn.running_mean), "running_var": _arr(bn.running_var),
                "momentum": bn.momentum, "epsilon": bn.epsilon,
            }
        layers.append(entry)
    return {"format": "mlp/1", "input_width": params.input_width,
            "output_width": params.output_width, "layers": layers}


def from_json_dict(d: dict) -> MlpParams:
    if d.get("format") != "mlp/1":
        raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
    layers = []
    for e in d["layers"]:
        bn = None
        if e["batchnorm"] is not None:
            b = e["batchnorm"]
            bn = BatchNorm(_unarr(b["gamma"]), _unarr(b["beta"]), _unarr(b["running_mean"]),
                           _unarr(b["running_var"]), float(b["momentum"]), float(b["epsilon"]))
        alpha = None if e["prelu_alpha"] is None else _unarr(e["prelu_alpha"])
        layers.append(Layer(_unarr(e["weight"]), _unarr(e["bias"]), e["activation"], alpha, bn))
    params = MlpParams(layers)
    if params.input_width != d["input_width"] or params.output_width != d["output_width"]:
        raise ValueError("checkpoint widths inconsistent with its layers")
    return params
