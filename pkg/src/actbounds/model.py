"""Network data model: JSON ingestion, pruning, random generation and the
exact forward pass.

Weights are stored with rows = output neurons, so layer ``l`` computes
``a = weights @ h + bias``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
LINEAR = "linear"


class NetworkError(ValueError):
    """Raised for malformed or inconsistent network data."""


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = RELU

    @property
    def width(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class Network:
    name: str
    input_dim: int
    layers: tuple[Layer, ...]
    input_lb: np.ndarray
    input_ub: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_lb", np.asarray(self.input_lb, dtype=float))
        object.__setattr__(self, "input_ub", np.asarray(self.input_ub, dtype=float))
        _validate(self)

    @property
    def depth(self) -> int:
        """Number of affine layers L (hidden layers plus the output layer)."""
        return len(self.layers)

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [layer.width for layer in self.layers]

    @property
    def num_hidden(self) -> int:
        return sum(layer.width for layer in self.layers[:-1])


@dataclass
class Activations:
    """Per-layer pre-activations ``pre[l-1] = a^(l)`` and post-activations."""

    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def _validate(net: Network) -> None:
    if net.input_dim < 1:
        raise NetworkError("input_dim must be positive")
    if not net.layers:
        raise NetworkError("network needs at least one layer")
    if net.input_lb.shape != (net.input_dim,) or net.input_ub.shape != (net.input_dim,):
        raise NetworkError("input box must have length input_dim")
    if not (np.all(np.isfinite(net.input_lb)) and np.all(np.isfinite(net.input_ub))):
        raise NetworkError("input box must be finite")
    if np.any(net.input_lb > net.input_ub):
        raise NetworkError("input_lb exceeds input_ub")
    prev = net.input_dim
    last = len(net.layers) - 1
    for idx, layer in enumerate(net.layers):
        w, b = layer.weights, layer.bias
        if w.ndim != 2 or w.shape[0] < 1:
            raise NetworkError(f"layer {idx + 1}: weights must be a non-empty matrix")
        if w.shape[1] != prev:
            raise NetworkError(
                f"layer {idx + 1}: dimension mismatch, expected {prev} columns, got {w.shape[1]}"
            )
        if b.shape != (w.shape[0],):
            raise NetworkError(f"layer {idx + 1}: bias length {b.shape} does not match {w.shape[0]} rows")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NetworkError(f"layer {idx + 1}: non-finite weight or bias")
        expected = LINEAR if idx == last else RELU
        if layer.activation != expected:
            raise NetworkError(f"layer {idx + 1}: activation must be {expected!r}, got {layer.activation!r}")
        prev = w.shape[0]


def _as_matrix(rows, idx: int) -> np.ndarray:
    try:
        w = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        # ragged rows end up here
        raise NetworkError(f"layer {idx + 1}: dimension mismatch or bad weight entry ({exc})") from exc
    if w.ndim != 2:
        raise NetworkError(f"layer {idx + 1}: dimension mismatch, weights are not a rectangular matrix")
    return w


def network_from_dict(data: dict) -> Network:
    try:
        name = str(data.get("name", "network"))
        input_dim = int(data["input_dim"])
        layers_raw = data["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"malformed network description: {exc}") from exc
    if "input_lb" not in data or "input_ub" not in data:
        raise NetworkError("missing input box (input_lb / input_ub)")
    layers = []
    for idx, raw in enumerate(layers_raw):
        try:
            weights = _as_matrix(raw["weights"], idx)
            bias = np.array(raw["bias"], dtype=float)
            activation = raw["activation"]
        except KeyError as exc:
            raise NetworkError(f"layer {idx + 1}: missing key {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise NetworkError(f"layer {idx + 1}: bad bias entry ({exc})") from exc
        layers.append(Layer(weights, bias, activation))
    try:
        lb = np.array(data["input_lb"], dtype=float)
        ub = np.array(data["input_ub"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise NetworkError(f"bad input box: {exc}") from exc
    return Network(name, input_dim, tuple(layers), lb, ub)


def network_to_dict(net: Network) -> dict:
    return {
        "name": net.name,
        "input_dim": net.input_dim,
        "input_lb": net.input_lb.tolist(),
        "input_ub": net.input_ub.tolist(),
        "layers": [
            {"weights": layer.weights.tolist(), "bias": layer.bias.tolist(), "activation": layer.activation}
            for layer in net.layers
        ],
    }


def load_network(path: str | os.PathLike) -> Network:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise NetworkError(f"{path}: top-level JSON value must be an object")
    return network_from_dict(data)


def save_network(net: Network, path: str | os.PathLike) -> None:
    # json writes floats with repr(), the shortest string that round-trips
    text = json.dumps(network_to_dict(net), allow_nan=False)
    with open(path, "w") as fh:
        fh.write(text)
        fh.write("\n")


def forward(net: Network, x) -> Activations:
    """Evaluate the network exactly. No clamping to the input box is done."""
    h = np.asarray(x, dtype=float)
    if h.shape != (net.input_dim,):
        raise NetworkError(f"input has shape {h.shape}, expected ({net.input_dim},)")
    acts = Activations()
    for layer in net.layers:
        a = layer.weights @ h + layer.bias
        h = np.maximum(a, 0.0) if layer.activation == RELU else a
        acts.pre.append(a)
        acts.post.append(h)
    return acts


def predict(net: Network, x) -> int:
    """Index of the largest logit; ties go to the lowest index."""
    return int(np.argmax(forward(net, x).output))


def prune(net: Network, epsilon: float, prune_bias: bool = True) -> Network:
    """Zero every weight (and bias, unless ``prune_bias`` is off) with
    ``|w| < epsilon``."""
    if not epsilon >= 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")

    def cut(arr: np.ndarray) -> np.ndarray:
        out = arr.copy()
        out[np.abs(out) < epsilon] = 0.0
        return out

    layers = tuple(
        Layer(cut(layer.weights), cut(layer.bias) if prune_bias else layer.bias.copy(), layer.activation)
        for layer in net.layers
    )
    return Network(net.name, net.input_dim, layers, net.input_lb.copy(), net.input_ub.copy())


def count_nonzero_weights(net: Network) -> int:
    return int(sum(np.count_nonzero(layer.weights) for layer in net.layers))


def generate_random(arch, seed: int, weight_scale: float = 1.0, name: str | None = None) -> Network:
    """Random network with ``arch = [n0, n1, ..., nL]``.

    Entries are i.i.d. uniform on ``[-weight_scale, weight_scale]`` drawn from
    ``numpy.random.default_rng(seed)`` (PCG64), layer by layer, weights before
    bias. The input box is ``[0, 1]^n0``.
    """
    arch = [int(w) for w in arch]
    if len(arch) < 2:
        raise NetworkError("architecture needs an input width and at least one layer")
    if any(w < 1 for w in arch):
        raise NetworkError(f"all widths must be >= 1, got {arch}")
    rng = np.random.default_rng(seed)
    layers = []
    for idx in range(1, len(arch)):
        w = rng.uniform(-weight_scale, weight_scale, size=(arch[idx], arch[idx - 1]))
        b = rng.uniform(-weight_scale, weight_scale, size=arch[idx])
        act = LINEAR if idx == len(arch) - 1 else RELU
        layers.append(Layer(w + 0.0, b + 0.0, act))
    if name is None:
        name = "rand_" + "x".join(map(str, arch)) + f"_s{seed}"
    return Network(name, arch[0], tuple(layers), np.zeros(arch[0]), np.ones(arch[0]))
