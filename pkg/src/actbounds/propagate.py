"""Closed-form activation bounds and the BoundsSet container."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from actbounds.model import RELU, Network

METHODS = ("naive_norm", "naive_interval", "weak", "strong", "hybrid")
STATUSES = ("closed_form", "lp_optimal", "milp_optimal", "dual_bound", "fallback")


@dataclass
class BoundsSet:
    """Pre-activation bounds for layers 1..L; ``lb[l-1]`` belongs to layer l.

    A BoundsSet may be partial (fewer than L layers) while a run is in progress.
    ``records`` carries per-(neuron, sense) solve details and is not serialized.
    """

    method: str
    lb: list[np.ndarray] = field(default_factory=list)
    ub: list[np.ndarray] = field(default_factory=list)
    status: list[list[str]] = field(default_factory=list)
    solve_time: list[np.ndarray] = field(default_factory=list)
    total_time: float = 0.0
    network_name: str = ""
    records: list = field(default_factory=list, repr=False, compare=False)

    @property
    def num_layers(self) -> int:
        return len(self.lb)

    def layer(self, l: int) -> tuple[np.ndarray, np.ndarray]:
        """``(lb, ub)`` for layer ``l`` (1-based)."""
        if not 1 <= l <= len(self.lb):
            raise IndexError(f"bounds do not cover layer {l}")
        return self.lb[l - 1], self.ub[l - 1]

    def append(self, lb, ub, status, solve_time=None) -> None:
        lb = np.asarray(lb, dtype=float)
        ub = np.asarray(ub, dtype=float)
        if solve_time is None:
            solve_time = np.zeros(len(lb))
        self.lb.append(lb)
        self.ub.append(ub)
        self.status.append(list(status))
        self.solve_time.append(np.asarray(solve_time, dtype=float))

    def covers(self, net: Network, upto: int) -> bool:
        """True when layers 1..upto are present with the network's widths."""
        if len(self.lb) < upto:
            return False
        return all(len(self.lb[l]) == net.layers[l].width for l in range(upto))

    def check(self) -> None:
        for l, (lo, hi) in enumerate(zip(self.lb, self.ub), start=1):
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError(f"layer {l}: non-finite bound")
            if np.any(lo > hi):
                raise ValueError(f"layer {l}: lower bound exceeds upper bound")

    def to_dict(self, timings: bool = True) -> dict:
        return {
            "method": self.method,
            "network_name": self.network_name,
            "total_time": float(self.total_time) if timings else 0.0,
            "layers": [
                {
                    "lb": lo.tolist(),
                    "ub": hi.tolist(),
                    "status": list(st),
                    "solve_time": t.tolist() if timings else [0.0] * len(t),
                }
                for lo, hi, st, t in zip(self.lb, self.ub, self.status, self.solve_time)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> BoundsSet:
        out = cls(method=data["method"], network_name=data.get("network_name", ""))
        out.total_time = float(data.get("total_time", 0.0))
        for layer in data["layers"]:
            n = len(layer["lb"])
            out.append(layer["lb"], layer["ub"], layer.get("status", ["closed_form"] * n), layer.get("solve_time"))
        if out.method not in METHODS:
            raise ValueError(f"unknown bound method {out.method!r}")
        out.check()
        return out


def save_bounds(bounds: BoundsSet, path: str | os.PathLike, timings: bool = True) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(bounds.to_dict(timings=timings), allow_nan=False))
        fh.write("\n")


def load_bounds(path: str | os.PathLike) -> BoundsSet:
    with open(path) as fh:
        data = json.load(fh)
    try:
        return BoundsSet.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed bounds file ({exc})") from exc


def input_magnitude(net: Network) -> np.ndarray:
    return np.maximum(np.abs(net.input_lb), np.abs(net.input_ub))


def norm_step(weights: np.ndarray, bias: np.ndarray, magnitude: float) -> float:
    """Scalar bound ``||W||_inf * magnitude + ||b||_inf`` on every neuron of a layer."""
    row_sums = np.abs(weights).sum(axis=1)
    return float(row_sums.max() * magnitude + np.abs(bias).max())


def post_magnitude(net: Network, prev_ub: np.ndarray | None) -> float:
    """Largest possible |h_j| feeding the next layer (worst bound of the layer)."""
    if prev_ub is None:
        return float(input_magnitude(net).max())
    return float(np.maximum(prev_ub, 0.0).max())


def naive_norm_bounds(net: Network) -> BoundsSet:
    """One scalar bound per layer from the infinity-norm recurrence, replicated
    over the layer's neurons as ``[-B, B]``."""
    out = BoundsSet(method="naive_norm", network_name=net.name)
    prev_ub = None
    for layer in net.layers:
        bound = norm_step(layer.weights, layer.bias, post_magnitude(net, prev_ub))
        ub = np.full(layer.width, bound)
        out.append(-ub, ub, ["closed_form"] * layer.width)
        prev_ub = ub
    return out


def interval_step(weights: np.ndarray, bias: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    w_pos = np.maximum(weights, 0.0)
    w_neg = np.minimum(weights, 0.0)
    ub = w_pos @ hi + w_neg @ lo + bias
    lb = w_pos @ lo + w_neg @ hi + bias
    return lb, ub


def relu_box(lb: np.ndarray, ub: np.ndarray, activation: str = RELU):
    if activation == RELU:
        return np.maximum(lb, 0.0), np.maximum(ub, 0.0)
    return lb, ub


def interval_bounds(net: Network) -> BoundsSet:
    out = BoundsSet(method="naive_interval", network_name=net.name)
    lo, hi = net.input_lb, net.input_ub
    for layer in net.layers:
        lb, ub = interval_step(layer.weights, layer.bias, lo, hi)
        out.append(lb, ub, ["closed_form"] * layer.width)
        lo, hi = relu_box(lb, ub, layer.activation)
    return out
