"""Activation bounds for ReLU networks: naive, LP (weak) and MILP (strong)
bound tightening, plus adversarial-verification MILPs built on top of them."""

from actbounds.model import (
    Activations,
    Layer,
    Network,
    NetworkError,
    forward,
    generate_random,
    load_network,
    prune,
    save_network,
)
from actbounds.propagate import BoundsSet, interval_bounds, load_bounds, naive_norm_bounds, save_bounds

__version__ = "0.1.0"

__all__ = [
    "Activations",
    "BoundsSet",
    "Layer",
    "Network",
    "NetworkError",
    "forward",
    "generate_random",
    "interval_bounds",
    "load_bounds",
    "load_network",
    "naive_norm_bounds",
    "prune",
    "save_bounds",
    "save_network",
]
