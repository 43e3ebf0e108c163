from pathlib import Path

import numpy as np
import pytest

from actbounds.model import load_network

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def gap_net():
    return load_network(FIXTURES / "gap_net.json")


@pytest.fixture
def identity_net():
    return load_network(FIXTURES / "identity_logit.json")


def sample_inputs(net, count, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(net.input_lb, net.input_ub, size=(count, net.input_dim))


def all_preactivations(net, xs):
    """Pre-activations of every layer for a batch of inputs, shape per layer (count, width)."""
    h = np.asarray(xs, dtype=float)
    out = []
    for layer in net.layers:
        a = h @ layer.weights.T + layer.bias
        out.append(a)
        h = np.maximum(a, 0.0) if layer.activation == "relu" else a
    return out


# one line per acceptance criterion, filled by test_acceptance and echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
