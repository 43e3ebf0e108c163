"""MILP / LP models for ReLU networks.

Variables are keyed by tuples: ``("x", j)`` for inputs and
``("a" | "h" | "hbar" | "z", l, j)`` for layer ``l`` (1-based) neuron ``j``.
Each relu neuron is encoded with the big-M system

    a = h - hbar,  h <= max(0, ub) z,  hbar <= max(0, -lb) (1 - z),
    h, hbar >= 0,  z in {0, 1}.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from actbounds.model import Network, forward, predict
from actbounds.propagate import BoundsSet, interval_step, relu_box

CONTINUOUS = "continuous"
BINARY = "binary"
MAXIMIZE = "maximize"
MINIMIZE = "minimize"

# Absolute widening applied to solver-produced bounds before they become big-M
# constants; kept at the LP feasibility tolerance.
DEFAULT_MARGIN = 1e-7


class FormulationError(ValueError):
    pass


@dataclass
class Constraint:
    cols: np.ndarray
    coefs: np.ndarray
    sense: str  # "<=", "=", ">="
    rhs: float


@dataclass
class MilpModel:
    names: list[str] = field(default_factory=list)
    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    kind: list[str] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    sense: str = MAXIMIZE
    var_index: dict[tuple, int] = field(default_factory=dict)
    # number of affine layers carrying variables, and whether the last one
    # is encoded without relu blocks (objective layer)
    encoded_layers: int = 0
    name: str = "model"

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def binaries(self) -> list[int]:
        return [i for i, k in enumerate(self.kind) if k == BINARY]

    def add_var(self, key, lb=0.0, ub=math.inf, kind=CONTINUOUS) -> int:
        if key in self.var_index:
            raise FormulationError(f"variable {key} declared twice")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        idx = len(self.names)
        self.names.append(var_name(key))
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.kind.append(kind)
        self.var_index[key] = idx
        return idx

    def add_constraint(self, terms: dict[int, float], sense: str, rhs: float) -> None:
        if sense not in ("<=", "=", ">="):
            raise FormulationError(f"bad constraint sense {sense!r}")
        cols = np.fromiter(terms.keys(), dtype=np.int64, count=len(terms))
        coefs = np.fromiter(terms.values(), dtype=float, count=len(terms))
        if np.any(cols < 0) or np.any(cols >= self.num_vars):
            raise FormulationError("constraint references an undeclared variable")
        if not (np.all(np.isfinite(coefs)) and math.isfinite(rhs)):
            raise FormulationError("non-finite constraint data")
        self.constraints.append(Constraint(cols, coefs, sense, float(rhs)))

    def set_objective(self, terms: dict[int, float], sense: str) -> None:
        if sense not in (MAXIMIZE, MINIMIZE):
            raise FormulationError(f"bad objective sense {sense!r}")
        self.objective = dict(terms)
        self.sense = sense

    def fix(self, idx: int, value: float) -> None:
        self.lb[idx] = float(value)
        self.ub[idx] = float(value)

    def objective_value(self, point: np.ndarray) -> float:
        return float(sum(c * point[i] for i, c in self.objective.items()))

    def dense(self):
        """``(A, senses, rhs)`` as a dense matrix plus row data."""
        A = np.zeros((len(self.constraints), self.num_vars))
        for r, con in enumerate(self.constraints):
            A[r, con.cols] += con.coefs
        senses = [c.sense for c in self.constraints]
        rhs = np.array([c.rhs for c in self.constraints], dtype=float)
        return A, senses, rhs

    def max_violation(self, point: np.ndarray) -> float:
        """Largest violation of any row or variable bound at ``point``."""
        worst = 0.0
        for con in self.constraints:
            act = float(con.coefs @ point[con.cols])
            if con.sense == "<=":
                worst = max(worst, act - con.rhs)
            elif con.sense == ">=":
                worst = max(worst, con.rhs - act)
            else:
                worst = max(worst, abs(act - con.rhs))
        lb = np.asarray(self.lb)
        ub = np.asarray(self.ub)
        worst = max(worst, float(np.max(lb - point, initial=0.0)), float(np.max(point - ub, initial=0.0)))
        return worst


def var_name(key) -> str:
    return "_".join(str(k) for k in key)


@dataclass
class VerifyConfig:
    x0: np.ndarray
    radius: float
    target: str | int = "all"
    time_limit: float = 60.0
    early_exit: bool = False

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if not self.radius >= 0:
            raise ValueError(f"radius must be nonnegative, got {self.radius}")
        if self.target != "all" and not isinstance(self.target, (int, np.integer)):
            raise ValueError(f"target must be 'all' or a class index, got {self.target!r}")

    def check(self, net: Network) -> None:
        if self.x0.shape != (net.input_dim,):
            raise ValueError(f"x0 has shape {self.x0.shape}, expected ({net.input_dim},)")
        if np.any(self.x0 < net.input_lb) or np.any(self.x0 > net.input_ub):
            raise ValueError("x0 lies outside the network input box")

    def box(self, net: Network) -> tuple[np.ndarray, np.ndarray]:
        lo = np.maximum(net.input_lb, self.x0 - self.radius)
        hi = np.minimum(net.input_ub, self.x0 + self.radius)
        return lo, hi


def relu_block(model: MilpModel, a_var: int, h_var: int, hbar_var: int, z_var: int,
               lb: float, ub: float, relax: bool = False, fix_stable: bool = True) -> None:
    """Append the big-M rows tying ``h = relu(a)`` given ``a in [lb, ub]``."""
    if lb > ub:
        raise FormulationError(f"relu block with lb {lb} > ub {ub}")
    upper = max(0.0, ub)
    lower = max(0.0, -lb)
    if relax:
        model.kind[z_var] = CONTINUOUS
    model.lb[z_var], model.ub[z_var] = 0.0, 1.0
    model.add_constraint({a_var: 1.0, h_var: -1.0, hbar_var: 1.0}, "=", 0.0)
    model.add_constraint({h_var: 1.0, z_var: -upper}, "<=", 0.0)
    model.add_constraint({hbar_var: 1.0, z_var: lower}, "<=", lower)
    if not fix_stable:
        return
    if ub <= 0:
        model.fix(z_var, 0.0)
        model.fix(h_var, 0.0)
    elif lb >= 0:
        model.fix(z_var, 1.0)
        model.fix(hbar_var, 0.0)


def _affine_rows(model: MilpModel, net: Network, l: int, inputs: list[int], outputs: list[int]) -> None:
    layer = net.layers[l - 1]
    for i, out in enumerate(outputs):
        terms = {inp: float(w) for inp, w in zip(inputs, layer.weights[i]) if w != 0.0}
        terms[out] = -1.0
        model.add_constraint(terms, "=", -float(layer.bias[i]))


def _encode(model: MilpModel, net: Network, bounds: BoundsSet, upto: int, box_lo, box_hi,
            relax: bool, margin: float, fix_stable: bool) -> list[int]:
    """Encode inputs and layers 1..upto-1 with relu blocks, then layer ``upto``
    pre-activations as plain variables. Returns the layer-``upto`` a-columns."""
    if not bounds.covers(net, upto - 1):
        raise FormulationError(f"bounds do not cover layers 1..{upto - 1}")
    inputs = [model.add_var(("x", j), box_lo[j], box_hi[j]) for j in range(net.input_dim)]
    lo, hi = np.asarray(box_lo, dtype=float), np.asarray(box_hi, dtype=float)
    for l in range(1, upto + 1):
        layer = net.layers[l - 1]
        if l < upto:
            lb, ub = bounds.layer(l)
            lb = lb - margin
            ub = ub + margin
        else:
            # objective layer: box implied by the predecessor bounds, never binding
            lb, ub = interval_step(layer.weights, layer.bias, lo, hi)
            lb = lb - margin - 1e-9 * np.abs(lb)
            ub = ub + margin + 1e-9 * np.abs(ub)
        a_cols = [model.add_var(("a", l, j), lb[j], ub[j]) for j in range(layer.width)]
        _affine_rows(model, net, l, inputs, a_cols)
        if l == upto:
            model.encoded_layers = upto
            return a_cols
        h_cols = []
        for j in range(layer.width):
            h = model.add_var(("h", l, j), 0.0, math.inf)
            hbar = model.add_var(("hbar", l, j), 0.0, math.inf)
            z = model.add_var(("z", l, j), 0.0, 1.0, BINARY)
            relu_block(model, a_cols[j], h, hbar, z, lb[j], ub[j], relax=relax, fix_stable=fix_stable)
            h_cols.append(h)
        inputs = h_cols
        lo, hi = relu_box(lb, ub, layer.activation)
    raise AssertionError("unreachable")


def build_obbt(net: Network, bounds: BoundsSet, m: int, n: int, sense: str = MAXIMIZE,
               relax: bool = False, margin: float = DEFAULT_MARGIN, fix_stable: bool = True) -> MilpModel:
    """Model whose optimum is the bound on ``a_n^(m)`` (layer 1-based, neuron 0-based)."""
    if not 1 <= m <= net.depth:
        raise FormulationError(f"layer {m} out of range 1..{net.depth}")
    if not 0 <= n < net.layers[m - 1].width:
        raise FormulationError(f"neuron {n} out of range for layer {m}")
    model = MilpModel(name=f"{net.name}_L{m}_N{n}_{sense}{'_lp' if relax else ''}")
    a_cols = _encode(model, net, bounds, m, net.input_lb, net.input_ub, relax, margin, fix_stable)
    model.set_objective({a_cols[n]: 1.0}, sense)
    return model


def build_verification(net: Network, bounds: BoundsSet, cfg: VerifyConfig, target: int,
                       relax: bool = False, margin: float = DEFAULT_MARGIN,
                       fix_stable: bool = True) -> MilpModel:
    """Maximize ``logit_target - logit_ref`` over the perturbation box around x0."""
    cfg.check(net)
    ref = predict(net, cfg.x0)
    n_out = net.layers[-1].width
    if not 0 <= target < n_out:
        raise FormulationError(f"target class {target} out of range 0..{n_out - 1}")
    if target == ref:
        raise FormulationError(f"target class {target} equals the reference class")
    lo, hi = cfg.box(net)
    model = MilpModel(name=f"{net.name}_verify_t{target}")
    a_cols = _encode(model, net, bounds, net.depth, lo, hi, relax, margin, fix_stable)
    model.set_objective({a_cols[target]: 1.0, a_cols[ref]: -1.0}, MAXIMIZE)
    return model


def witness_point(model: MilpModel, net: Network, x) -> np.ndarray:
    """Full model point induced by the forward pass at input ``x``.

    ``x`` is clipped into the model's input-variable box first.
    """
    lb = np.asarray(model.lb)
    ub = np.asarray(model.ub)
    x_cols = [model.var_index[("x", j)] for j in range(net.input_dim)]
    x = np.clip(np.asarray(x, dtype=float), lb[x_cols], ub[x_cols])
    point = np.zeros(model.num_vars)
    point[x_cols] = x
    acts = forward(net, x)
    idx = model.var_index
    for l in range(1, model.encoded_layers + 1):
        a = acts.pre[l - 1]
        for j, val in enumerate(a):
            point[idx[("a", l, j)]] = val
            key = ("z", l, j)
            if key in idx:
                point[idx[("h", l, j)]] = max(val, 0.0)
                point[idx[("hbar", l, j)]] = max(-val, 0.0)
                zc = idx[key]
                point[zc] = min(max(1.0 if val >= 0 else 0.0, lb[zc]), ub[zc])
    return point


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _terms(cols, coefs, names) -> str:
    parts = []
    for c, v in zip(cols, coefs):
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(v))} {names[c]}")
    return " ".join(parts)


def lp_text(model: MilpModel) -> str:
    names = model.names
    lines = [f"\\ {model.name}", "Maximize" if model.sense == MAXIMIZE else "Minimize"]
    obj = sorted(model.objective.items())
    if obj:
        lines.append(" obj: " + _terms([c for c, _ in obj], [v for _, v in obj], names))
    else:
        lines.append(" obj: 0 " + names[0] if names else " obj:")
    lines.append("Subject To")
    for r, con in enumerate(model.constraints):
        order = np.argsort(con.cols, kind="stable")
        lhs = _terms(con.cols[order], con.coefs[order], names)
        lines.append(f" c{r}: {lhs} {con.sense} {_fmt(con.rhs)}")
    lines.append("Bounds")
    for name, lo, hi in zip(names, model.lb, model.ub):
        if lo == hi:
            lines.append(f" {name} = {_fmt(lo)}")
        elif math.isinf(lo) and math.isinf(hi):
            lines.append(f" {name} free")
        elif math.isinf(hi):
            lines.append(f" {name} >= {_fmt(lo)}")
        elif math.isinf(lo):
            lines.append(f" -inf <= {name} <= {_fmt(hi)}")
        else:
            lines.append(f" {_fmt(lo)} <= {name} <= {_fmt(hi)}")
    binaries = [names[i] for i in model.binaries]
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"


def export_lp(model: MilpModel, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(lp_text(model))
