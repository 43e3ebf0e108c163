"""Best-first branch-and-bound over the relu indicator binaries, and an
activation-pattern enumeration oracle for small networks."""

from __future__ import annotations

import heapq
import itertools
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from actbounds import simplex
from actbounds.formulate import MAXIMIZE, MilpModel, witness_point
from actbounds.model import Network
from actbounds.propagate import BoundsSet
from actbounds.simplex import LpProblem, ToleranceConfig, fix_and_resolve

OPTIMAL = "optimal"
TIME_LIMIT = "time_limit"
INFEASIBLE = "infeasible"

ORACLE_CAP = 20


@dataclass(frozen=True)
class BnbConfig:
    time_limit: float = 3600.0
    rel_gap_tol: float = 1e-6
    abs_gap_tol: float = 1e-9
    int_tol: float = 1e-6
    node_limit: int = 1_000_000
    heuristic: bool = True
    lp_tol: ToleranceConfig = field(default_factory=ToleranceConfig)

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if not (self.rel_gap_tol > 0 and self.int_tol > 0):
            raise ValueError("tolerances must be positive")

    @classmethod
    def from_env(cls, **kwargs) -> BnbConfig:
        if "INT_TOL" in os.environ:
            kwargs.setdefault("int_tol", float(os.environ["INT_TOL"]))
        kwargs.setdefault("lp_tol", ToleranceConfig.from_env())
        return cls(**kwargs)


@dataclass
class MilpResult:
    status: str
    incumbent: float | None = None
    dual_bound: float | None = None
    solution: np.ndarray | None = None
    # nodes taken from the tree and processed (the root always counts);
    # children pruned right after their LP count only in lp_solves
    nodes: int = 0
    wall_time: float = 0.0
    lp_solves: int = 0
    # (elapsed, incumbent, dual) after every processed node, in the model's sense
    trace: list = field(default_factory=list, repr=False)
    maximize: bool = True

    @property
    def rel_gap(self) -> float:
        """Signed gap, nonnegative up to solver noise: (dual - incumbent) in
        the direction of optimization over max(|incumbent|, 1e-10)."""
        if self.incumbent is None or self.dual_bound is None:
            return math.inf
        diff = self.dual_bound - self.incumbent
        return (diff if self.maximize else -diff) / max(abs(self.incumbent), 1e-10)


@dataclass(order=True)
class _Node:
    key: float
    seq: int
    bound: float = field(compare=False)
    fixings: dict = field(compare=False)
    x: np.ndarray = field(compare=False, repr=False)
    basis: simplex.Basis = field(compare=False, repr=False)


def solve_milp(model: MilpModel, net: Network, cfg: BnbConfig | None = None,
               warm: simplex.Basis | None = None) -> MilpResult:
    """Maximize (or minimize) ``model`` by LP-based branch-and-bound.

    Internally everything is a maximization of ``sign * objective``; values
    in the result are reported in the model's own sense. ``warm`` seeds the
    root LP.
    """
    cfg = cfg or BnbConfig()
    t0 = time.perf_counter()
    sign = 1.0 if model.sense == MAXIMIZE else -1.0
    p = LpProblem.from_model(model)
    binaries = [j for j in model.binaries if model.lb[j] < model.ub[j]]
    counter = itertools.count()
    state = {"lps": 0, "popped": 0, "inc": -math.inf, "sol": None}
    trace = []

    def heuristic(x_lp: np.ndarray) -> None:
        if not cfg.heuristic:
            return
        x_cols = [model.var_index[("x", j)] for j in range(net.input_dim)]
        point = witness_point(model, net, x_lp[x_cols])
        val = sign * model.objective_value(point)
        if val > state["inc"]:
            state["inc"], state["sol"] = val, point

    def evaluate(fixings: dict, warm) -> _Node | None:
        res = fix_and_resolve(p, fixings, cfg.lp_tol, warm)
        state["lps"] += 1
        if res.status == simplex.INFEASIBLE:
            return None
        if res.status != simplex.OPTIMAL:
            raise RuntimeError(f"node LP ended with status {res.status}")
        heuristic(res.x)
        bound = sign * res.objective
        return _Node(-bound, next(counter), bound, fixings, res.x, res.basis)

    def threshold() -> float:
        inc = state["inc"]
        if inc == -math.inf:
            return inc
        return inc + max(cfg.rel_gap_tol * abs(inc), cfg.abs_gap_tol)

    def result(status: str, dual: float | None) -> MilpResult:
        inc = state["inc"]
        inc_out = None if inc == -math.inf else sign * inc
        dual_out = None if dual is None else sign * dual
        return MilpResult(status, inc_out, dual_out, state["sol"], max(state["popped"], 1),
                          time.perf_counter() - t0, state["lps"], trace, maximize=sign > 0)

    def record(dual: float) -> None:
        inc = state["inc"]
        trace.append((time.perf_counter() - t0, None if inc == -math.inf else sign * inc, sign * dual))

    root = evaluate({}, warm)
    if root is None:
        return result(INFEASIBLE, None)
    if not binaries:
        # nothing to branch on: the LP optimum is the answer; the heuristic's
        # forward-pass point (exact objective) stays the incumbent if it ran
        if state["sol"] is None:
            state["inc"], state["sol"] = root.bound, root.x
        record(root.bound)
        timed_out = time.perf_counter() - t0 >= cfg.time_limit
        return result(TIME_LIMIT if timed_out else OPTIMAL, root.bound)
    closed = -math.inf
    heap = [root]
    record(max(root.bound, state["inc"]))
    while heap:
        dual = max(-heap[0].key, state["inc"])
        if time.perf_counter() - t0 >= cfg.time_limit or state["lps"] >= cfg.node_limit:
            return result(TIME_LIMIT, max(dual, closed))
        node = heapq.heappop(heap)
        if node.bound <= threshold():
            heap.clear()
            break
        state["popped"] += 1
        j = _most_fractional(node.x, binaries, node.fixings, cfg.int_tol)
        if j < 0:
            # integral LP point: closed; the heuristic already scored its input,
            # which matches the LP value up to solver tolerance
            closed = max(closed, node.bound)
            if not cfg.heuristic and node.bound > state["inc"]:
                state["inc"], state["sol"] = node.bound, node.x
            record(max(-heap[0].key, state["inc"]) if heap else state["inc"])
            continue
        for val in (0.0, 1.0):
            child = evaluate({**node.fixings, j: val}, node.basis)
            if child is not None and child.bound > threshold():
                heapq.heappush(heap, child)
        record(max(-heap[0].key, state["inc"]) if heap else state["inc"])
    if state["sol"] is None:
        return result(INFEASIBLE, None)
    return result(OPTIMAL, closed if closed > threshold() else state["inc"])


def _most_fractional(x: np.ndarray, binaries, fixings: dict, int_tol: float) -> int:
    best, best_j = int_tol, -1
    for j in binaries:
        if j in fixings:
            continue
        frac = abs(x[j] - round(x[j]))
        if frac > best:
            best, best_j = frac, j
    return best_j


# -- enumeration oracle ------------------------------------------------------

def brute_force_oracle(net: Network, bounds: BoundsSet | None, m: int, n: int, sense: str = MAXIMIZE,
                       tol: ToleranceConfig | None = None) -> float:
    """Exact optimum of ``a_n^(m)`` over the input box by enumerating the
    activation patterns of layers 1..m-1.

    Each pattern linearizes the network; its region is the polyhedron of
    inputs whose pre-activations carry the pattern's signs, and one small LP
    over the inputs alone is solved per pattern. ``bounds``, when given, only
    skips patterns that contradict a stable sign.
    """
    if not 1 <= m <= net.depth:
        raise ValueError(f"layer {m} out of range")
    k = sum(layer.width for layer in net.layers[: m - 1])
    if k > ORACLE_CAP:
        raise ValueError(f"{k} relus before layer {m} exceed the enumeration cap of {ORACLE_CAP}")
    tol = tol or ToleranceConfig()
    sgn = 1.0 if sense == MAXIMIZE else -1.0
    best = -math.inf
    # depth-first over layers; an infeasible partial pattern prunes its subtree
    n0 = net.input_dim
    stack = [(1, np.eye(n0), np.zeros(n0), np.zeros((0, n0)), np.zeros(0))]
    while stack:
        l, M, off, G, g = stack.pop()
        layer = net.layers[l - 1]
        # pre-activation of layer l as an affine map of x: P x + q
        P = layer.weights @ M
        q = layer.weights @ off + layer.bias
        if l == m:
            res = _pattern_lp(net, G, g, sgn * P[n], tol)
            if res is not None:
                best = max(best, res + sgn * q[n])
            continue
        width = layer.width
        stable = None
        if bounds is not None and bounds.num_layers >= l:
            lo, hi = bounds.layer(l)
            stable = (lo, hi)
        for pattern in itertools.product((0, 1), repeat=width):
            s = np.array(pattern, dtype=float)
            if stable is not None:
                lo, hi = stable
                if np.any((s == 1) & (hi < 0)) or np.any((s == 0) & (lo > 0)):
                    continue
            # on: P x + q >= 0  ->  -P x <= q ; off: P x + q <= 0 -> P x <= -q
            sign = np.where(s == 1, -1.0, 1.0)
            G2 = np.vstack([G, sign[:, None] * P])
            g2 = np.concatenate([g, np.where(s == 1, q, -q)])
            if _pattern_lp(net, G2, g2, np.zeros(n0), tol) is None:
                continue
            stack.append((l + 1, s[:, None] * P, s * q, G2, g2))
    if best == -math.inf:
        raise RuntimeError("no feasible activation pattern (empty input box?)")
    return sgn * best


def _pattern_lp(net: Network, G, g, c, tol) -> float | None:
    """max c.x s.t. G x <= g, x in the input box; None when infeasible."""
    p = LpProblem(np.asarray(G, float), np.full(len(g), -np.inf), np.asarray(g, float),
                  net.input_lb.copy(), net.input_ub.copy(), np.asarray(c, float), maximize=True)
    res = simplex.solve_lp(p, tol)
    if res.status == simplex.INFEASIBLE:
        return None
    if res.status != simplex.OPTIMAL:
        raise RuntimeError(f"pattern LP ended with status {res.status}")
    return res.objective
