"""Layer-by-layer bound tightening (naive / weak / strong / hybrid) and the
relative-optimality gap between bound sets."""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from actbounds import simplex
from actbounds.branchbound import OPTIMAL, TIME_LIMIT, BnbConfig, solve_milp
from actbounds.formulate import DEFAULT_MARGIN, MAXIMIZE, MINIMIZE, build_obbt, export_lp
from actbounds.model import Network
from actbounds.propagate import (
    BoundsSet,
    interval_bounds,
    interval_step,
    naive_norm_bounds,
    norm_step,
    post_magnitude,
    relu_box,
)
from actbounds.simplex import LpProblem, ToleranceConfig

LAYER_METHODS = ("naive_norm", "naive_interval", "weak", "strong")


class BoundError(RuntimeError):
    pass


@dataclass(frozen=True)
class BounderConfig:
    method: str = "weak"
    time_limit: float = 3600.0
    workers: int = 1
    lp_tol: ToleranceConfig = field(default_factory=ToleranceConfig)
    bnb: BnbConfig | None = None
    fallback: bool = True
    margin: float = DEFAULT_MARGIN
    # per-layer methods for method="hybrid", e.g. ("naive_norm", "weak", "strong")
    layer_methods: tuple[str, ...] | None = None
    export_dir: str | None = None

    def __post_init__(self):
        if self.method not in LAYER_METHODS + ("hybrid",):
            raise ValueError(f"unknown bound method {self.method!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.method in ("weak", "strong", "hybrid") and not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if self.method == "hybrid":
            if not self.layer_methods or any(m not in LAYER_METHODS for m in self.layer_methods):
                raise ValueError("hybrid runs need layer_methods drawn from " + ", ".join(LAYER_METHODS))

    def method_for(self, m: int) -> str:
        if self.method != "hybrid":
            return self.method
        methods = self.layer_methods
        return methods[min(m, len(methods)) - 1]

    def bnb_config(self) -> BnbConfig:
        base = self.bnb or BnbConfig(lp_tol=self.lp_tol)
        return replace(base, time_limit=self.time_limit)


@dataclass
class NeuronRecord:
    layer: int
    neuron: int
    sense: str
    value: float
    status: str
    solve_time: float
    nodes: int = 0


def fallback_bound(net: Network, bounds: BoundsSet, m: int) -> float:
    """Norm-propagation bound for layer ``m`` from the worst bound of layer m-1."""
    prev_ub = bounds.ub[m - 2] if m > 1 else None
    layer = net.layers[m - 1]
    return norm_step(layer.weights, layer.bias, post_magnitude(net, prev_ub))


def _solve_sense(net, bounds, m, n, sense, mode, cfg: BounderConfig, fb: float, warm=None) -> NeuronRecord:
    t0 = time.perf_counter()
    relax = mode == "weak"
    model = build_obbt(net, bounds, m, n, sense, relax=relax, margin=cfg.margin)
    if cfg.export_dir:
        export_lp(model, os.path.join(cfg.export_dir, f"L{m}_N{n}_{sense}.lp"))
    limit = fb if sense == MAXIMIZE else -fb
    tighter = min if sense == MAXIMIZE else max
    nodes = 0
    if relax:
        res = simplex.solve_lp(LpProblem.from_model(model), cfg.lp_tol, warm)
        if res.status == simplex.OPTIMAL:
            value, status = res.objective, "lp_optimal"
        elif res.status == simplex.INFEASIBLE:
            raise BoundError(f"layer {m} neuron {n} ({sense}): LP infeasible, bounds are corrupted")
        elif cfg.fallback:
            value, status = limit, "fallback"
        else:
            raise BoundError(f"layer {m} neuron {n} ({sense}): LP ended with {res.status}")
    else:
        res = solve_milp(model, net, cfg.bnb_config(), warm=warm)
        nodes = res.nodes
        if res.status == OPTIMAL:
            value, status = res.dual_bound, "milp_optimal"
        elif res.status == TIME_LIMIT and res.dual_bound is not None:
            value = tighter(res.dual_bound, limit)
            status = "dual_bound" if value == res.dual_bound else "fallback"
        elif res.status == TIME_LIMIT and cfg.fallback:
            value, status = limit, "fallback"
        else:
            raise BoundError(f"layer {m} neuron {n} ({sense}): MILP ended with {res.status}")
    return NeuronRecord(m, n, sense, float(value), status, time.perf_counter() - t0, nodes)


def _solve_neuron(args):
    net, bounds, m, n, mode, cfg, fb, warm = args
    hi = _solve_sense(net, bounds, m, n, MAXIMIZE, mode, cfg, fb, warm)
    lo = _solve_sense(net, bounds, m, n, MINIMIZE, mode, cfg, fb, warm)
    return lo, hi


def _layer_basis(net, bounds, m, cfg):
    """Feasible basis of the layer-m relaxation, shared by all its neurons.

    Every neuron of a layer has the same constraints; starting each solve from
    this one basis skips phase 1 while keeping each neuron's result independent
    of how neurons are spread over workers.
    """
    model = build_obbt(net, bounds, m, 0, MAXIMIZE, relax=True, margin=cfg.margin)
    model.set_objective({}, MAXIMIZE)
    res = simplex.solve_lp(LpProblem.from_model(model), cfg.lp_tol)
    return res.basis if res.status == simplex.OPTIMAL else None


def _combine(lo: NeuronRecord, hi: NeuronRecord) -> str:
    statuses = {lo.status, hi.status}
    for s in ("fallback", "dual_bound"):
        if s in statuses:
            return s
    return hi.status


def _closed_form_layer(net, bounds, m, method):
    layer = net.layers[m - 1]
    if method == "naive_norm":
        b = fallback_bound(net, bounds, m)
        return np.full(layer.width, -b), np.full(layer.width, b)
    if m == 1:
        lo, hi = net.input_lb, net.input_ub
    else:
        lo, hi = relu_box(*bounds.layer(m - 1), net.layers[m - 2].activation)
    return interval_step(layer.weights, layer.bias, lo, hi)


def _closed_form_records(bounds: BoundsSet) -> None:
    for l, (lo, hi) in enumerate(zip(bounds.lb, bounds.ub), start=1):
        for j in range(len(lo)):
            bounds.records.append(NeuronRecord(l, j, MAXIMIZE, float(hi[j]), "closed_form", 0.0))
            bounds.records.append(NeuronRecord(l, j, MINIMIZE, float(lo[j]), "closed_form", 0.0))


def run_bounder(net: Network, cfg: BounderConfig) -> BoundsSet:
    """Bounds for every layer, computed in layer order with a barrier between
    layers. Within a layer the neurons are independent and may run in
    separate processes; results land in fixed slots, so the output does not
    depend on ``cfg.workers``."""
    t0 = time.perf_counter()
    if cfg.method in ("naive_norm", "naive_interval"):
        out = naive_norm_bounds(net) if cfg.method == "naive_norm" else interval_bounds(net)
        _closed_form_records(out)
        out.total_time = time.perf_counter() - t0
        return out
    if cfg.export_dir:
        os.makedirs(cfg.export_dir, exist_ok=True)
    out = BoundsSet(method=cfg.method, network_name=net.name)
    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for m in range(1, net.depth + 1):
            mode = cfg.method_for(m)
            width = net.layers[m - 1].width
            if mode in ("naive_norm", "naive_interval"):
                lb, ub = _closed_form_layer(net, out, m, mode)
                out.append(lb, ub, ["closed_form"] * width)
                for j in range(width):
                    out.records.append(NeuronRecord(m, j, MAXIMIZE, float(ub[j]), "closed_form", 0.0))
                    out.records.append(NeuronRecord(m, j, MINIMIZE, float(lb[j]), "closed_form", 0.0))
                continue
            fb = fallback_bound(net, out, m)
            prefix = BoundsSet(out.method, out.lb[:], out.ub[:], out.status[:], out.solve_time[:],
                               network_name=out.network_name)
            warm = _layer_basis(net, prefix, m, cfg)
            tasks = [(net, prefix, m, n, mode, cfg, fb, warm) for n in range(width)]
            results = list(pool.map(_solve_neuron, tasks)) if pool else [_solve_neuron(t) for t in tasks]
            lb = np.empty(width)
            ub = np.empty(width)
            statuses, times = [], np.empty(width)
            for n, (lo, hi) in enumerate(results):
                # solver noise can cross the two values on a constant neuron
                lb[n], ub[n] = min(lo.value, hi.value), max(lo.value, hi.value)
                statuses.append(_combine(lo, hi))
                times[n] = lo.solve_time + hi.solve_time
                out.records.extend([hi, lo])
            out.append(lb, ub, statuses, times)
    finally:
        if pool:
            pool.shutdown()
    out.total_time = time.perf_counter() - t0
    return out


def write_records_csv(bounds: BoundsSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["network", "method", "layer", "neuron", "sense", "value", "status", "solve_time_s"])
        for r in bounds.records:
            writer.writerow([bounds.network_name, bounds.method, r.layer, r.neuron, r.sense,
                             repr(r.value), r.status, f"{r.solve_time:.6f}"])


# -- relative optimality gap -------------------------------------------------

@dataclass
class RoGapTable:
    """Per-layer arrays of gaps; ``lower[l-1][j]`` belongs to layer l neuron j."""

    strong_method: str
    other_method: str
    lower: list[np.ndarray]
    upper: list[np.ndarray]

    def layer_summary(self) -> list[dict]:
        rows = []
        for l, (lo, hi) in enumerate(zip(self.lower, self.upper), start=1):
            rows.append({
                "layer": l,
                "mean_lower": float(lo.mean()),
                "max_lower": float(lo.max()),
                "mean_upper": float(hi.mean()),
                "max_upper": float(hi.max()),
            })
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "layer", "neuron", "lower_gap", "upper_gap"])
            for l, (lo, hi) in enumerate(zip(self.lower, self.upper), start=1):
                for j in range(len(lo)):
                    writer.writerow(["neuron", l, j, repr(float(lo[j])), repr(float(hi[j]))])
            for row in self.layer_summary():
                writer.writerow(["layer_mean", row["layer"], "", repr(row["mean_lower"]), repr(row["mean_upper"])])
                writer.writerow(["layer_max", row["layer"], "", repr(row["max_lower"]), repr(row["max_upper"])])


def relative_gap(approx, exact):
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return np.abs(approx - exact) / (np.abs(exact) + 1e-10)


def ro_gap(strong: BoundsSet, other: BoundsSet) -> RoGapTable:
    if strong.method != "strong":
        raise ValueError(f"reference bounds must be strong, got {strong.method!r}")
    if strong.num_layers != other.num_layers or any(
        len(a) != len(b) for a, b in zip(strong.lb, other.lb)
    ):
        raise ValueError("bound sets have different shapes")
    lower = [relative_gap(o, s) for s, o in zip(strong.lb, other.lb)]
    upper = [relative_gap(o, s) for s, o in zip(strong.ub, other.ub)]
    return RoGapTable(strong.method, other.method, lower, upper)
