"""Adversarial verification over an infinity-norm ball and the bound-type
tradeoff report."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from actbounds.branchbound import OPTIMAL, BnbConfig, solve_milp
from actbounds.formulate import VerifyConfig, build_verification
from actbounds.model import Network, forward, predict
from actbounds.propagate import BoundsSet

# objective above this counts as "a misclassified input exists"
ADVERSARIAL_TOL = 1e-6
GAP_REPORT = 0.01

REPORT_COLUMNS = ["network", "bound_method", "target_class", "status", "objective", "dual_bound",
                  "rel_gap", "verify_time_s", "bound_time_s", "witness_file"]


@dataclass
class TargetResult:
    target: int
    status: str
    objective: float | None
    dual_bound: float | None
    rel_gap: float
    witness: np.ndarray | None
    witness_class: int | None
    solve_time: float
    nodes: int = 0

    @property
    def adversarial(self) -> bool:
        return self.objective is not None and self.objective > ADVERSARIAL_TOL


@dataclass
class VerificationReport:
    network_name: str
    reference_class: int
    radius: float
    bound_method: str
    bound_time: float
    results: list[TargetResult] = field(default_factory=list)

    @property
    def adversarial_classes(self) -> list[int]:
        return [r.target for r in self.results if r.adversarial]

    @property
    def verify_time(self) -> float:
        return sum(r.solve_time for r in self.results)

    def write_csv(self, path, witness_files: dict[int, str] | None = None) -> None:
        witness_files = witness_files or {}
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for r in self.results:
                writer.writerow([
                    self.network_name, self.bound_method, r.target, r.status, _num(r.objective),
                    _num(r.dual_bound), _num(r.rel_gap), f"{r.solve_time:.6f}", f"{self.bound_time:.6f}",
                    witness_files.get(r.target, ""),
                ])


def _num(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def verify(net: Network, bounds: BoundsSet, cfg: VerifyConfig, bnb: BnbConfig | None = None) -> VerificationReport:
    """Solve one verification MILP per target class (ascending index)."""
    cfg.check(net)
    if not bounds.covers(net, net.depth - 1):
        raise ValueError("bounds do not match the network's hidden layers")
    if bounds.network_name and bounds.network_name != net.name:
        raise ValueError(f"bounds belong to {bounds.network_name!r}, not {net.name!r}")
    bnb = bnb or BnbConfig(time_limit=cfg.time_limit)
    ref = predict(net, cfg.x0)
    n_out = net.layers[-1].width
    if cfg.target == "all":
        targets = [j for j in range(n_out) if j != ref]
    else:
        targets = [int(cfg.target)]
    report = VerificationReport(net.name, ref, cfg.radius, bounds.method, bounds.total_time)
    for j in targets:
        t0 = time.perf_counter()
        model = build_verification(net, bounds, cfg, j)
        res = solve_milp(model, net, bnb)
        witness = wclass = None
        if res.solution is not None:
            x_cols = [model.var_index[("x", i)] for i in range(net.input_dim)]
            witness = res.solution[x_cols].copy()
            wclass = predict(net, witness)
        gap = res.rel_gap
        report.results.append(TargetResult(j, res.status, res.incumbent, res.dual_bound, gap,
                                           witness, wclass, time.perf_counter() - t0, res.nodes))
        if cfg.early_exit and report.results[-1].adversarial:
            break
    return report


def witness_objective(net: Network, x, ref: int, target: int) -> float:
    out = forward(net, x).output
    return float(out[target] - out[ref])


# -- tradeoff report -----------------------------------------------------------

TRADEOFF_COLUMNS = ["kind", "network", "bound_method", "target_class", "status", "objective", "rel_gap",
                    "bound_time_s", "verify_time_s", "n_optimal", "n_gap_le_1pct", "total_time_s"]


def tradeoff_report(net: Network, runs) -> list[dict]:
    """Rows per (bound method, target class) plus one summary row per run."""
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to report")
    first = runs[0][1]
    for bounds, rep in runs:
        if rep.network_name != net.name or (bounds.network_name and bounds.network_name != net.name):
            raise ValueError("runs mix different networks")
        if rep.reference_class != first.reference_class or not math.isclose(rep.radius, first.radius):
            raise ValueError("runs use different verification settings")
        if [r.target for r in rep.results] != [r.target for r in first.results]:
            raise ValueError("runs cover different target classes")
    rows = []
    for bounds, rep in runs:
        for r in rep.results:
            rows.append({
                "kind": "target", "network": net.name, "bound_method": bounds.method,
                "target_class": r.target, "status": r.status, "objective": r.objective,
                "rel_gap": r.rel_gap, "bound_time_s": bounds.total_time, "verify_time_s": r.solve_time,
                "n_optimal": "", "n_gap_le_1pct": "", "total_time_s": "",
            })
    for bounds, rep in runs:
        verify_time = rep.verify_time
        rows.append({
            "kind": "summary", "network": net.name, "bound_method": bounds.method, "target_class": "",
            "status": "", "objective": "", "rel_gap": "", "bound_time_s": bounds.total_time,
            "verify_time_s": verify_time,
            "n_optimal": sum(r.status == OPTIMAL for r in rep.results),
            "n_gap_le_1pct": sum(r.rel_gap <= GAP_REPORT for r in rep.results),
            "total_time_s": bounds.total_time + verify_time,
        })
    return rows


def write_tradeoff_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRADEOFF_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
