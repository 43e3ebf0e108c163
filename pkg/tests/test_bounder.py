import csv

import numpy as np
import pytest

from actbounds.bounder import (
    BoundError,
    BounderConfig,
    fallback_bound,
    relative_gap,
    ro_gap,
    run_bounder,
    write_records_csv,
)
from actbounds.branchbound import brute_force_oracle
from actbounds.formulate import MAXIMIZE, MINIMIZE
from actbounds.model import generate_random
from actbounds.propagate import BoundsSet, interval_bounds, naive_norm_bounds
from actbounds.simplex import ToleranceConfig

from conftest import all_preactivations, sample_inputs


@pytest.fixture(scope="module")
def gap_runs():
    from actbounds.model import load_network
    from conftest import FIXTURES

    net = load_network(FIXTURES / "gap_net.json")
    return net, {m: run_bounder(net, BounderConfig(method=m)) for m in ("naive_norm", "naive_interval", "weak", "strong")}


class TestGapNet:
    def test_strong(self, gap_runs):
        b = gap_runs[1]["strong"]
        np.testing.assert_allclose(b.lb[0], [-2, -2], atol=1e-6)
        np.testing.assert_allclose(b.ub[0], [2, 2], atol=1e-6)
        np.testing.assert_allclose([b.lb[1][0], b.ub[1][0]], [0, 2], atol=1e-6)
        assert b.status == [["milp_optimal"] * 2, ["milp_optimal"]]

    def test_weak(self, gap_runs):
        b = gap_runs[1]["weak"]
        np.testing.assert_allclose(b.ub[0], [2, 2], atol=1e-6)
        np.testing.assert_allclose([b.lb[1][0], b.ub[1][0]], [0, 3], atol=1e-6)
        assert b.status[1] == ["lp_optimal"]

    def test_naive(self, gap_runs):
        b = gap_runs[1]["naive_norm"]
        assert [b.lb[1][0], b.ub[1][0]] == [-4, 4]

    def test_ro_gaps(self, gap_runs):
        runs = gap_runs[1]
        assert ro_gap(runs["strong"], runs["weak"]).upper[1][0] == pytest.approx(0.5, abs=1e-6)
        assert ro_gap(runs["strong"], runs["naive_norm"]).upper[1][0] == pytest.approx(1.0, abs=1e-6)

    def test_records(self, gap_runs, tmp_path):
        b = gap_runs[1]["strong"]
        assert len(b.records) == 2 * 3
        write_records_csv(b, tmp_path / "r.csv")
        rows = list(csv.DictReader(open(tmp_path / "r.csv")))
        assert list(rows[0]) == ["network", "method", "layer", "neuron", "sense", "value", "status", "solve_time_s"]
        out = [r for r in rows if r["layer"] == "2"]
        assert {r["sense"]: float(r["value"]) for r in out} == pytest.approx({MAXIMIZE: 2.0, MINIMIZE: 0.0}, abs=1e-6)


def test_ro_gap_formula():
    assert relative_gap(-3.0, -2.0) == pytest.approx(1 / (2 + 1e-10))
    assert relative_gap(1.5, 1.5) == 0.0
    assert relative_gap(1e-12, 0.0) == pytest.approx(1e-2)


def test_ro_gap_self_zero():
    net = generate_random([3, 5, 2], seed=1)
    b = run_bounder(net, BounderConfig(method="strong"))
    t = ro_gap(b, b)
    assert all(np.all(g == 0) for g in t.lower + t.upper)


def test_ro_gap_errors(gap_net):
    weak = run_bounder(gap_net, BounderConfig(method="weak"))
    strong = run_bounder(gap_net, BounderConfig(method="strong"))
    with pytest.raises(ValueError):
        ro_gap(weak, strong)
    other = run_bounder(generate_random([2, 3, 1], seed=0), BounderConfig(method="weak"))
    with pytest.raises(ValueError):
        ro_gap(strong, other)


def test_ro_gap_csv(gap_net, tmp_path):
    strong = run_bounder(gap_net, BounderConfig(method="strong"))
    weak = run_bounder(gap_net, BounderConfig(method="weak"))
    ro_gap(strong, weak).write_csv(tmp_path / "g.csv")
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert rows[0] == ["kind", "layer", "neuron", "lower_gap", "upper_gap"]
    kinds = [r[0] for r in rows[1:]]
    assert kinds.count("neuron") == 3 and kinds.count("layer_mean") == 2 and kinds.count("layer_max") == 2


def ordering_case(seed):
    rng = np.random.default_rng(seed)
    arch = [int(rng.integers(2, 5))] + [int(rng.integers(2, 5))] * int(rng.integers(1, 4)) + [2]
    return generate_random(arch, seed=seed)


@pytest.mark.parametrize("seed", range(8))
def test_ordering_soundness_and_first_layer(seed):
    net = ordering_case(seed)
    runs = {m: run_bounder(net, BounderConfig(method=m)) for m in ("naive_norm", "naive_interval", "weak", "strong")}
    s, w, n = runs["strong"], runs["weak"], runs["naive_norm"]
    for l in range(net.depth):
        assert np.all(s.ub[l] <= w.ub[l] + 1e-6) and np.all(w.ub[l] <= n.ub[l] + 1e-6)
        assert np.all(s.lb[l] >= w.lb[l] - 1e-6) and np.all(w.lb[l] >= n.lb[l] - 1e-6)
    for other in ("weak", "naive_interval"):
        np.testing.assert_allclose(runs[other].lb[0], s.lb[0], atol=1e-6)
        np.testing.assert_allclose(runs[other].ub[0], s.ub[0], atol=1e-6)
    pre = all_preactivations(net, sample_inputs(net, 10_000, seed=seed))
    for b in runs.values():
        b.check()
        for l, a in enumerate(pre):
            assert np.all(a >= b.lb[l] - 1e-6) and np.all(a <= b.ub[l] + 1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_strong_equals_oracle(seed):
    net = ordering_case(seed)
    b = run_bounder(net, BounderConfig(method="strong"))
    for m in range(1, net.depth + 1):
        for n in range(net.layers[m - 1].width):
            assert b.ub[m - 1][n] == pytest.approx(brute_force_oracle(net, None, m, n, MAXIMIZE), abs=1e-5)
            assert b.lb[m - 1][n] == pytest.approx(brute_force_oracle(net, None, m, n, MINIMIZE), abs=1e-5)


def test_workers_identical():
    net = generate_random([3, 6, 6, 2], seed=5)
    for method in ("weak", "strong"):
        a = run_bounder(net, BounderConfig(method=method, workers=1))
        b = run_bounder(net, BounderConfig(method=method, workers=3))
        assert a.to_dict(timings=False) == b.to_dict(timings=False)


def test_near_zero_time_limit():
    net = generate_random([3, 4, 4, 2], seed=2)
    b = run_bounder(net, BounderConfig(method="strong", time_limit=1e-9))
    for m in range(1, net.depth + 1):
        assert set(b.status[m - 1]) <= {"dual_bound", "fallback"}
        for n in range(net.layers[m - 1].width):
            assert b.ub[m - 1][n] >= brute_force_oracle(net, None, m, n, MAXIMIZE) - 1e-6
            assert b.lb[m - 1][n] <= brute_force_oracle(net, None, m, n, MINIMIZE) + 1e-6


def test_fallback_on_iteration_limit():
    net = generate_random([3, 5, 5, 2], seed=3)
    cfg = BounderConfig(method="weak", lp_tol=ToleranceConfig(max_iter=0))
    b = run_bounder(net, cfg)
    naive = naive_norm_bounds(net)
    assert all(s == "fallback" for s in b.status[0])
    # layer 1 fallback is the closed-form bound itself
    np.testing.assert_allclose(b.ub[0], naive.ub[0])
    with pytest.raises(BoundError):
        run_bounder(net, BounderConfig(method="weak", lp_tol=ToleranceConfig(max_iter=0), fallback=False))


def test_fallback_bound_uses_worst_previous(gap_net):
    b = BoundsSet("weak")
    b.append([-1.0, -3.0], [0.5, 1.5], ["lp_optimal"] * 2)
    # ||[1, 1]||_inf * max(0, 1.5) + 0
    assert fallback_bound(gap_net, b, 2) == 3.0
    assert fallback_bound(gap_net, BoundsSet("weak"), 1) == 2.0


def test_hybrid():
    net = generate_random([3, 4, 4, 4, 2], seed=6)
    b = run_bounder(net, BounderConfig(method="hybrid", layer_methods=("naive_interval", "weak", "strong")))
    assert b.status[0] == ["closed_form"] * 4
    assert set(b.status[1]) == {"lp_optimal"}
    assert set(b.status[2]) <= {"milp_optimal"} and set(b.status[3]) <= {"milp_optimal"}
    pre = all_preactivations(net, sample_inputs(net, 5000))
    for l, a in enumerate(pre):
        assert np.all(a >= b.lb[l] - 1e-6) and np.all(a <= b.ub[l] + 1e-6)


def test_export_lp(gap_net, tmp_path):
    run_bounder(gap_net, BounderConfig(method="strong", export_dir=str(tmp_path / "lp")))
    names = sorted(p.name for p in (tmp_path / "lp").iterdir())
    assert names == sorted(f"L{m}_N{n}_{s}.lp" for m, n in ((1, 0), (1, 1), (2, 0)) for s in (MAXIMIZE, MINIMIZE))


@pytest.mark.parametrize("kwargs", [
    {"method": "exact"}, {"workers": 0}, {"method": "weak", "time_limit": 0},
    {"method": "hybrid"}, {"method": "hybrid", "layer_methods": ("weak", "bogus")},
])
def test_config_errors(kwargs):
    with pytest.raises(ValueError):
        BounderConfig(**kwargs)


def test_naive_delegates(gap_net):
    b = run_bounder(gap_net, BounderConfig(method="naive_interval"))
    ref = interval_bounds(gap_net)
    for x, y in zip(b.ub + b.lb, ref.ub + ref.lb):
        np.testing.assert_array_equal(x, y)
