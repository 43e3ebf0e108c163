import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from actbounds import simplex
from actbounds.formulate import MAXIMIZE, build_obbt, witness_point
from actbounds.model import generate_random
from actbounds.propagate import interval_bounds
from actbounds.simplex import LpProblem, ToleranceConfig, fix_and_resolve, solve_lp

from conftest import sample_inputs

INF = np.inf


def lp(A, lo, hi, lb, ub, c, maximize=True):
    f = lambda v: np.asarray(v, dtype=float)
    return LpProblem(f(A).reshape(len(lo), len(c)), f(lo), f(hi), f(lb), f(ub), f(c), maximize)


def scipy_value(p: LpProblem):
    """(status, value) from scipy's HiGHS; status 0 optimal, 2 infeasible, 3 unbounded."""
    rows_ub, b_ub, rows_eq, b_eq = [], [], [], []
    for row, lo, hi in zip(p.A, p.row_lo, p.row_hi):
        if lo == hi:
            rows_eq.append(row), b_eq.append(lo)
            continue
        if np.isfinite(hi):
            rows_ub.append(row), b_ub.append(hi)
        if np.isfinite(lo):
            rows_ub.append(-row), b_ub.append(-lo)
    n = len(p.c)
    sgn = -1.0 if p.maximize else 1.0
    res = linprog(sgn * p.c,
                  A_ub=np.array(rows_ub).reshape(-1, n) if rows_ub else None, b_ub=b_ub or None,
                  A_eq=np.array(rows_eq).reshape(-1, n) if rows_eq else None, b_eq=b_eq or None,
                  bounds=[(None if np.isinf(l) else l, None if np.isinf(u) else u) for l, u in zip(p.lb, p.ub)],
                  method="highs", options={"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9})
    return res.status, (sgn * res.fun if res.status == 0 else None)


def random_lp(rng, m, n, kind):
    A = rng.normal(size=(m, n))
    A[rng.random((m, n)) < 0.3] = 0.0
    x = rng.uniform(-1, 1, n)
    act = A @ x
    senses = rng.integers(0, 3, m)  # 0: <=, 1: >=, 2: =
    lo = np.where(senses == 0, -INF, np.where(senses == 1, act - rng.uniform(0, 1, m), act))
    hi = np.where(senses == 1, INF, np.where(senses == 0, act + rng.uniform(0, 1, m), act))
    lb = x - rng.uniform(0, 2, n)
    ub = x + rng.uniform(0, 2, n)
    if kind == "free":
        free = rng.random(n) < 0.3
        lb[free], ub[free] = -INF, INF
    elif kind == "half":
        half = rng.random(n) < 0.5
        ub[half] = INF
    elif kind == "infeasible":
        lo[0], hi[0] = 1e3, INF
        A[0] = 0.0
        A[0, 0] = 1.0
        ub[0] = 1.0
    return LpProblem(A, lo, hi, lb, ub, rng.normal(size=n), bool(rng.integers(0, 2)))


class TestExamples:
    def test_facet(self):
        r = solve_lp(lp([[1, 1]], [-INF], [1], [0, 0], [1, 1], [1, 1]))
        assert r.status == simplex.OPTIMAL
        assert r.objective == pytest.approx(1.0, abs=1e-12)

    def test_fixed_variable(self):
        r = solve_lp(lp(np.zeros((0, 1)), [], [], [0], [0], [1]))
        assert r.status == simplex.OPTIMAL and r.objective == 0.0

    def test_gap_net_weak(self, gap_net):
        p = LpProblem.from_model(build_obbt(gap_net, interval_bounds(gap_net), 2, 0, MAXIMIZE, relax=True))
        r = solve_lp(p)
        assert r.status == simplex.OPTIMAL
        assert r.objective == pytest.approx(3.0, abs=1e-6)

    def test_minimize(self):
        r = solve_lp(lp([[1, 1]], [1], [INF], [0, 0], [5, 5], [2, 3], maximize=False))
        assert r.objective == pytest.approx(2.0)

    def test_infeasible(self):
        r = solve_lp(lp([[1, 1]], [3], [INF], [0, 0], [1, 1], [1, 0]))
        assert r.status == simplex.INFEASIBLE

    def test_unbounded(self):
        r = solve_lp(lp([[1, -1]], [-INF], [1], [0, 0], [INF, INF], [1, 1]))
        assert r.status == simplex.UNBOUNDED

    def test_free_variable(self):
        # max -|y| style: y free, t >= y, t >= -y, minimize t
        r = solve_lp(lp([[1, -1], [1, 1]], [0, 0.5], [INF, INF], [-INF, -INF], [INF, INF], [1, 0], maximize=False))
        assert r.objective == pytest.approx(0.25)

    def test_iteration_limit_reported(self):
        rng = np.random.default_rng(0)
        p = random_lp(rng, 15, 20, "box")
        r = solve_lp(p, ToleranceConfig(max_iter=1))
        assert r.status in (simplex.ITERATION_LIMIT, simplex.OPTIMAL)
        if r.status == simplex.OPTIMAL:
            pytest.skip("solved within one pivot")


class TestFixAndResolve:
    def test_gap_net_all_active(self, gap_net):
        model = build_obbt(gap_net, interval_bounds(gap_net), 2, 0, MAXIMIZE, relax=True)
        z = [model.var_index[("z", 1, j)] for j in range(2)]
        r = fix_and_resolve(LpProblem.from_model(model), [(z[0], 1.0), (z[1], 1.0)])
        assert r.objective == pytest.approx(2.0, abs=1e-6)

    def test_outside_box(self, gap_net):
        model = build_obbt(gap_net, interval_bounds(gap_net), 2, 0, MAXIMIZE, relax=True)
        z = model.var_index[("z", 1, 0)]
        with pytest.raises(ValueError):
            fix_and_resolve(LpProblem.from_model(model), {z: 2.0})

    def test_conflicting_fixings(self):
        p = lp([[1, 1]], [2], [INF], [0, 0], [1, 1], [1, 1])
        assert fix_and_resolve(p, {0: 0.0}).status == simplex.INFEASIBLE

    @pytest.mark.parametrize("seed", range(3))
    def test_pattern_fix_dominates_witness(self, seed):
        net = generate_random([3, 4, 4, 2], seed=seed)
        model = build_obbt(net, interval_bounds(net), 3, 0, MAXIMIZE, relax=True)
        p = LpProblem.from_model(model)
        zs = [j for k, j in model.var_index.items() if k[0] == "z"]
        for x in sample_inputs(net, 20, seed=seed):
            w = witness_point(model, net, x)
            r = fix_and_resolve(p, {j: w[j] for j in zs})
            assert r.status == simplex.OPTIMAL
            assert r.objective >= model.objective_value(w) - 1e-6

    def test_warm_equals_cold(self, gap_net):
        model = build_obbt(gap_net, interval_bounds(gap_net), 2, 0, MAXIMIZE, relax=True)
        p = LpProblem.from_model(model)
        root = solve_lp(p)
        z = model.var_index[("z", 1, 0)]
        for v in (0.0, 1.0):
            warm = fix_and_resolve(p, {z: v}, warm=root.basis)
            cold = fix_and_resolve(p, {z: v})
            assert warm.objective == pytest.approx(cold.objective, abs=1e-6)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 12), n=st.integers(1, 12),
       kind=st.sampled_from(["box", "free", "half", "infeasible"]))
def test_matches_reference_solver(seed, m, n, kind):
    rng = np.random.default_rng(seed)
    p = random_lp(rng, m, n, kind)
    r = solve_lp(p)
    status, ref = scipy_value(p)
    if status == 2:
        assert r.status == simplex.INFEASIBLE
    elif status == 3:
        assert r.status == simplex.UNBOUNDED
    else:
        assert r.status == simplex.OPTIMAL
        assert r.objective == pytest.approx(ref, abs=1e-6 * max(1.0, abs(ref)))
        # primal feasibility of the returned point
        act = p.A @ r.x
        assert np.all(act >= p.row_lo - 1e-7) and np.all(act <= p.row_hi + 1e-7)
        assert np.all(r.x >= p.lb - 1e-7) and np.all(r.x <= p.ub + 1e-7)
        assert float(p.c @ r.x) == pytest.approx(r.objective, abs=1e-9 * max(1.0, abs(ref)))


@pytest.mark.parametrize("seed", range(10))
def test_bland_from_start(seed):
    rng = np.random.default_rng(seed)
    p = random_lp(rng, 10, 14, "box")
    r = solve_lp(p, ToleranceConfig(bland_after=0))
    status, ref = scipy_value(p)
    assert r.status == simplex.OPTIMAL
    assert r.objective == pytest.approx(ref, abs=1e-6)


def test_cycling_example_terminates():
    # Beale's classic cycling LP: min -3/4 x4 + 20 x5 - 1/2 x6 + 6 x7
    A = [[0.25, -8, -1, 9], [0.5, -12, -0.5, 3], [0, 0, 1, 0]]
    p = lp(A, [-INF, -INF, -INF], [0, 0, 1], [0] * 4, [INF] * 4, [-0.75, 20, -0.5, 6], maximize=False)
    for bland_after in (0, 1, 100):
        r = solve_lp(p, ToleranceConfig(bland_after=bland_after))
        assert r.status == simplex.OPTIMAL
        assert r.objective == pytest.approx(-1.25, abs=1e-9)


def test_highly_degenerate():
    # many redundant constraints through the optimum vertex
    n = 6
    rows = [np.ones(n)] + [np.eye(n)[i] + np.eye(n)[(i + 1) % n] for i in range(n)] * 3
    A = np.array(rows)
    p = LpProblem(A, np.full(len(rows), -INF), np.array([1.0] + [1.0] * (len(rows) - 1)),
                  np.zeros(n), np.ones(n), np.ones(n), True)
    r = solve_lp(p)
    assert r.status == simplex.OPTIMAL
    assert r.objective == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_deterministic(seed):
    rng = np.random.default_rng(seed)
    p = random_lp(rng, 12, 15, "free")
    a, b = solve_lp(p), solve_lp(p)
    assert a.status == b.status and a.iterations == b.iterations
    if a.status == simplex.OPTIMAL:
        assert a.objective == b.objective
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.basis.basic, b.basis.basic)
        assert np.array_equal(a.basis.status, b.basis.status)


@pytest.mark.parametrize("seed", range(4))
def test_weak_duality_against_witnesses(seed):
    net = generate_random([4, 6, 6, 3], seed=seed)
    bounds = interval_bounds(net)
    xs = sample_inputs(net, 300, seed=seed)
    for n in range(3):
        model = build_obbt(net, bounds, 3, n, MAXIMIZE, relax=True)
        r = solve_lp(LpProblem.from_model(model))
        best = max(model.objective_value(witness_point(model, net, x)) for x in xs)
        assert r.objective >= best - 1e-6


def test_tolerances_from_env(monkeypatch):
    monkeypatch.setenv("FEAS_TOL", "1e-8")
    monkeypatch.setenv("OPT_TOL", "1e-9")
    t = ToleranceConfig.from_env(max_iter=7)
    assert (t.feas_tol, t.opt_tol, t.max_iter) == (1e-8, 1e-9, 7)
    assert ToleranceConfig.from_env(feas_tol=1e-6).feas_tol == 1e-6
