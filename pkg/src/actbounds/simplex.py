"""Bounded-variable primal simplex.

Every row ``i`` gets a logical column ``r_i = A_i x`` whose box encodes the row
sense (``<=``: ``(-inf, rhs]``, ``>=``: ``[rhs, inf)``, ``=``: ``[rhs, rhs]``), so
the system is ``A x - r = 0`` and the all-logical basis is always a valid
start. Fixed logicals of equality rows play the role of artificials: phase 1
minimizes the total bound violation of the basic variables until they are
driven to their value, after which they can never re-enter. The same phase 1
restarts a warm basis after bound changes (branch-and-bound children).

The basis inverse is kept explicitly with product-form row updates and is
rebuilt from scratch every ``refactor_every`` pivots.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import blas

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

BASIC, AT_LB, AT_UB, FREE = 0, 1, 2, 3

_PIVOT_TOL = 1e-9


@dataclass(frozen=True)
class ToleranceConfig:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    max_iter: int = 50_000
    bland_after: int = 100
    refactor_every: int = 100

    @classmethod
    def from_env(cls, **overrides) -> ToleranceConfig:
        vals = {}
        if "FEAS_TOL" in os.environ:
            vals["feas_tol"] = float(os.environ["FEAS_TOL"])
        if "OPT_TOL" in os.environ:
            vals["opt_tol"] = float(os.environ["OPT_TOL"])
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**vals)


@dataclass
class LpProblem:
    """``optimize c.x`` s.t. ``row_lo <= A x <= row_hi``, ``lb <= x <= ub``."""

    A: np.ndarray
    row_lo: np.ndarray
    row_hi: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c: np.ndarray
    maximize: bool = True

    @classmethod
    def from_model(cls, model) -> LpProblem:
        A, senses, rhs = model.dense()
        row_lo = np.where([s in ("=", ">=") for s in senses], rhs, -np.inf) if senses else np.zeros(0)
        row_hi = np.where([s in ("=", "<=") for s in senses], rhs, np.inf) if senses else np.zeros(0)
        c = np.zeros(model.num_vars)
        for i, v in model.objective.items():
            c[i] += v
        return cls(A, np.asarray(row_lo, float), np.asarray(row_hi, float),
                   np.asarray(model.lb, float), np.asarray(model.ub, float), c,
                   maximize=(model.sense == "maximize"))

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def with_bounds(self, lb, ub) -> LpProblem:
        return LpProblem(self.A, self.row_lo, self.row_hi, lb, ub, self.c, self.maximize)

    def check(self) -> None:
        m, n = self.A.shape
        if self.lb.shape != (n,) or self.ub.shape != (n,) or self.c.shape != (n,):
            raise ValueError("column data does not match the constraint matrix")
        if self.row_lo.shape != (m,) or self.row_hi.shape != (m,):
            raise ValueError("row data does not match the constraint matrix")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.c))):
            raise ValueError("non-finite coefficient")


@dataclass
class Basis:
    """Warm-start state: basic column per row and a status per column
    (structural columns first, then one logical per row)."""

    basic: np.ndarray
    status: np.ndarray


@dataclass
class SolveResult:
    status: str
    objective: float = float("nan")
    x: np.ndarray | None = None
    iterations: int = 0
    wall_time: float = 0.0
    basis: Basis | None = field(default=None, repr=False)


def solve_lp(p: LpProblem, tol: ToleranceConfig | None = None, warm: Basis | None = None) -> SolveResult:
    tol = tol or ToleranceConfig()
    return _Simplex(p, tol).run(warm)


def fix_and_resolve(p: LpProblem, fixings, tol: ToleranceConfig | None = None,
                    warm: Basis | None = None) -> SolveResult:
    """Solve ``p`` with the listed variables fixed to values inside their box."""
    lb = p.lb.copy()
    ub = p.ub.copy()
    items = fixings.items() if isinstance(fixings, dict) else fixings
    for var, value in items:
        if not p.lb[var] - 1e-12 <= value <= p.ub[var] + 1e-12:
            raise ValueError(f"fixing x[{var}] = {value} lies outside [{p.lb[var]}, {p.ub[var]}]")
        lb[var] = ub[var] = value
    return solve_lp(p.with_bounds(lb, ub), tol, warm)


class _Simplex:
    def __init__(self, p: LpProblem, tol: ToleranceConfig):
        p.check()
        self.tol = tol
        m, n = p.A.shape
        self.m, self.n = m, n
        self.A = np.hstack([p.A, -np.eye(m)])
        self.AT = np.ascontiguousarray(self.A.T)
        self.Astruct = np.ascontiguousarray(p.A)
        self.lo = np.concatenate([p.lb, p.row_lo])
        self.hi = np.concatenate([p.ub, p.row_hi])
        sign = -1.0 if p.maximize else 1.0
        self.cost = np.concatenate([sign * p.c, np.zeros(m)])
        self.sign = sign
        self.fixed = self.lo == self.hi
        self.iterations = 0

    # -- basis bookkeeping ----------------------------------------------
    def _start(self, warm: Basis | None) -> None:
        m, n = self.m, self.n
        total = n + m
        status = np.empty(total, dtype=np.int8)
        if warm is not None and len(warm.basic) == m and len(warm.status) == total:
            self.basic = np.array(warm.basic, dtype=np.int64)
            status[:] = warm.status
        else:
            self.basic = self._crash()
            status[:] = AT_LB
            status[self.basic] = BASIC
        # re-seat nonbasic columns on a finite bound of the (possibly new) box
        for j in np.flatnonzero(status != BASIC):
            lo_fin, hi_fin = np.isfinite(self.lo[j]), np.isfinite(self.hi[j])
            if status[j] == AT_UB and hi_fin:
                continue
            if lo_fin:
                status[j] = AT_LB
            elif hi_fin:
                status[j] = AT_UB
            else:
                status[j] = FREE
        self.status = status
        self.x = np.zeros(total)
        self._refactor()

    def _crash(self) -> np.ndarray:
        """Lower-triangular starting basis: an equality row takes a free-moving
        structural column whose first nonzero lies in that row; all other rows
        keep their logical."""
        m, n = self.m, self.n
        basic = np.arange(n, n + m, dtype=np.int64)
        if m == 0 or n == 0:
            return basic
        nz = self.Astruct != 0
        has = nz.any(axis=0)
        first = np.where(has, nz.argmax(axis=0), -1)
        used = np.zeros(n, dtype=bool)
        eq_rows = np.flatnonzero(self.fixed[n:])
        for i in eq_rows:
            cand = np.flatnonzero((first == i) & ~used & ~self.fixed[:n])
            if cand.size:
                j = cand[np.argmax(np.abs(self.Astruct[i, cand]))]
                basic[i] = j
                used[j] = True
        return basic

    def _nonbasic_values(self) -> None:
        st = self.status
        self.x[st == AT_LB] = self.lo[st == AT_LB]
        self.x[st == AT_UB] = self.hi[st == AT_UB]
        self.x[st == FREE] = 0.0

    def _refactor(self) -> None:
        B = self.A[:, self.basic]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            self._repair_basis()
        self._nonbasic_values()
        nb = self.status != BASIC
        self.x[self.basic] = -self.Binv @ (self.A[:, nb] @ self.x[nb])
        self.since_refactor = 0

    def _repair_basis(self) -> None:
        # Singular basis from accumulated round-off: replace dependent columns
        # by the logicals of the rows they leave uncovered.
        B = self.A[:, self.basic]
        q, r, piv = _qr_pivot(B)
        rank = int(np.sum(np.abs(np.diag(r)) > 1e-9 * max(1.0, abs(r[0, 0]))))
        keep = set(int(self.basic[i]) for i in piv[:rank])
        new_basic = [int(b) for b in self.basic if b in keep]
        for row in range(self.m):
            if len(new_basic) == self.m:
                break
            cand = self.n + row
            if cand in keep or cand in new_basic:
                continue
            trial = np.array(new_basic + [cand])
            if np.linalg.matrix_rank(self.A[:, trial]) == len(trial):
                new_basic.append(cand)
        for b in self.basic:
            if b not in new_basic:
                self.status[b] = AT_LB if np.isfinite(self.lo[b]) else (AT_UB if np.isfinite(self.hi[b]) else FREE)
        self.basic = np.array(new_basic, dtype=np.int64)
        self.status[self.basic] = BASIC
        self.Binv = np.linalg.inv(self.A[:, self.basic])

    # -- main loop --------------------------------------------------------
    def run(self, warm: Basis | None) -> SolveResult:
        t0 = time.perf_counter()
        self._start(warm)
        tol = self.tol
        degenerate = 0
        verified = False
        while True:
            xb = self.x[self.basic]
            lob = self.lo[self.basic]
            hib = self.hi[self.basic]
            below = xb < lob - tol.feas_tol
            above = xb > hib + tol.feas_tol
            phase1 = bool(below.any() or above.any())
            if phase1:
                cb = below * -1.0 + above * 1.0
                cost = None
            else:
                cb = self.cost[self.basic]
                cost = self.cost
            y = cb @ self.Binv
            d = np.empty(self.n + self.m)
            np.matmul(y, self.Astruct, out=d[: self.n])
            d[: self.n] *= -1.0
            d[self.n:] = y
            if cost is not None:
                d += cost
            d[self.basic] = 0.0
            q = self._price(d, bland=degenerate >= tol.bland_after)
            if q < 0:
                if not verified:
                    # confirm with a fresh factorization before concluding
                    self._refactor()
                    verified = True
                    continue
                if phase1:
                    return self._result(INFEASIBLE, t0)
                return self._result(OPTIMAL, t0)
            verified = False
            if self.iterations >= tol.max_iter:
                return self._result(ITERATION_LIMIT, t0)
            direction = 1.0 if d[q] < 0 else -1.0
            alpha = self.Binv @ self.AT[q]
            step, leave, leave_to_ub = self._ratio(alpha, direction, below, above,
                                                   bland=degenerate >= tol.bland_after, q=q)
            if step == np.inf:
                if phase1:
                    # cannot happen with consistent reduced costs; refresh and retry
                    self._refactor()
                    continue
                return self._result(UNBOUNDED, t0)
            self.iterations += 1
            degenerate = degenerate + 1 if step <= 1e-12 else 0
            self.x[q] += direction * step
            self.x[self.basic] -= direction * step * alpha
            if leave < 0:
                # bound flip of the entering column
                self.status[q] = AT_UB if direction > 0 else AT_LB
                self.x[q] = self.hi[q] if direction > 0 else self.lo[q]
                continue
            out = self.basic[leave]
            self.status[out] = AT_UB if leave_to_ub else AT_LB
            self.x[out] = self.hi[out] if leave_to_ub else self.lo[out]
            self.basic[leave] = q
            self.status[q] = BASIC
            piv = alpha[leave]
            row = self.Binv[leave] / piv
            self.Binv = _dger(-1.0, alpha, row, self.Binv)
            self.Binv[leave] = row
            self.since_refactor += 1
            if self.since_refactor >= tol.refactor_every:
                self._refactor()

    def _price(self, d: np.ndarray, bland: bool) -> int:
        st = self.status
        opt = self.tol.opt_tol
        score = np.zeros_like(d)
        up = ((st == AT_LB) | (st == FREE)) & (d < -opt)
        down = ((st == AT_UB) | (st == FREE)) & (d > opt)
        score[up] = -d[up]
        score[down] = d[down]
        score[self.fixed] = 0.0
        cand = np.flatnonzero(score > 0)
        if cand.size == 0:
            return -1
        if bland:
            return int(cand[0])
        return int(cand[np.argmax(score[cand])])

    def _ratio(self, alpha, direction, below, above, bland, q):
        """Largest step for the entering column; returns (step, row, to_ub).
        ``row = -1`` means the entering column hits its own opposite bound."""
        delta = -direction * alpha  # change of basic values per unit step
        xb = self.x[self.basic]
        lob = self.lo[self.basic]
        hib = self.hi[self.basic]
        steps = np.full(self.m, np.inf)
        to_ub = np.zeros(self.m, dtype=bool)
        dec = delta < -_PIVOT_TOL
        inc = delta > _PIVOT_TOL
        # decreasing: stop at ub if currently above it, else at lb (unless already below)
        m1 = dec & above
        steps[m1] = (xb[m1] - hib[m1]) / -delta[m1]
        to_ub[m1] = True
        m2 = dec & ~above & ~below & np.isfinite(lob)
        steps[m2] = (xb[m2] - lob[m2]) / -delta[m2]
        # increasing: stop at lb if currently below it, else at ub (unless already above)
        m3 = inc & below
        steps[m3] = (lob[m3] - xb[m3]) / delta[m3]
        m4 = inc & ~below & ~above & np.isfinite(hib)
        steps[m4] = (hib[m4] - xb[m4]) / delta[m4]
        to_ub[m4] = True
        steps = np.maximum(steps, 0.0)
        own = self.hi[q] - self.lo[q]
        best = steps.min() if self.m else np.inf
        if own <= best:
            return own, -1, False
        if best == np.inf:
            return np.inf, -1, False
        ties = np.flatnonzero(steps <= best + 1e-12)
        if bland:
            pick = ties[np.argmin(self.basic[ties])]
        else:
            pick = ties[np.argmax(np.abs(alpha[ties]))]
        return float(steps[pick]), int(pick), bool(to_ub[pick])

    def _result(self, status: str, t0: float) -> SolveResult:
        x = self.x[: self.n].copy()
        obj = float(self.sign * (self.cost[: self.n] @ x)) if status == OPTIMAL else float("nan")
        basis = Basis(self.basic.copy(), self.status.copy())
        return SolveResult(status, obj, x if status == OPTIMAL else None, self.iterations,
                           time.perf_counter() - t0, basis)


def _dger(a, x, y, M):
    # M += a * outer(x, y) in place; dger wants Fortran order, so work on M.T
    out = blas.dger(a, y, x, a=M.T, overwrite_a=True)
    return out.T


def _qr_pivot(B):
    from scipy.linalg import qr

    return qr(B, pivoting=True)
