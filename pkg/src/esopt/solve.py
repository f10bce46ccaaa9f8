"""Desk-scale solvers: bounded dense simplex, best-bound branch and bound, feasibility checks."""
from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .expr import DomainError, evaluate
from .flatten import FlatModel, Solution, Status, make_solution
from .model import Relation

log = logging.getLogger(__name__)


class SolverError(Exception):
    pass


class NotLinear(SolverError):
    pass


class IterLimit(SolverError):
    pass


class NodeLimit(SolverError):
    pass


class MissingValue(SolverError, KeyError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    rel_gap: float = 1e-6
    abs_gap: float = 1e-9
    max_iter: int = 50_000
    max_nodes: int = 20_000
    time_limit: float = 300.0
    feas_tol: float = 1e-8
    int_tol: float = 1e-6
    bland_after: int = 100

    def __post_init__(self):
        for name in ("rel_gap", "abs_gap", "feas_tol", "int_tol", "time_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.max_nodes < 1:
            raise ValueError("iteration and node limits must be positive")


# ---------------------------------------------------------------------------
# standard form

@dataclass
class _Standard:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n: int  # structural columns
    const: float


def _standard_form(m: FlatModel) -> _Standard:
    if not m.is_linear:
        raise NotLinear(m.name)
    n = len(m.variables)
    rows, rhs, slacks = [], [], []
    for con in m.constraints:
        coeffs, const = con.affine
        row = np.zeros(n)
        for name, a in coeffs.items():
            row[m.var_index[name]] += a
        rows.append(row)
        rhs.append(-const)
        slacks.append({Relation.LE: 1.0, Relation.GE: -1.0}.get(con.relation, 0.0))
    k = sum(1 for s in slacks if s)
    A = np.zeros((len(rows), n + k))
    col = n
    for i, row in enumerate(rows):
        A[i, :n] = row
        if slacks[i]:
            A[i, col] = slacks[i]
            col += 1
    oc, oconst = m.objective_affine
    c = np.zeros(n + k)
    for name, a in oc.items():
        c[m.var_index[name]] += a
    lb = np.array([v.lb for v in m.variables] + [0.0] * k, dtype=float)
    ub = np.array([v.ub for v in m.variables] + [math.inf] * k, dtype=float)
    return _Standard(A, np.array(rhs, dtype=float), c, lb, ub, n, oconst)


@dataclass
class _LpResult:
    status: Status
    x: np.ndarray | None = None
    objective: float | None = None
    bound: float | None = None
    iterations: int = 0


class _Simplex:
    """Primal simplex on a dense tableau with nonbasic variables at either bound."""

    PIV_TOL = 1e-9
    COST_TOL = 1e-9

    def __init__(self, A, b, c, lb, ub, opts: SolverOptions, deadline: float, slack_from=None):
        self.A, self.b, self.c = A, b, c
        self.slack_from = A.shape[1] if slack_from is None else slack_from
        self.lb, self.ub = lb, ub
        self.opts = opts
        self.deadline = deadline
        self.iterations = 0

    def _initial_values(self):
        x = np.where(np.isfinite(self.lb), self.lb, np.where(np.isfinite(self.ub), self.ub, 0.0))
        return x.astype(float)

    def _basic_values(self):
        nb = self.nonbasic
        return self.T[:, -1] - self.T[:, nb] @ self.x[nb]

    def _set_basic(self, r, j):
        self.is_basic[self.basis[r]] = False
        self.is_basic[j] = True
        self.basis[r] = j
        self.nonbasic = np.flatnonzero(~self.is_basic)

    def _iterate(self, cost) -> Status:
        degenerate, bland = 0, False
        ncols = self.T.shape[1] - 1
        while True:
            if self.iterations >= self.opts.max_iter:
                return Status.ITER_LIMIT
            if time.monotonic() > self.deadline:
                return Status.ITER_LIMIT
            xb = self._basic_values()
            self.x[self.basis] = xb
            d = cost[:ncols] - cost[self.basis] @ self.T[:, :ncols]
            d[self.basis] = 0.0
            up = (d < -self.COST_TOL) & (self.x[:ncols] < self.ub_all[:ncols] - 1e-12)
            down = (d > self.COST_TOL) & (self.x[:ncols] > self.lb_all[:ncols] + 1e-12)
            cand = np.flatnonzero(up | down)
            if cand.size == 0:
                return Status.OPTIMAL
            j = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            sigma = 1.0 if d[j] < 0 else -1.0
            alpha = sigma * self.T[:, j]
            lbB, ubB = self.lb_all[self.basis], self.ub_all[self.basis]
            ratios = np.full(len(alpha), math.inf)
            pos = alpha > self.PIV_TOL
            neg = alpha < -self.PIV_TOL
            with np.errstate(invalid="ignore"):
                ratios[pos] = (xb[pos] - lbB[pos]) / alpha[pos]
                ratios[neg] = (ubB[neg] - xb[neg]) / (-alpha[neg])
            ratios = np.where(np.isnan(ratios), math.inf, np.maximum(ratios, 0.0))
            flip = self.ub_all[j] - self.lb_all[j]
            theta_r = ratios.min() if ratios.size else math.inf
            if not math.isfinite(min(theta_r, flip)):
                return Status.UNBOUNDED
            self.iterations += 1
            if flip <= theta_r:
                self.x[j] = self.ub_all[j] if sigma > 0 else self.lb_all[j]
                degenerate = 0
                continue
            ties = np.flatnonzero(ratios <= theta_r + 1e-12)
            if bland:
                r = int(min(ties, key=lambda i: self.basis[i]))
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])
            leaving = self.basis[r]
            self.x[leaving] = lbB[r] if alpha[r] > 0 else ubB[r]
            self.x[j] += sigma * theta_r
            self._pivot(r, j)
            if theta_r <= 1e-12:
                degenerate += 1
                if degenerate >= self.opts.bland_after and not bland:
                    log.debug("switching to Bland's rule after %d degenerate pivots", degenerate)
                    bland = True
            else:
                degenerate = 0

    def _pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        rows = np.flatnonzero(col)
        if rows.size:
            T[rows] -= np.outer(col[rows], T[r])
        self._set_basic(r, j)

    def solve(self) -> _LpResult:
        A, b = self.A, self.b
        m, n = A.shape
        if np.any(self.lb > self.ub):
            return _LpResult(Status.INFEASIBLE)
        x = self._initial_values()
        r = b - A @ x if m else np.zeros(0)
        sgn = np.where(r >= 0, 1.0, -1.0)
        self.T = np.hstack([A * sgn[:, None], np.eye(m), (b * sgn)[:, None]])
        self.x = np.concatenate([x, np.abs(r)])
        self.lb_all = np.concatenate([self.lb, np.zeros(m)])
        self.ub_all = np.concatenate([self.ub, np.full(m, math.inf)])
        self.basis = np.arange(n, n + m)
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.is_basic[n:] = True
        self.nonbasic = np.arange(n)
        # rows whose slack can absorb the residual start from the slack instead of an artificial
        for i in range(m):
            nz = np.flatnonzero(A[i, self.slack_from:n])
            if nz.size != 1 or r[i] == 0.0:
                continue
            j = self.slack_from + int(nz[0])
            if A[i, j] * sgn[i] > 0 and np.count_nonzero(A[:, j]) == 1:
                self.x[j] = abs(r[i]) / abs(A[i, j])
                self.x[n + i] = 0.0
                self.T[i] /= self.T[i, j]
                self._set_basic(i, j)
        cost1 = np.concatenate([np.zeros(n), np.ones(m)])
        st = self._iterate(cost1)
        if st is Status.ITER_LIMIT:
            return _LpResult(st, iterations=self.iterations)
        infeas = float(self.x[n:].sum())
        scale = max(1.0, float(np.abs(b).max()) if m else 1.0)
        if infeas > self.opts.feas_tol * scale:
            return _LpResult(Status.INFEASIBLE, iterations=self.iterations)
        # drive artificials out of the basis, dropping redundant rows
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if self.basis[i] < n:
                continue
            row = self.T[i, :n]
            cand = [j for j in np.flatnonzero(np.abs(row) > 1e-9) if not self.is_basic[j]]
            if cand:
                j = max(cand, key=lambda k: abs(row[k]))
                self._pivot(i, j)
            else:
                keep[i] = False
        self.T = np.hstack([self.T[keep][:, :n], self.T[keep][:, -1:]])
        self.basis = self.basis[keep]
        self.x = self.x[:n]
        self.lb_all, self.ub_all = self.lb, self.ub
        self.is_basic = self.is_basic[:n].copy()
        self.nonbasic = np.flatnonzero(~self.is_basic)
        self.A_red, self.b_red = A[keep], b[keep]
        st = self._iterate(self.c)
        if st is not Status.OPTIMAL:
            return _LpResult(st, iterations=self.iterations)
        self.x[self.basis] = self._basic_values()
        self.x = np.clip(self.x, self.lb, self.ub)  # round-off can leave basics just outside
        obj = float(self.c @ self.x)
        return _LpResult(Status.OPTIMAL, self.x.copy(), obj, self._dual_bound(), self.iterations)

    def _dual_bound(self):
        """Lagrangian bound ``y b + sum_j min (c_j - y A_j) x_j`` over the box."""
        B = self.A_red[:, self.basis]
        if B.size == 0:
            d = self.c
            y_b = 0.0
        else:
            try:
                y = np.linalg.solve(B.T, self.c[self.basis])
            except np.linalg.LinAlgError:
                return None
            d = self.c - y @ self.A_red
            y_b = float(y @ self.b_red)
        total = y_b
        for dj, l, u in zip(d, self.lb, self.ub):
            if dj > 0:
                total += dj * l
            elif dj < 0:
                total += dj * u
        return total if math.isfinite(total) else -math.inf


def _solve_standard(sf: _Standard, lb, ub, opts, deadline) -> _LpResult:
    return _Simplex(sf.A, sf.b, sf.c, lb, ub, opts, deadline, sf.n).solve()


def solve_lp(m: FlatModel, opts: SolverOptions | None = None) -> Solution:
    """Solve a linear model; integrality restrictions are ignored."""
    opts = opts or SolverOptions()
    sf = _standard_form(m)
    res = _solve_standard(sf, sf.lb, sf.ub, opts, time.monotonic() + opts.time_limit)
    log.info("lp %s: %s after %d iterations", m.name, res.status.value, res.iterations)
    if res.status is not Status.OPTIMAL:
        return make_solution(m, res.status, iterations=res.iterations)
    values = {v.name: float(res.x[i]) for i, v in enumerate(m.variables)}
    bound = None if res.bound is None else res.bound + sf.const
    return make_solution(m, Status.OPTIMAL, values, res.objective + sf.const,
                         bound=bound, gap=0.0, iterations=res.iterations)


def solve_milp(m: FlatModel, opts: SolverOptions | None = None) -> Solution:
    """Best-bound branch and bound on the most fractional variable, down branch first."""
    opts = opts or SolverOptions()
    sf = _standard_form(m)
    ints = [i for i, v in enumerate(m.variables) if v.is_integer]
    deadline = time.monotonic() + opts.time_limit
    lb0, ub0 = sf.lb.copy(), sf.ub.copy()
    for i in ints:
        lb0[i] = math.ceil(lb0[i] - opts.int_tol) if math.isfinite(lb0[i]) else lb0[i]
        ub0[i] = math.floor(ub0[i] + opts.int_tol) if math.isfinite(ub0[i]) else ub0[i]
    heap = [(-math.inf, 0, lb0, ub0)]
    counter = 1
    incumbent, inc_obj = None, math.inf
    nodes = iterations = 0
    trace = []
    status = Status.OPTIMAL

    def tol(v):
        return max(opts.rel_gap * abs(v), opts.abs_gap)

    best_bound = -math.inf
    while heap:
        bound, _, lb, ub = heap[0]
        best_bound = bound
        if incumbent is not None and bound >= inc_obj - tol(inc_obj):
            break
        if nodes >= opts.max_nodes or time.monotonic() > deadline:
            status = Status.FEASIBLE if incumbent is not None else Status.ITER_LIMIT
            log.info("milp %s: node limit reached", m.name)
            break
        heapq.heappop(heap)
        nodes += 1
        res = _solve_standard(sf, lb, ub, opts, deadline)
        iterations += res.iterations
        if res.status is Status.UNBOUNDED:
            if nodes == 1:
                return make_solution(m, Status.UNBOUNDED, nodes=nodes, iterations=iterations)
            continue
        if res.status is not Status.OPTIMAL:
            if res.status is Status.ITER_LIMIT:
                status = Status.ITER_LIMIT
            continue
        obj = res.objective
        if incumbent is not None and obj >= inc_obj - tol(inc_obj):
            continue
        branch, best_dist = None, math.inf
        for i in ints:
            f = res.x[i] - math.floor(res.x[i])
            if f <= opts.int_tol or f >= 1 - opts.int_tol:
                continue
            dist = abs(f - 0.5)
            if dist < best_dist - 1e-12:
                branch, best_dist = i, dist
        if branch is None:
            incumbent, inc_obj = _round_integers(res.x, ints, sf), obj
            log.info("milp %s: node %d incumbent %.10g", m.name, nodes, inc_obj)
        else:
            xv = res.x[branch]
            ub_down = ub.copy()
            ub_down[branch] = math.floor(xv)
            lb_up = lb.copy()
            lb_up[branch] = math.ceil(xv)
            heapq.heappush(heap, (obj, counter, lb, ub_down))
            heapq.heappush(heap, (obj, counter + 1, lb_up, ub))
            counter += 2
        lowest = heap[0][0] if heap else inc_obj
        trace.append((nodes, inc_obj, min(lowest, inc_obj)))
        log.debug("milp %s: node %d bound %.10g incumbent %.10g", m.name, nodes, lowest, inc_obj)
    if incumbent is None:
        st = Status.INFEASIBLE if status is Status.OPTIMAL else Status.ITER_LIMIT
        return make_solution(m, st, nodes=nodes, iterations=iterations, trace=trace)
    bound = min(best_bound, inc_obj) if heap else inc_obj
    values = {v.name: float(incumbent[i]) for i, v in enumerate(m.variables)}
    return make_solution(m, status, values, inc_obj + sf.const, bound=bound + sf.const,
                         gap=inc_obj - bound, nodes=nodes, iterations=iterations, trace=trace)


def _round_integers(x, ints, sf):
    """Snap integer variables when doing so keeps every row satisfied."""
    y = x.copy()
    for i in ints:
        y[i] = round(y[i])
    r_old = np.abs(sf.A @ x - sf.b).max() if sf.b.size else 0.0
    r_new = np.abs(sf.A @ y - sf.b).max() if sf.b.size else 0.0
    return y if r_new <= max(r_old, 1e-9) else x


def solve(m: FlatModel, opts: SolverOptions | None = None) -> Solution:
    if not m.is_linear:
        raise NotLinear(m.name)
    if m.integer_variables:
        return solve_milp(m, opts)
    return solve_lp(m, opts)


# ---------------------------------------------------------------------------
# feasibility

@dataclass(frozen=True)
class Residual:
    name: str
    kind: str  # "row", "bound" or "integrality"
    value: float  # signed residual; positive beyond the feasible side for rows
    violation: float
    note: str = ""


@dataclass
class FeasibilityReport:
    residuals: list
    objective: float | None
    feas_tol: float
    max_violation: float = field(init=False)

    def __post_init__(self):
        self.max_violation = max((r.violation for r in self.residuals), default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.feas_tol

    @property
    def violations(self) -> list:
        return sorted((r for r in self.residuals if r.violation > self.feas_tol),
                      key=lambda r: (-r.violation, r.name))

    def text(self, all_rows: bool = False) -> str:
        """Summary plus one line per violation (per row and bound with ``all_rows``)."""
        lines = [f"max violation {self.max_violation:.6g} (tolerance {self.feas_tol:g}): "
                 + ("pass" if self.ok else "fail")]
        if self.objective is not None:
            lines.append(f"objective {self.objective:.12g}")
        shown = self.residuals if all_rows else self.violations
        for r in shown:
            flag = "VIOLATED " if r.violation > self.feas_tol else ""
            lines.append(f"  {flag}{r.kind} {r.name}: residual {r.value:+.6g}"
                         + (f" ({r.note})" if r.note else ""))
        return "\n".join(lines)


def check_feasibility(m: FlatModel, point: Mapping, feas_tol: float = 1e-8) -> FeasibilityReport:
    """Evaluate every row, bound and integrality restriction at ``point``."""
    missing = [v.name for v in m.variables if v.name not in point]
    if missing:
        raise MissingValue(f"{len(missing)} variables without value, first {missing[0]}")
    vals = {v.name: float(point[v.name]) for v in m.variables}
    out = []
    for c in m.constraints:
        note = ""
        try:
            aff = c.affine
            if aff is not None:
                e = aff[1] + sum(a * vals[n] for n, a in aff[0].items())
            else:
                e = evaluate(c.expr, vals)
        except DomainError as err:
            e, note = math.nan, str(err)
        if math.isnan(e):
            viol = math.inf
        elif c.relation is Relation.LE:
            viol = max(0.0, e)
        elif c.relation is Relation.GE:
            viol = max(0.0, -e)
        else:
            viol = abs(e)
        out.append(Residual(c.name, "row", e, viol, note))
    for v in m.variables:
        x = vals[v.name]
        if x < v.lb:
            out.append(Residual(v.name, "bound", x - v.lb, v.lb - x, "below lower bound"))
        elif x > v.ub:
            out.append(Residual(v.name, "bound", x - v.ub, x - v.ub, "above upper bound"))
        if v.is_integer and abs(x - round(x)) > 0:
            out.append(Residual(v.name, "integrality", x - round(x), abs(x - round(x))))
    try:
        obj = evaluate(m.objective, vals)
    except DomainError:
        obj = None
    return FeasibilityReport(out, obj, feas_tol)
