"""User-level algorithms: augmented epsilon-constraint sweeps, k-means aggregation, binary fixing."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import Const, Domain, Expr, StageClass, Symbol, SymbolKind, add, as_expr, classify_stage, mul
from .flatten import FlatConstraint, FlatVar, Flattener, Solution, Status
from .model import Relation
from .solve import SolverOptions, check_feasibility, solve

log = logging.getLogger(__name__)


class AlgorithmError(Exception):
    pass


class SubproblemInfeasible(AlgorithmError):
    pass


class SolverFailure(AlgorithmError):
    pass


class BadK(AlgorithmError, ValueError):
    pass


class MissingBinaryValue(AlgorithmError, KeyError):
    pass


class NotBinary(AlgorithmError, ValueError):
    pass


# ---------------------------------------------------------------------------
# augmented epsilon-constraint

@dataclass
class ParetoPoint:
    objective_a: float
    objective_b: float
    design: dict
    status: Status
    epsilon: float | None = None


def _objective_pair(obj):
    """Accept ``(design_expr, operational_expr)`` or a single expression."""
    if isinstance(obj, tuple):
        return as_expr(obj[0]), as_expr(obj[1])
    e = as_expr(obj)
    if classify_stage(e) is StageClass.FIRST:
        return e, Const(0.0)
    return Const(0.0), e


def _run(model, opts, what):
    sol = solve(model, opts)
    if sol.status is Status.INFEASIBLE:
        raise SubproblemInfeasible(what)
    if not sol.ok:
        raise SolverFailure(f"{what}: {sol.status.value}")
    return sol


def _value(expr, sol):
    from .expr import evaluate
    return evaluate(expr, sol.values)


def non_dominated(points: Sequence[ParetoPoint], tol: float = 1e-9) -> list:
    """Drop points weakly dominated by another point and duplicates."""
    out = []
    for i, p in enumerate(points):
        dominated = False
        for j, q in enumerate(points):
            if i == j:
                continue
            le = q.objective_a <= p.objective_a + tol and q.objective_b <= p.objective_b + tol
            lt = q.objective_a < p.objective_a - tol or q.objective_b < p.objective_b - tol
            same = abs(q.objective_a - p.objective_a) <= tol and abs(q.objective_b - p.objective_b) <= tol
            if le and (lt or (same and j < i)):
                dominated = True
                break
        if not dominated:
            out.append(p)
    return out


def epsilon_constraint_pareto(p, obj_a, obj_b, n_points: int = 8,
                              opts: SolverOptions | None = None, discretize: bool = True,
                              linearize=None, method: str = "cc") -> list:
    """Pareto points minimizing ``obj_a`` under a sweep of upper limits on ``obj_b``.

    Each subproblem solves ``min a - rho * s`` with ``b + s == eps``, ``s >= 0``
    and ``rho = 1e-3 * range(a) / range(b)``.  Points come back ordered by
    decreasing ``eps`` and filtered to a non-dominated set.
    """
    if n_points < 2:
        raise AlgorithmError("n_points must be at least 2")
    opts = opts or SolverOptions()
    fl = Flattener(p, discretize, linearize, method)
    base = fl.build()
    fa = fl.objective(*_objective_pair(obj_a))
    fb = fl.objective(*_objective_pair(obj_b))

    def lexi(first, second, tag):
        s1 = _run(base.with_extra(objective=first), opts, f"min {tag}")
        v1 = _value(first, s1)
        # pin at the optimum; loosen slightly only if rounding makes that infeasible
        caps = (v1, v1 + max(1e-7 * abs(v1), 1e-9))
        for cap in caps:
            row = FlatConstraint(f"lex.{tag}", add(first, -cap), Relation.LE)
            try:
                return _run(base.with_extra(constraints=[row], objective=second), opts, f"lex {tag}")
            except SubproblemInfeasible:
                if cap is caps[-1]:
                    raise

    sa = lexi(fa, fb, "a")
    sb = lexi(fb, fa, "b")
    a_min, b_max = _value(fa, sa), _value(fb, sa)
    a_max, b_min = _value(fa, sb), _value(fb, sb)
    pts = [ParetoPoint(a_min, b_max, dict(sa.design), sa.status, b_max)]
    range_a, range_b = a_max - a_min, b_max - b_min
    if range_b <= 1e-9 * max(1.0, abs(b_max)):
        return non_dominated(pts)
    rho = 1e-3 * max(abs(range_a), 1e-12) / range_b
    slack = Symbol("eps.slack", SymbolKind.DESIGN)
    for k in range(1, n_points - 1):
        eps = b_max - k * range_b / (n_points - 1)
        row = FlatConstraint("eps.bound", add(fb, slack, -eps), Relation.EQ)
        model = base.with_extra([FlatVar(slack.name, Domain.REAL, 0.0, range_b)], [row],
                                add(fa, mul(-rho, slack)))
        try:
            sol = _run(model, opts, f"eps={eps:g}")
        except SubproblemInfeasible:
            log.warning("epsilon subproblem %g infeasible; skipped", eps)
            continue
        pts.append(ParetoPoint(_value(fa, sol), _value(fb, sol), dict(sol.design), sol.status, eps))
    pts.append(ParetoPoint(a_max, b_min, dict(sb.design), sb.status, b_min))
    return non_dominated(pts)


def pareto_csv(points: Sequence[ParetoPoint]) -> str:
    names = sorted({k for pt in points for k in pt.design})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["objective_a", "objective_b"] + names)
    for pt in points:
        w.writerow([repr(pt.objective_a), repr(pt.objective_b)]
                   + [repr(pt.design.get(n, math.nan)) for n in names])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# k-means

@dataclass
class ClusterResult:
    centers: np.ndarray
    weights: np.ndarray
    assignment: np.ndarray  # cluster index per kept point
    sse_history: list = field(default_factory=list)
    iterations: int = 0
    kept: np.ndarray | None = None  # row indices of the input that were clustered

    @property
    def sse(self) -> float:
        return self.sse_history[-1] if self.sse_history else 0.0


def _sse(X, centers, assign) -> float:
    return float(((X - centers[assign]) ** 2).sum())


def _assign(X, centers):
    d = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1)  # ties go to the lowest cluster index


def kmeans_cluster(points, k: int, seed: int = 0, max_iter: int = 300,
                   keep_max: int | None = None, drop_zero: int | None = None) -> ClusterResult:
    """Lloyd iterations from farthest-point seeding.

    ``drop_zero`` names a feature column; rows with zero in it are removed.
    ``keep_max`` names a feature column whose maximum row becomes its own
    fixed cluster, counted in ``k``.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    kept = np.arange(len(X))
    if drop_zero is not None:
        kept = kept[X[:, drop_zero] != 0.0]
        X = X[kept]
    n = len(X)
    n_distinct = len({tuple(r) for r in X})
    if k < 1 or k > n_distinct:
        raise BadK(f"k={k} with {n_distinct} distinct points")
    fixed = None
    if keep_max is not None:
        fixed = int(np.argmax(X[:, keep_max]))
        if k == 1:
            raise BadK("keep_max needs k >= 2")
    rng = np.random.default_rng(seed)
    free = np.array([i for i in range(n) if i != fixed])
    Xf = X[free]
    kf = k - (fixed is not None)
    if kf > len({tuple(r) for r in Xf}):
        raise BadK(f"k={k} too large once the maximum point is set aside")
    first = int(rng.integers(len(Xf)))
    centers = [Xf[first]]
    dist = ((Xf - centers[0]) ** 2).sum(axis=1)
    while len(centers) < kf:
        nxt = int(np.argmax(dist))
        centers.append(Xf[nxt])
        dist = np.minimum(dist, ((Xf - Xf[nxt]) ** 2).sum(axis=1))
    C = np.array(centers)
    assign = _assign(Xf, C)
    history = [_sse(Xf, C, assign)]
    it = 0
    for it in range(1, max_iter + 1):
        newC = C.copy()
        for j in range(kf):
            members = Xf[assign == j]
            if len(members):
                newC[j] = members.mean(axis=0)
        C = newC
        history.append(_sse(Xf, C, assign))
        new_assign = _assign(Xf, C)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        history.append(_sse(Xf, C, assign))
    counts = np.bincount(assign, minlength=kf).astype(float)
    full_assign = np.empty(n, dtype=int)
    full_assign[free] = assign
    if fixed is not None:
        C = np.vstack([C, X[fixed]])
        counts = np.append(counts, 1.0)
        full_assign[fixed] = kf
    weights = counts / counts.sum()
    return ClusterResult(C, weights, full_assign, history, it, kept)


def cluster_csv(res: ClusterResult, columns: Sequence[str] | None = None) -> str:
    d = res.centers.shape[1]
    columns = list(columns or [f"x{i}" for i in range(d)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cluster"] + columns + ["weight"])
    for j, (c, wt) in enumerate(zip(res.centers, res.weights)):
        w.writerow([j] + [repr(float(x)) for x in c] + [repr(float(wt))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# fix binaries and correct

def binary_symbols(p, names=None) -> list:
    syms = [s for s in p.design_variables + p.operational_variables if s.domain is Domain.BINARY]
    if names is None:
        return syms
    chosen = []
    for n in names:
        s = p.symbol(n)
        if s.domain is not Domain.BINARY:
            raise NotBinary(n)
        chosen.append(s)
    return chosen


def fix_and_correct(p, sol: Solution, names=None):
    """Copy of ``p`` with binaries pinned to ``sol`` and all values installed as start point."""
    q = p.copy()
    q.fixed = dict(q.fixed)
    for sym in binary_symbols(p, names):
        if sym.kind is SymbolKind.DESIGN:
            if sym.name not in sol.design:
                raise MissingBinaryValue(sym.name)
            q.fix(sym.name, round(sol.design[sym.name]))
        else:
            vals = sol.operation.get(sym.name, {})
            for s, t in p.index:
                if (s, t) not in vals:
                    raise MissingBinaryValue(f"{sym.name}[{s},{t}]")
                q.fix(sym.name, round(vals[(s, t)]), s, t)
    names_d = {s.name for s in p.design_variables}
    q.design.update({k: v for k, v in sol.design.items() if k in names_d})
    for k, vals in sol.operation.items():
        q.operation[k] = dict(vals)
    return q


def propagate_definitions(m, point: dict, rounds: int = 3) -> dict:
    """Recompute variables defined by equalities ``v == f(others)``.

    Only rows whose normalized form is ``v - f`` with ``v`` free of ``f``
    are used; this moves a linearized point back onto nonlinear identities
    such as investment cost curves.
    """
    from .expr import DomainError, Product, Sum, evaluate, symbols as syms_of
    point = dict(point)
    fixed = {v.name for v in m.variables if v.lb == v.ub}
    bounds = {v.name: (v.lb, v.ub) for v in m.variables}
    for _ in range(rounds):
        changed = False
        for c in m.nonlinear_constraints:
            if c.relation is not Relation.EQ or not isinstance(c.expr, Sum):
                continue
            for term in c.expr.args:
                if not isinstance(term, Symbol) or term.name in fixed:
                    continue
                rest = add(*[a for a in c.expr.args if a is not term])
                if term in syms_of(rest):
                    continue
                try:
                    v = -evaluate(rest, point)
                except DomainError:
                    continue
                lo, hi = bounds[term.name]
                if lo <= v <= hi and abs(point[term.name] - v) > 0:
                    point[term.name] = v
                    changed = True
                break
        if not changed:
            break
    return point


def verify_fixed(p_fixed, sol: Solution, feas_tol: float = 1e-6, discretize: bool = True,
                 correct: bool = True):
    """Check a (linearized) solution against the nonlinear model of ``p_fixed``."""
    from .flatten import flatten
    m = flatten(p_fixed, discretize=discretize)
    point = {v.name: sol.values.get(v.name, v.init if v.init is not None else 0.0)
             for v in m.variables}
    if correct:
        point = {v.name: min(max(point[v.name], v.lb), v.ub) for v in m.variables}
        point = propagate_definitions(m, point)
    return check_feasibility(m, point, feas_tol), point
