"""Shared builders and independent oracles for the test suite."""
import itertools
import math
import random

import numpy as np
import pytest

from esopt import expr as ex
from esopt.expr import Domain, Symbol, SymbolKind
from esopt.flatten import FlatConstraint, FlatModel, FlatVar
from esopt.model import Component, Relation
from esopt.problem import Problem

OP = SymbolKind.OPERATIONAL
DES = SymbolKind.DESIGN


# ---------------------------------------------------------------------------
# random expression trees and a naive interpreter

def random_tree(rng, syms, depth, smooth=False):
    """Random tree that stays in-domain for values of the symbols in [0.5, 2]."""
    if depth <= 0 or rng.random() < 0.2:
        if rng.random() < 0.4:
            return ex.Const(round(rng.uniform(-3, 3), 3))
        return rng.choice(syms)
    kids = lambda: random_tree(rng, syms, depth - 1, smooth)
    choice = rng.randrange(9 if smooth else 11)
    if choice in (0, 1):
        return ex.add(kids(), kids())
    if choice in (2, 3):
        return ex.mul(kids(), kids())
    if choice == 4:
        return ex.tanh(kids())
    if choice == 5:
        return ex.exp(ex.tanh(kids()))
    if choice == 6:
        return ex.log(ex.add(2.0, ex.tanh(kids())))
    if choice == 7:
        return ex.power(ex.add(1.5, ex.tanh(kids())), rng.choice([2, 3, 0.5, -1]))
    if choice == 8:
        return ex.sqrt(ex.add(1.0, ex.power(kids(), 2)))
    if choice == 9:
        return ex.emax(kids(), kids())
    return ex.eabs(kids())


def naive_eval(e, env):
    """Recursive interpreter written against the node classes only."""
    if isinstance(e, ex.Const):
        return e.value
    if isinstance(e, Symbol):
        return env[e.name]
    vals = [naive_eval(c, env) for c in e.children]
    if isinstance(e, ex.Sum):
        return math.fsum(vals)
    if isinstance(e, ex.Product):
        return math.prod(vals)
    if isinstance(e, ex.Power):
        return vals[0] ** vals[1]
    fns = {"exp": math.exp, "log": math.log, "tanh": math.tanh, "sqrt": math.sqrt,
           "abs": abs, "min": min, "max": max}
    return fns[e.tag](*vals)


def repeated_subtree_count(exprs):
    """CSE oracle keyed by printed strings.

    A compound subtree counts when it sits under two or more child slots of
    distinct parent subtrees, or is itself a root.  Children of a repeated
    subtree are only counted once because the parent is deduplicated.
    """
    parents = {}
    occurrences = {}

    def walk(node):
        key = ex.print_generic(node)
        if key in parents:
            return key
        parents[key] = [walk(c) for c in node.children if c.children]
        return key

    for e in exprs:
        if e.children:
            root = walk(e)
            occurrences[root] = occurrences.get(root, 0) + 1
    for kids in parents.values():
        for k in kids:
            occurrences[k] = occurrences.get(k, 0) + 1
    return sum(1 for c in occurrences.values() if c >= 2)


# ---------------------------------------------------------------------------
# small flat models

def flat_lp(c, A, b, lb, ub, rel=None, integer=()):
    """``min c x  s.t.  A x REL b`` as a FlatModel with variables x0..x(n-1)."""
    n = len(c)
    syms = [Symbol(f"x{i}", DES) for i in range(n)]
    rel = rel or [Relation.LE] * len(b)
    rows = []
    for i, (row, bi, r) in enumerate(zip(A, b, rel)):
        rows.append(FlatConstraint(f"r{i}", ex.add(*[ex.mul(a, s) for a, s in zip(row, syms)], -bi), r))
    vars_ = [FlatVar(s.name, Domain.INTEGER if i in integer else Domain.REAL, lo, hi)
             for i, (s, lo, hi) in enumerate(zip(syms, lb, ub))]
    obj = ex.add(*[ex.mul(ci, s) for ci, s in zip(c, syms)])
    return FlatModel(vars_, rows, obj)


def vertex_enumeration(c, A, b, lb, ub):
    """Minimum of ``c x`` over all basic feasible points of ``A x <= b, lb <= x <= ub``."""
    n = len(c)
    G = np.vstack([np.asarray(A, float), np.eye(n), -np.eye(n)])
    h = np.concatenate([np.asarray(b, float), np.asarray(ub, float), -np.asarray(lb, float)])
    best = math.inf
    for rows in itertools.combinations(range(len(h)), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = min(best, float(np.dot(c, x)))
    return best


def model_from_linearization(grid, art, fixed=None, objective=None):
    """Flat model holding a grid's variables plus linearization artifacts."""
    vars_ = []
    for sym, bps in grid.dims:
        lo, hi = bps[0], bps[-1]
        if fixed and sym.name in fixed:
            lo = hi = fixed[sym.name]
        vars_.append(FlatVar(sym.name, sym.domain, lo, hi))
    for s in art.variables:
        vars_.append(FlatVar(s.name, s.domain, s.lb, s.ub))
    rows = [FlatConstraint(c.name, c.expr, c.relation) for c in art.constraints]
    return FlatModel(vars_, rows, objective if objective is not None else art.surrogate)


# ---------------------------------------------------------------------------
# problems

def toy_problem(weights=None):
    """One design capacity, one dispatch variable, demand over 2 scenarios x 3 steps."""
    c = Component("C")
    x = c.make_design_variable("x", bounds=(0, 10))
    y = c.make_operational_variable("y", bounds=(0, 5))
    d = c.make_parameter("d")
    c.add_le_constraint(y, x, "cap")
    c.add_expression("investment_costs", 2 * x)
    c.add_expression("variable_costs", 3 * y)
    demand = {("a", "1"): 1, ("a", "2"): 2, ("a", "3"): 3,
              ("b", "1"): 4, ("b", "2"): 0, ("b", "3"): 0}
    c.add_ge_constraint(y, d, "meet")
    weights = weights or {"a": 1.0, "b": 0.5}
    demand = {k: v for k, v in demand.items() if k[0] in weights}
    return Problem(c, 2 * x, 3 * y, timesteps=(["1", "2", "3"], 3.0),
                   scenarios=weights, data={"C.d": demand})


def decay_problem(dt, horizon=1.0, tau=1.0):
    """dE/dt = -E/tau from E(0)=1 on a uniform grid."""
    c = Component("S")
    c.make_state("E", lambda e: -e / tau, initial=1.0, bounds=(0, 2))
    n = round(horizon / dt)
    return Problem(c, 0, 0, timesteps=([str(i + 1) for i in range(n)], horizon),
                   scenarios={"s": 1.0})


@pytest.fixture
def rng():
    return random.Random(1234)
