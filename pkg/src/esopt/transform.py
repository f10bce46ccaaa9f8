"""Reformulations: implicit Euler, piecewise-linear MIP encodings, max smoothing, tanh rewrite."""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .expr import (Const, Domain, Expr, Func, Symbol, SymbolKind, add, as_expr, evaluate,
                   exp, map_nodes, mul, power, symbols)
from .model import Relation, RelationalConstraint
from .problem import instance_name


class TransformError(Exception):
    pass


class MissingInitial(TransformError):
    pass


class MissingStep(TransformError):
    pass


class UnboundedVariable(TransformError):
    pass


class GridMismatch(TransformError):
    pass


class NonPositiveEps(TransformError, ValueError):
    pass


class GridFileError(TransformError):
    pass


# ---------------------------------------------------------------------------
# implicit Euler

def instance_symbol(sym: Symbol, s, t) -> Symbol:
    return sym.renamed(instance_name(sym.name, s, t))


def apply_implicit_euler(p) -> list:
    """State links ``y[s,t] == y[s,t-1] + dt[s,t] * ydot[s,t]`` for every scenario.

    The predecessor of the first point is the initial value; scenarios are
    never linked to each other.
    """
    out = []
    for decl in p.states.values():
        if decl.initial is None:
            raise MissingInitial(decl.state.name)
        for s in p.scenarios.ids:
            labels = p.timegrid.labels(s)
            if not labels:
                raise MissingStep(f"scenario {s!r} has no time points")
            try:
                prev = Const(p.parameter_value(decl.initial.name, s, labels[0]))
            except Exception as err:
                raise MissingInitial(f"{decl.state.name}: {err}") from None
            for t in labels:
                dt = p.step(s, t)
                if dt is None or not math.isfinite(dt):
                    raise MissingStep(f"{s},{t}")
                y = instance_symbol(decl.state, s, t)
                ydot = instance_symbol(decl.derivative, s, t)
                name = f"{instance_name(decl.state.name + '_euler', s, t)}"
                out.append(RelationalConstraint(name, y, Relation.EQ, add(prev, mul(dt, ydot))))
                prev = y
    return out


# ---------------------------------------------------------------------------
# piecewise-linear grids

@dataclass(frozen=True)
class PiecewiseGrid:
    """Breakpoints per dimension and the function sampled at every vertex."""

    dims: tuple  # ((Symbol, (bp0, bp1, ...)), ...)
    values: Mapping  # vertex index tuple -> value

    def __post_init__(self):
        if not self.dims:
            raise GridMismatch("grid needs at least one dimension")
        for sym, bps in self.dims:
            if len(bps) < 2:
                raise GridMismatch(f"{sym.name}: at least two breakpoints required")
            if any(b >= a for a, b in zip(bps[1:], bps[:-1])):
                raise GridMismatch(f"{sym.name}: breakpoints must increase strictly")
        for v in self.vertices():
            val = self.values.get(v)
            if val is None or not math.isfinite(val):
                raise GridMismatch(f"non-finite value at vertex {v}")

    @classmethod
    def sample(cls, fn_or_expr, dims: Sequence) -> "PiecewiseGrid":
        """Sample an expression (over the dim symbols only) or a callable at every vertex."""
        dims = tuple((sym, tuple(float(b) for b in bps)) for sym, bps in dims)
        if isinstance(fn_or_expr, Expr) or isinstance(fn_or_expr, (int, float)):
            e = as_expr(fn_or_expr)
            names = {sym.name for sym, _ in dims}
            extra = [s.name for s in symbols(e) if s.name not in names]
            if extra:
                raise GridMismatch(f"expression depends on symbols outside the grid: {extra}")

            def fn(*xs):
                return evaluate(e, {sym.name: x for (sym, _), x in zip(dims, xs)})
        else:
            fn = fn_or_expr
        shape = [range(len(bps)) for _, bps in dims]
        values = {}
        for v in itertools.product(*shape):
            values[v] = float(fn(*(bps[i] for (_, bps), i in zip(dims, v))))
        return cls(dims, values)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def symbols(self) -> list:
        return [sym for sym, _ in self.dims]

    def vertices(self):
        return itertools.product(*[range(len(bps)) for _, bps in self.dims])

    def point(self, v) -> tuple:
        return tuple(bps[i] for (_, bps), i in zip(self.dims, v))

    def simplices(self) -> list:
        """Kuhn triangulation: cells in lexicographic order, then permutations."""
        out = []
        cells = itertools.product(*[range(len(bps) - 1) for _, bps in self.dims])
        for cell in cells:
            for perm in itertools.permutations(range(self.ndim)):
                v = list(cell)
                verts = [tuple(v)]
                for k in perm:
                    v[k] += 1
                    verts.append(tuple(v))
                out.append((cell, perm, tuple(verts)))
        return out

    def interpolate(self, x: Sequence) -> float:
        """Piecewise-linear interpolant on the Kuhn triangulation (lower cell wins ties)."""
        cell, u = [], []
        for (sym, bps), xi in zip(self.dims, x):
            if xi < bps[0] - 1e-12 or xi > bps[-1] + 1e-12:
                raise GridMismatch(f"{sym.name}={xi} outside grid")
            k = 0
            while k < len(bps) - 2 and xi > bps[k + 1]:
                k += 1
            cell.append(k)
            u.append(min(max((xi - bps[k]) / (bps[k + 1] - bps[k]), 0.0), 1.0))
        perm = sorted(range(self.ndim), key=lambda i: (-u[i], i))
        v = list(cell)
        val = self.values[tuple(v)]
        for k in perm:
            prev = self.values[tuple(v)]
            v[k] += 1
            val += (self.values[tuple(v)] - prev) * u[k]
        return val


def uniform_grid(fn_or_expr, syms: Sequence[Symbol], n: int = 5,
                 bounds: Mapping | None = None) -> PiecewiseGrid:
    """Grid with ``n`` equidistant breakpoints per symbol between its bounds."""
    dims = []
    for sym in syms:
        lo, hi = (bounds or {}).get(sym.name, (sym.lb, sym.ub))
        if lo is None or hi is None:
            raise UnboundedVariable(sym.name)
        if n < 2 or hi <= lo:
            raise GridMismatch(f"{sym.name}: cannot build {n} breakpoints on [{lo}, {hi}]")
        dims.append((sym, tuple(lo + (hi - lo) * i / (n - 1) for i in range(n))))
    return PiecewiseGrid.sample(fn_or_expr, dims)


@dataclass
class LinearizationArtifacts:
    surrogate: Symbol
    aux_continuous: list = field(default_factory=list)
    aux_binary: list = field(default_factory=list)
    constraints: list = field(default_factory=list)

    @property
    def variables(self) -> list:
        return [self.surrogate] + self.aux_continuous + self.aux_binary


def _aux_kind(grid) -> SymbolKind:
    if any(s.kind is SymbolKind.OPERATIONAL for s in grid.symbols):
        return SymbolKind.OPERATIONAL
    return SymbolKind.DESIGN


def _check_hull(grid):
    for sym, bps in grid.dims:
        if sym.lb is None or sym.ub is None:
            raise UnboundedVariable(sym.name)


def _surrogate(grid, name, kind):
    vals = list(grid.values.values())
    return Symbol(name, kind, Domain.REAL, min(vals), max(vals))


def linearize_convex_combination(grid: PiecewiseGrid, surrogate: str,
                                 namer: Callable[[str], str] | None = None) -> LinearizationArtifacts:
    """Vertex weights over the whole grid, one selector binary per simplex."""
    _check_hull(grid)
    namer = namer or (lambda tag: f"{surrogate}.{tag}")
    kind = _aux_kind(grid)
    art = LinearizationArtifacts(_surrogate(grid, surrogate, kind))
    verts = list(grid.vertices())
    lam = {}
    for v in verts:
        sym = Symbol(namer("lam" + "_".join(map(str, v))), kind, Domain.REAL, 0.0, 1.0)
        lam[v] = sym
        art.aux_continuous.append(sym)
    cons = art.constraints
    cons.append(RelationalConstraint(namer("convex"), add(*lam.values()), Relation.EQ, Const(1.0)))
    for d, (sym, _) in enumerate(grid.dims):
        rhs = add(*[mul(grid.point(v)[d], lam[v]) for v in verts])
        cons.append(RelationalConstraint(namer(f"x{d}"), sym, Relation.EQ, rhs))
    fval = add(*[mul(grid.values[v], lam[v]) for v in verts])
    cons.append(RelationalConstraint(namer("f"), art.surrogate, Relation.EQ, fval))
    simplices = grid.simplices()
    if len(simplices) > 1:
        z = []
        for k, _ in enumerate(simplices):
            sym = Symbol(namer(f"z{k}"), kind, Domain.BINARY, 0.0, 1.0)
            z.append(sym)
            art.aux_binary.append(sym)
        cons.append(RelationalConstraint(namer("select"), add(*z), Relation.EQ, Const(1.0)))
        owners = {v: [] for v in verts}
        for k, (_, _, sv) in enumerate(simplices):
            for v in sv:
                owners[v].append(z[k])
        for v in verts:
            name = namer("support" + "_".join(map(str, v)))
            cons.append(RelationalConstraint(name, lam[v], Relation.LE, add(*owners[v])))
    return art


def _simplex_affine(grid, cell, perm, verts):
    """Coefficients ``a`` and offset ``b`` of the interpolant on one Kuhn simplex."""
    lo = [grid.dims[d][1][cell[d]] for d in range(grid.ndim)]
    h = [grid.dims[d][1][cell[d] + 1] - lo[d] for d in range(grid.ndim)]
    a = [0.0] * grid.ndim
    for k, d in enumerate(perm):
        a[d] = (grid.values[verts[k + 1]] - grid.values[verts[k]]) / h[d]
    b = grid.values[verts[0]] - sum(ai * li for ai, li in zip(a, lo))
    return a, b, lo, h


def linearize_multiple_choice(grid: PiecewiseGrid, surrogate: str,
                              namer: Callable[[str], str] | None = None) -> LinearizationArtifacts:
    """One binary and one copy of the inputs per simplex; the active copy carries the point."""
    _check_hull(grid)
    namer = namer or (lambda tag: f"{surrogate}.{tag}")
    kind = _aux_kind(grid)
    art = LinearizationArtifacts(_surrogate(grid, surrogate, kind))
    cons = art.constraints
    simplices = grid.simplices()
    xs = grid.symbols
    if len(simplices) == 1:
        cell, perm, verts = simplices[0]
        a, b, _, _ = _simplex_affine(grid, cell, perm, verts)
        rhs = add(b, *[mul(ai, x) for ai, x in zip(a, xs)])
        cons.append(RelationalConstraint(namer("f"), art.surrogate, Relation.EQ, rhs))
        return art
    delta, copies, fterms = [], [], []
    for k, (cell, perm, verts) in enumerate(simplices):
        dk = Symbol(namer(f"d{k}"), kind, Domain.BINARY, 0.0, 1.0)
        delta.append(dk)
        art.aux_binary.append(dk)
        a, b, lo, h = _simplex_affine(grid, cell, perm, verts)
        xk = []
        for d, sym in enumerate(xs):
            c = Symbol(namer(f"x{d}_{k}"), kind, Domain.REAL, min(0.0, lo[d]), max(0.0, lo[d] + h[d]))
            xk.append(c)
            art.aux_continuous.append(c)
        copies.append(xk)
        # u_d = (x_d - lo_d * delta) / h_d must satisfy 1*delta >= u_p1 >= ... >= u_pn >= 0
        u = [mul(1.0 / h[d], add(xk[d], mul(-lo[d], dk))) for d in range(grid.ndim)]
        cons.append(RelationalConstraint(namer(f"top{k}"), u[perm[0]], Relation.LE, dk))
        for j in range(grid.ndim - 1):
            cons.append(RelationalConstraint(namer(f"order{k}_{j}"), u[perm[j]], Relation.GE,
                                             u[perm[j + 1]]))
        cons.append(RelationalConstraint(namer(f"bottom{k}"), u[perm[-1]], Relation.GE, Const(0.0)))
        fterms.append(add(mul(b, dk), *[mul(ai, c) for ai, c in zip(a, xk)]))
    cons.append(RelationalConstraint(namer("select"), add(*delta), Relation.EQ, Const(1.0)))
    for d, sym in enumerate(xs):
        cons.append(RelationalConstraint(namer(f"x{d}"), sym, Relation.EQ,
                                         add(*[xk[d] for xk in copies])))
    cons.append(RelationalConstraint(namer("f"), art.surrogate, Relation.EQ, add(*fterms)))
    return art


METHODS = {"cc": linearize_convex_combination, "mc": linearize_multiple_choice}


def linearize(grid: PiecewiseGrid, surrogate: str, method: str = "cc", namer=None):
    try:
        return METHODS[method](grid, surrogate, namer)
    except KeyError:
        raise TransformError(f"unknown linearization method {method!r}") from None


# ---------------------------------------------------------------------------
# smoothing and tanh

def smooth_max(a, b, eps: float = 1e-4) -> Expr:
    """``0.5 * (a + b + ((a - b + eps)**2)**0.5)``."""
    if not eps > 0:
        raise NonPositiveEps(eps)
    a, b = as_expr(a), as_expr(b)
    return mul(0.5, add(a, b, power(power(add(a, mul(-1.0, b), eps), 2.0), 0.5)))


def smooth_nonsmooth_max(e, eps: float = 1e-4) -> Expr:
    """Replace every two-argument ``max`` node by :func:`smooth_max`."""
    def fn(node, kids):
        if isinstance(node, Func) and node.tag == "max" and len(kids) == 2:
            return smooth_max(kids[0], kids[1], eps)
        return None
    return map_nodes(as_expr(e), fn)


def reformulate_tanh(e) -> Expr:
    """Rewrite ``tanh(x)`` as ``1 - 2/(exp(2x) + 1)``."""
    def fn(node, kids):
        if isinstance(node, Func) and node.tag == "tanh":
            return add(1.0, mul(-2.0, power(add(exp(mul(2.0, kids[0])), 1.0), -1.0)))
        return None
    return map_nodes(as_expr(e), fn)


# ---------------------------------------------------------------------------
# grid specification files

_HEADER = re.compile(r"^\[(?P<target>[^\]\s]+)\]$")
_LINE = re.compile(r"^(?P<var>\S+)\s*=\s*(?P<rest>.+)$")


@dataclass(frozen=True)
class GridSpec:
    """Breakpoints per variable for one linearization target ``label.expression_id``."""

    target: str
    breakpoints: tuple  # ((var name, (bp...) | ("uniform", n)), ...)

    def resolve(self, syms_by_name: Mapping) -> list:
        dims = []
        for name, spec in self.breakpoints:
            sym = syms_by_name.get(name)
            if sym is None:
                raise GridFileError(f"[{self.target}] unknown variable {name!r}")
            if spec and spec[0] == "uniform":
                n = spec[1]
                if sym.lb is None or sym.ub is None:
                    raise UnboundedVariable(name)
                dims.append((sym, tuple(sym.lb + (sym.ub - sym.lb) * i / (n - 1) for i in range(n))))
            else:
                dims.append((sym, spec))
        return dims


def parse_grid_file(text: str) -> list:
    """Parse blocks of the form::

        [HP.investment]
        HP.Q_nom = 0 100 200 400
        HP.T = uniform 5
    """
    specs, target, rows = [], None, []

    def close():
        if target is not None:
            if not rows:
                raise GridFileError(f"[{target}] has no breakpoint lines")
            specs.append(GridSpec(target, tuple(rows)))

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            close()
            target, rows = m["target"], []
            continue
        m = _LINE.match(line)
        if not m or target is None:
            raise GridFileError(f"line {lineno}: cannot parse {raw!r}")
        parts = m["rest"].split()
        if parts[0] == "uniform":
            if len(parts) != 2 or not parts[1].isdigit() or int(parts[1]) < 2:
                raise GridFileError(f"line {lineno}: expected 'uniform <n>' with n >= 2")
            rows.append((m["var"], ("uniform", int(parts[1]))))
        else:
            try:
                bps = tuple(float(x) for x in parts)
            except ValueError:
                raise GridFileError(f"line {lineno}: bad breakpoint list") from None
            if len(bps) < 2 or any(b <= a for a, b in zip(bps, bps[1:])):
                raise GridFileError(f"line {lineno}: need >= 2 strictly increasing breakpoints")
            rows.append((m["var"], bps))
    close()
    return specs


def format_grid_file(specs: Sequence[GridSpec]) -> str:
    lines = []
    for spec in specs:
        lines.append(f"[{spec.target}]")
        for name, bps in spec.breakpoints:
            if bps and bps[0] == "uniform":
                lines.append(f"{name} = uniform {bps[1]}")
            else:
                lines.append(f"{name} = " + " ".join(repr(float(b)) for b in bps))
        lines.append("")
    return "\n".join(lines)
