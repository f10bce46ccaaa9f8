"""Deterministic equivalent: indexed flat models, text emission, solution files."""
from __future__ import annotations

import enum
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .expr import (Const, Domain, Expr, StageClass, Symbol, SymbolKind, add, affine_form, as_expr,
                   eliminate_common_subexpressions, evaluate, mul, print_generic, substitute,
                   symbols)
from .model import Relation, stage_of
from .problem import ValidationFailed, escape, instance_name
from .transform import (GridMismatch, GridSpec, PiecewiseGrid, apply_implicit_euler,
                        instance_symbol, linearize, parse_grid_file)

log = logging.getLogger(__name__)

DEFAULT_BOUND = 1e9


class FlattenError(Exception):
    pass


class NonlinearAfterLinearize(FlattenError):
    pass


class NonlinearModel(FlattenError):
    pass


class UnknownVariable(FlattenError, KeyError):
    pass


class MalformedLine(FlattenError, ValueError):
    pass


class LpSyntaxError(FlattenError, ValueError):
    pass


class UnknownTarget(FlattenError, KeyError):
    pass


@dataclass(frozen=True)
class FlatVar:
    name: str
    domain: Domain = Domain.REAL
    lb: float = -math.inf
    ub: float = math.inf
    init: float | None = None

    @property
    def is_integer(self) -> bool:
        return self.domain is not Domain.REAL


@dataclass(frozen=True, eq=False)
class FlatConstraint:
    """``expr REL 0`` over instance symbols."""

    name: str
    expr: Expr
    relation: Relation
    scenario: str | None = None

    @property
    def affine(self):
        cached = self.__dict__.get("_affine", False)
        if cached is False:
            cached = affine_form(self.expr)
            object.__setattr__(self, "_affine", cached)
        return cached

    @property
    def is_linear(self) -> bool:
        return self.affine is not None


class FlatModel:
    """A fully indexed algebraic program; minimization of ``objective``."""

    def __init__(self, variables: Sequence[FlatVar], constraints: Sequence[FlatConstraint],
                 objective, index_map: Mapping | None = None, name: str = "P"):
        self.variables = tuple(variables)
        self.constraints = tuple(constraints)
        self.objective = as_expr(objective)
        self.index_map = dict(index_map or {})
        self.origin = {v: k for k, v in self.index_map.items()}
        self.name = name
        self.var_index = {v.name: i for i, v in enumerate(self.variables)}
        if len(self.var_index) != len(self.variables):
            raise FlattenError("duplicate variable names")
        names = [c.name for c in self.constraints]
        if len(set(names)) != len(names):
            raise FlattenError("duplicate constraint names")

    def __repr__(self):
        return (f"<FlatModel {self.name}: {len(self.variables)} variables, "
                f"{len(self.constraints)} constraints>")

    @property
    def linear_constraints(self) -> list:
        return [c for c in self.constraints if c.is_linear]

    @property
    def nonlinear_constraints(self) -> list:
        return [c for c in self.constraints if not c.is_linear]

    @property
    def objective_affine(self):
        return affine_form(self.objective)

    @property
    def is_linear(self) -> bool:
        return not self.nonlinear_constraints and self.objective_affine is not None

    @property
    def integer_variables(self) -> list:
        return [v for v in self.variables if v.is_integer]

    def with_extra(self, variables=(), constraints=(), objective=None, bounds=None,
                   name=None) -> "FlatModel":
        """Copy with appended variables/constraints, a new objective or changed bounds."""
        vs = list(self.variables) + list(variables)
        if bounds:
            vs = [FlatVar(v.name, v.domain, *bounds[v.name], v.init) if v.name in bounds else v
                  for v in vs]
        return FlatModel(vs, list(self.constraints) + list(constraints),
                         self.objective if objective is None else objective,
                         self.index_map, name or self.name)

    def evaluate_objective(self, point: Mapping) -> float:
        return evaluate(self.objective, point)


# ---------------------------------------------------------------------------
# solutions

class Status(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iterlimit"


@dataclass
class Solution:
    status: Status
    objective: float | None = None
    values: dict = field(default_factory=dict)
    design: dict = field(default_factory=dict)
    operation: dict = field(default_factory=dict)  # symbol name -> {(s, t): value}
    gap: float | None = None
    bound: float | None = None
    nodes: int = 0
    iterations: int = 0
    missing: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # (nodes, incumbent, bound) after each node

    @property
    def ok(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.FEASIBLE)


def make_solution(m: FlatModel, status: Status, values: Mapping | None = None,
                  objective=None, **extra) -> Solution:
    values = dict(values or {})
    sol = Solution(status, objective, values, **extra)
    for name, v in values.items():
        key = m.origin.get(name)
        if key is None:
            continue
        sym, s, t = key
        if s is None:
            sol.design[sym] = v
        else:
            sol.operation.setdefault(sym, {})[(s, t)] = v
    return sol


def format_solution(sol: Solution, m: FlatModel | None = None) -> str:
    lines = [f"# status {sol.status.value}"]
    if sol.objective is not None:
        lines.append(f"# objective {_num(sol.objective)}")
    if sol.gap is not None:
        lines.append(f"# gap {_num(sol.gap)}")
    order = [v.name for v in m.variables] if m is not None else sorted(sol.values)
    for name in order:
        if name in sol.values:
            lines.append(f"{name} {_num(sol.values[name])}")
    return "\n".join(lines) + "\n"


def parse_solution(m: FlatModel, text: str, partial: bool = False) -> Solution:
    """Read ``name value`` lines; ``#`` lines carry status, objective and gap."""
    values, header = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if line.startswith("#"):
            if len(parts) == 3:
                header[parts[1]] = parts[2]
            continue
        if len(parts) != 2:
            raise MalformedLine(f"line {lineno}: expected 'name value', got {raw!r}")
        name, val = parts
        if name not in m.var_index:
            raise UnknownVariable(name)
        if name in values:
            raise MalformedLine(f"line {lineno}: duplicate entry for {name}")
        try:
            values[name] = float(val)
        except ValueError:
            raise MalformedLine(f"line {lineno}: bad number {val!r}") from None
    missing = [v.name for v in m.variables if v.name not in values]
    if missing and not partial:
        raise MalformedLine(f"solution lacks {len(missing)} variables, first {missing[0]}")
    try:
        status = Status(header.get("status", "feasible"))
    except ValueError:
        raise MalformedLine(f"unknown status {header['status']!r}") from None
    obj = float(header["objective"]) if "objective" in header else None
    gap = float(header["gap"]) if "gap" in header else None
    return make_solution(m, status, values, obj, gap=gap, missing=missing)


def write_back(p, sol: Solution):
    """Install design and operation values of a solution into a problem."""
    names = {s.name for s in p.design_variables}
    p.design.update({k: v for k, v in sol.design.items() if k in names})
    for k, vals in sol.operation.items():
        p.operation[k] = dict(vals)


# ---------------------------------------------------------------------------
# flattening

def _load_grids(linearize_spec) -> list:
    if linearize_spec is None:
        return []
    if isinstance(linearize_spec, str):
        if os.path.exists(linearize_spec):
            with open(linearize_spec) as fh:
                return parse_grid_file(fh.read())
        return parse_grid_file(linearize_spec)
    return list(linearize_spec)


class Flattener:
    """Instantiates a problem snapshot over its scenarios and time points."""

    def __init__(self, p, discretize: bool = True, linearize=None, method: str = "cc"):
        rep = p.validate()
        if not rep.ok:
            raise ValidationFailed(rep)
        self.p = p
        self.discretize = discretize
        self.method = method
        self.indexed = p.indexed_parameters()
        self.grids = _load_grids(linearize)
        self._targets = self._resolve_targets()
        self.variables: list = []
        self.index_map: dict = {}
        self._design_inst = {}
        self._op_inst = {}
        self._build_variables()
        self._placeholder_done: set = set()
        self._mappings: dict = {}
        self._extra_vars: list = []
        self._extra_cons: list = []

    # -- variables ---------------------------------------------------------
    def _bounds(self, sym):
        lb, ub = sym.lb, sym.ub
        if lb is None or ub is None:
            log.warning("variable %s has no finite bounds; using +-%g", sym.name, DEFAULT_BOUND)
        return (-DEFAULT_BOUND if lb is None else lb, DEFAULT_BOUND if ub is None else ub)

    def _build_variables(self):
        p = self.p
        for sym in p.design_variables:
            lb, ub = self._bounds(sym)
            fixed = p.fixed_value(sym.name)
            if fixed is not None:
                lb = ub = fixed
            inst = sym.renamed(escape(sym.name))
            self._design_inst[sym.name] = inst
            init = p.design.get(sym.name, sym.init)
            self.variables.append(FlatVar(inst.name, sym.domain, lb, ub, init))
            self.index_map[(sym.name, None, None)] = inst.name
        for sym in p.operational_variables:
            lb0, ub0 = self._bounds(sym)
            op = p.operation.get(sym.name, {})
            for s, t in p.index:
                lb, ub = lb0, ub0
                fixed = p.fixed_value(sym.name, s, t)
                if fixed is not None:
                    lb = ub = fixed
                inst = instance_symbol(sym, s, t)
                self._op_inst[(sym.name, s, t)] = inst
                self.variables.append(FlatVar(inst.name, sym.domain, lb, ub, op.get((s, t), sym.init)))
                self.index_map[(sym.name, s, t)] = inst.name

    # -- linearization targets ---------------------------------------------
    def _resolve_targets(self) -> list:
        out = []
        comps = {c.label: c for c in self.p.system.iter_components()}
        syms = {s.name: s for s in self.p.system.all_symbols}
        for spec in self.grids:
            label, _, ident = spec.target.rpartition(".")
            comp = comps.get(label)
            if comp is None or ident not in comp.expressions:
                raise UnknownTarget(spec.target)
            expr = comp.expressions[ident]
            stage = StageClass.FIRST
            for s in symbols(expr):
                if s.kind is SymbolKind.OPERATIONAL or s.name in self.indexed:
                    stage = StageClass.SECOND
            kind = SymbolKind.DESIGN if stage is StageClass.FIRST else SymbolKind.OPERATIONAL
            placeholder = Symbol(f"lin.{spec.target}", kind)
            out.append((spec, expr, placeholder, spec.resolve(syms)))
        return out

    def _replace_targets(self, e):
        if not self._targets:
            return e, False
        table = {expr: ph for _, expr, ph, _ in self._targets}
        new = substitute(e, table)
        return new, new is not e and new != e

    # -- instancing ----------------------------------------------------------
    def _mapping(self, s=None, t=None) -> dict:
        cached = self._mappings.get((s, t))
        if cached is not None:
            return cached
        p = self.p
        m = self._mappings[(s, t)] = {}
        for name in p.data:
            if s is None and name in self.indexed:
                continue
            try:
                m[name] = Const(p.parameter_value(name, s, t))
            except Exception:
                continue
        for name, inst in self._design_inst.items():
            m[name] = inst
        if s is not None:
            for sym in p.operational_variables:
                m[sym.name] = self._op_inst[(sym.name, s, t)]
        for spec, expr, ph, dims in self._targets:
            if ph.kind is SymbolKind.DESIGN:
                m[ph.name] = ph.renamed(escape(ph.name))
            elif s is not None:
                m[ph.name] = instance_symbol(ph, s, t)
        return m

    def _linearize_target(self, target, mapping, s=None, t=None):
        spec, expr, ph, dims = target
        inst = mapping[ph.name]
        if inst.name in self._placeholder_done:
            return
        self._placeholder_done.add(inst.name)
        e = substitute(expr, mapping)
        inst_dims = []
        for sym, bps in dims:
            isym = mapping.get(sym.name)
            if not isinstance(isym, Symbol):
                raise GridMismatch(f"[{spec.target}] {sym.name} is not a variable")
            fv = self.variables[self._var_pos[isym.name]]
            inst_dims.append((isym.renamed(isym.name, lb=fv.lb, ub=fv.ub), bps))
            if bps[0] > fv.lb + 1e-12 or bps[-1] < fv.ub - 1e-12:
                log.warning("grid for %s does not cover the bounds of %s", spec.target, isym.name)
        grid = PiecewiseGrid.sample(e, inst_dims)
        art = linearize(grid, inst.name, self.method)
        for v in art.variables:
            self._extra_vars.append(FlatVar(v.name, v.domain, v.lb, v.ub))
        for c in art.constraints:
            self._extra_cons.append(FlatConstraint(c.name, c.expr, c.relation, s))

    def _instantiate(self, name, expr, relation, s=None, t=None, touched=False):
        mapping = self._mapping(s, t)
        flat = substitute(expr, mapping)
        if touched:
            for target in self._targets:
                if target[2].name in {x.name for x in symbols(expr)}:
                    self._linearize_target(target, mapping, s, t)
            if affine_form(flat) is None:
                raise NonlinearAfterLinearize(name)
        return FlatConstraint(name, flat, relation, s)

    def _objective_terms(self, design_expr, op_expr):
        p = self.p
        design_expr, t1 = self._replace_targets(as_expr(design_expr))
        op_expr, t2 = self._replace_targets(as_expr(op_expr))
        m0 = self._mapping()
        if t1:
            for target in self._targets:
                if target[2] in symbols(design_expr):
                    self._linearize_target(target, m0)
        terms = [substitute(design_expr, m0)]
        for s in p.scenarios.ids:
            w = p.weight(s)
            for t in p.timegrid.labels(s):
                coef = w * p.step(s, t)
                if coef == 0.0:
                    continue  # zero weight or zero length: feasibility only
                mst = self._mapping(s, t)
                if t2:
                    for target in self._targets:
                        if target[2] in symbols(op_expr):
                            self._linearize_target(target, mst, s, t)
                terms.append(mul(coef, substitute(op_expr, mst)))
        return add(*terms)

    def objective(self, design_expr, op_expr) -> Expr:
        """Flatten an arbitrary two-stage objective in this model's index space."""
        n_vars, n_cons = len(self._extra_vars), len(self._extra_cons)
        obj = self._objective_terms(design_expr, op_expr)
        if len(self._extra_vars) != n_vars or len(self._extra_cons) != n_cons:
            raise FlattenError("objective introduced new linearization artifacts; "
                               "flatten it together with the model")
        return obj

    def build(self) -> FlatModel:
        p = self.p
        self._var_pos = {v.name: i for i, v in enumerate(self.variables)}
        cons = []
        second = []
        for con in p.constraints.values():
            # replace on each side: folding lhs - rhs can hide a target subtree
            lhs, t1 = self._replace_targets(con.lhs)
            rhs, t2 = self._replace_targets(con.rhs)
            expr, touched = (lhs - rhs, True) if t1 or t2 else (con.expr, False)
            if stage_of(con, self.indexed) is StageClass.FIRST and not any(
                    s.kind is SymbolKind.OPERATIONAL for s in symbols(expr)):
                cons.append(self._instantiate(con.name, expr, con.relation, touched=touched))
            else:
                second.append((con, expr, touched))
        for con, expr, touched in second:
            for s, t in p.index:
                cons.append(self._instantiate(instance_name(con.name, s, t), expr, con.relation,
                                              s, t, touched))
        if self.discretize:
            raw = {escape(s): s for s in p.scenarios.ids}
            for c in apply_implicit_euler(p):
                s = raw[c.name[c.name.rindex("[") + 1:].split(",")[0]]
                cons.append(FlatConstraint(c.name, c.expr, c.relation, s))
        obj = self._objective_terms(p.design_objective, p.operational_objective)
        variables = self.variables + self._extra_vars
        return FlatModel(variables, cons + self._extra_cons, obj, self.index_map, p.name)


def flatten(p, discretize: bool = True, linearize=None, method: str = "cc") -> FlatModel:
    """Deterministic equivalent of ``p``.

    ``linearize`` is a grid file path, grid file text or a list of
    :class:`GridSpec`; every targeted stored expression is replaced by a
    piecewise-linear surrogate encoded with ``method`` ("cc" or "mc").
    """
    return Flattener(p, discretize, linearize, method).build()


# ---------------------------------------------------------------------------
# canonical-lp text

def _num(v: float) -> str:
    v = float(v)
    if v == 0.0:
        v = 0.0
    return "%.17g" % v


def _terms(m: FlatModel, coeffs: Mapping, const: float = 0.0, with_const=False) -> str:
    order = sorted(coeffs, key=lambda n: m.var_index[n])
    parts = [f"{_num(coeffs[n])} {n}" for n in order]
    if with_const and const != 0.0:
        parts.append(_num(const))
    return " + ".join(parts) if parts else "0"


def _check_known(m, coeffs, where):
    for n in coeffs:
        if n not in m.var_index:
            raise UnknownVariable(f"{n} in {where}")


def emit_lp(m: FlatModel) -> str:
    obj = m.objective_affine
    if obj is None:
        raise NonlinearModel("objective is nonlinear")
    lines = ["\\ canonical-lp", "minimize"]
    _check_known(m, obj[0], "objective")
    lines.append(f" obj: {_terms(m, obj[0], obj[1], with_const=True)}")
    lines.append("subject to")
    for c in m.constraints:
        aff = c.affine
        if aff is None:
            raise NonlinearModel(c.name)
        _check_known(m, aff[0], c.name)
        lines.append(f" {c.name}: {_terms(m, aff[0])} {c.relation.value} {_num(-aff[1])}")
    lines.append("bounds")
    for v in m.variables:
        lines.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    gens = [v.name for v in m.variables if v.domain is Domain.INTEGER]
    bins = [v.name for v in m.variables if v.domain is Domain.BINARY]
    if gens:
        lines.append("generals")
        lines.extend(f" {n}" for n in gens)
    if bins:
        lines.append("binaries")
        lines.extend(f" {n}" for n in bins)
    lines.append("end")
    return "\n".join(lines) + "\n"


def emit_listing(m: FlatModel) -> str:
    """Expression listing with repeated subexpressions factored into definitions."""
    exprs = [m.objective] + [c.expr for c in m.constraints]
    defs, reduced = eliminate_common_subexpressions(exprs)
    lines = ["\\ expr-listing", "minimize", f" obj: {print_generic(reduced[0])}"]
    if defs:
        lines.append("definitions")
        lines.extend(f" {sym.name} := {print_generic(d)}" for sym, d in defs)
    lines.append("subject to")
    for c, e in zip(m.constraints, reduced[1:]):
        lines.append(f" {c.name}: {print_generic(e)} {c.relation.value} 0")
    lines.append("bounds")
    for v in m.variables:
        lines.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    gens = [v.name for v in m.variables if v.domain is Domain.INTEGER]
    bins = [v.name for v in m.variables if v.domain is Domain.BINARY]
    if gens:
        lines.append("generals")
        lines.extend(f" {n}" for n in gens)
    if bins:
        lines.append("binaries")
        lines.extend(f" {n}" for n in bins)
    lines.append("end")
    return "\n".join(lines) + "\n"


def emit_text(m: FlatModel, dialect: str = "canonical-lp") -> str:
    if dialect == "canonical-lp":
        return emit_lp(m)
    if dialect == "expr-listing":
        return emit_listing(m)
    raise FlattenError(f"unknown dialect {dialect!r}")


_SECTIONS = ("minimize", "subject to", "bounds", "generals", "binaries", "end")


def _parse_terms(text: str, lineno: int):
    coeffs, const = [], 0.0
    if text.strip() == "0":
        return coeffs, const
    for part in text.split(" + "):
        toks = part.split()
        try:
            if len(toks) == 2:
                coeffs.append((toks[1], float(toks[0])))
            elif len(toks) == 1:
                const += float(toks[0])
            else:
                raise ValueError
        except ValueError:
            raise LpSyntaxError(f"line {lineno}: bad term {part!r}") from None
    return coeffs, const


def parse_lp(text: str) -> FlatModel:
    """Parse canonical-lp text back into a linear :class:`FlatModel`."""
    section = None
    obj_terms, obj_const = [], 0.0
    rows, bounds = [], []
    gens, bins = set(), set()
    seen_end = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        if raw.startswith("\\") or not raw.strip():
            continue
        line = raw.strip()
        if not raw.startswith(" "):
            if line not in _SECTIONS:
                raise LpSyntaxError(f"line {lineno}: unknown section {line!r}")
            section = line
            if line == "end":
                seen_end = True
            continue
        if section == "minimize":
            if not line.startswith("obj:"):
                raise LpSyntaxError(f"line {lineno}: objective must be named 'obj'")
            obj_terms, obj_const = _parse_terms(line[4:], lineno)
        elif section == "subject to":
            name, sep, rest = line.partition(": ")
            toks = rest.rsplit(" ", 2)
            if not sep or len(toks) != 3:
                raise LpSyntaxError(f"line {lineno}: bad row {raw!r}")
            lhs, rel, rhs = toks
            try:
                relation = Relation(rel)
                rhs_v = float(rhs)
            except ValueError:
                raise LpSyntaxError(f"line {lineno}: bad relation or right-hand side") from None
            terms, _ = _parse_terms(lhs, lineno)
            rows.append((name, terms, relation, rhs_v))
        elif section == "bounds":
            toks = line.split()
            if len(toks) != 5 or toks[1] != "<=" or toks[3] != "<=":
                raise LpSyntaxError(f"line {lineno}: bad bound {raw!r}")
            bounds.append((toks[2], float(toks[0]), float(toks[4])))
        elif section == "generals":
            gens.add(line)
        elif section == "binaries":
            bins.add(line)
        else:
            raise LpSyntaxError(f"line {lineno}: content outside a section")
    if not seen_end:
        raise LpSyntaxError("missing 'end'")
    variables = []
    syms = {}
    for name, lb, ub in bounds:
        dom = Domain.BINARY if name in bins else Domain.INTEGER if name in gens else Domain.REAL
        variables.append(FlatVar(name, dom, lb, ub))
        syms[name] = Symbol(name, SymbolKind.OPERATIONAL)

    def build(terms, const):
        for n, _ in terms:
            if n not in syms:
                raise UnknownVariable(n)
        return add(*[mul(c, syms[n]) for n, c in terms], const)

    cons = [FlatConstraint(name, build(terms, -rhs), rel) for name, terms, rel, rhs in rows]
    return FlatModel(variables, cons, build(obj_terms, obj_const))
