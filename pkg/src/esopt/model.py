"""Component models: symbols, constraints, stored expressions, states and connectors."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

from .expr import (Const, Domain, Expr, StageClass, Symbol, SymbolKind, as_expr,
                   classify_stage, symbols)

SEP = "."


class ModelError(Exception):
    pass


class DuplicateName(ModelError):
    pass


class UnknownId(ModelError, KeyError):
    pass


class BadBounds(ModelError, ValueError):
    pass


class AlreadyState(ModelError):
    pass


class ForeignSymbol(ModelError):
    pass


class Relation(enum.Enum):
    LE = "<="
    EQ = "=="
    GE = ">="

    @classmethod
    def parse(cls, value) -> "Relation":
        if isinstance(value, Relation):
            return value
        aliases = {"<=": cls.LE, "≤": cls.LE, "=": cls.EQ, "==": cls.EQ,
                   ">=": cls.GE, "≥": cls.GE}
        try:
            return aliases[value]
        except KeyError:
            raise ValueError(f"unknown relation {value!r}") from None


class Polarity(enum.Enum):
    INPUT = "input"
    OUTPUT = "output"
    BIDIRECTIONAL = "bidirectional"


@dataclass(frozen=True, eq=False)
class RelationalConstraint:
    name: str
    lhs: Expr
    relation: Relation
    rhs: Expr

    @property
    def expr(self) -> Expr:
        """Normalized form ``lhs - rhs`` (compared against zero)."""
        return self.lhs - self.rhs

    @property
    def stage(self) -> StageClass:
        return stage_of(self)

    def symbols(self) -> list:
        return symbols([self.lhs, self.rhs])

    def __str__(self):
        return f"{self.name}: {self.lhs} {self.relation.value} {self.rhs}"


def stage_of(con: RelationalConstraint, indexed=()) -> StageClass:
    if (classify_stage(con.lhs, indexed) is StageClass.FIRST
            and classify_stage(con.rhs, indexed) is StageClass.FIRST):
        return StageClass.FIRST
    return StageClass.SECOND


@dataclass(frozen=True, eq=False)
class StateDeclaration:
    state: Symbol
    derivative: Symbol
    rhs: Expr
    initial: Symbol | None
    constraint: str


@dataclass(frozen=True, eq=False)
class Connector:
    id: str
    expr: Expr
    polarity: Polarity
    owner: "Component"

    @property
    def qualified(self) -> str:
        return f"{self.owner.label}{SEP}{self.id}"


def _check_bounds(name, bounds):
    if bounds is None:
        return None, None
    lo, hi = bounds
    lo = None if lo is None or lo == float("-inf") else float(lo)
    hi = None if hi is None or hi == float("inf") else float(hi)
    if lo is not None and hi is not None and lo > hi:
        raise BadBounds(f"{name}: lower bound {lo} exceeds upper bound {hi}")
    return lo, hi


class Component:
    """A named bag of symbols, constraints, expressions, states and connectors.

    Every symbol and constraint created through a component carries the
    component label as prefix, so ``Component("B").make_parameter("eta")``
    yields the symbol ``B.eta``.
    """

    def __init__(self, label: str):
        if not label or any(ch in label for ch in " \t\n[],:"):
            raise ModelError(f"invalid component label {label!r}")
        self.label = label
        self.parameters: list[Symbol] = []
        self.design_variables: list[Symbol] = []
        self.operational_variables: list[Symbol] = []
        self.defaults: dict[str, float] = {}
        self.constraints: dict[str, RelationalConstraint] = {}
        self.expressions: dict[str, Expr] = {}
        self.states: dict[str, StateDeclaration] = {}
        self.connectors: dict[str, Connector] = {}
        self._names: set[str] = set()
        self.frozen = False

    def __repr__(self):
        return f"<{type(self).__name__} {self.label}>"

    # -- helpers ----------------------------------------------------------
    def _qualify(self, name: str) -> str:
        return f"{self.label}{SEP}{name}"

    def _claim(self, name: str) -> str:
        if self.frozen:
            raise ModelError(f"{self.label} is frozen")
        q = self._qualify(name)
        if q in self._names:
            raise DuplicateName(q)
        self._names.add(q)
        return q

    def freeze(self):
        self.frozen = True
        return self

    # -- symbols ----------------------------------------------------------
    def make_parameter(self, name: str, value: float | None = None) -> Symbol:
        sym = Symbol(self._claim(name), SymbolKind.PARAMETER)
        self.parameters.append(sym)
        if value is not None:
            self.defaults[sym.name] = float(value)
        return sym

    def _make_variable(self, kind, name, bounds, domain, init):
        domain = Domain(domain) if not isinstance(domain, Domain) else domain
        lo, hi = _check_bounds(self._qualify(name), bounds)
        q = self._claim(name)
        sym = Symbol(q, kind, domain, lo, hi, init)
        (self.design_variables if kind is SymbolKind.DESIGN
         else self.operational_variables).append(sym)
        return sym

    def make_design_variable(self, name: str, bounds=None, domain=Domain.REAL,
                             init: float | None = None) -> Symbol:
        return self._make_variable(SymbolKind.DESIGN, name, bounds, domain, init)

    def make_operational_variable(self, name: str, bounds=None, domain=Domain.REAL,
                                  init: float | None = None) -> Symbol:
        return self._make_variable(SymbolKind.OPERATIONAL, name, bounds, domain, init)

    # -- constraints and expressions --------------------------------------
    def add_constraint(self, name: str, lhs, relation, rhs=0.0) -> RelationalConstraint:
        q = self._claim(name)
        con = RelationalConstraint(q, as_expr(lhs), Relation.parse(relation), as_expr(rhs))
        self.constraints[q] = con
        return con

    def add_le_constraint(self, lhs, rhs, name: str):
        return self.add_constraint(name, lhs, Relation.LE, rhs)

    def add_eq_constraint(self, lhs, rhs, name: str):
        return self.add_constraint(name, lhs, Relation.EQ, rhs)

    def add_ge_constraint(self, lhs, rhs, name: str):
        return self.add_constraint(name, lhs, Relation.GE, rhs)

    def add_expression(self, identifier: str, expr) -> Expr:
        if self.frozen:
            raise ModelError(f"{self.label} is frozen")
        if identifier in self.expressions:
            raise DuplicateName(self._qualify(identifier))
        self.expressions[identifier] = as_expr(expr)
        return self.expressions[identifier]

    def get_expression(self, identifier: str, default=None) -> Expr:
        try:
            return self.expressions[identifier]
        except KeyError:
            if default is not None:
                return as_expr(default)
            raise UnknownId(f"{self.label} has no expression {identifier!r}") from None

    # -- differential states ----------------------------------------------
    def declare_state(self, state: Symbol, rhs, initial=None, der_bounds=None,
                      der_init: float | None = None) -> StateDeclaration:
        if state not in self.operational_variables:
            raise ForeignSymbol(f"{state.name} is not an operational variable of {self.label}")
        if state.name in self.states:
            raise AlreadyState(state.name)
        local = state.name[len(self.label) + 1:]
        der = self.make_operational_variable(f"{local}_dot", der_bounds, init=der_init)
        if initial is None:
            init_sym = None
        elif isinstance(initial, Symbol):
            if initial.kind is not SymbolKind.PARAMETER:
                raise ModelError("initial state must be a literal or a parameter")
            init_sym = initial
        else:
            init_sym = self.make_parameter(f"{local}_init", float(initial))
        con = self.add_constraint(f"{local}_dynamics", der, Relation.EQ, rhs)
        decl = StateDeclaration(state, der, as_expr(rhs), init_sym, con.name)
        self.states[state.name] = decl
        return decl

    def make_state(self, name: str, rhs: Expr | Callable, initial=None, bounds=None,
                   der_bounds=None, domain=Domain.REAL, init=None) -> StateDeclaration:
        """Create an operational variable and declare it a state.

        ``rhs`` may be a callable receiving the new state symbol, for right
        hand sides that depend on the state itself.
        """
        state = self.make_operational_variable(name, bounds, domain, init)
        if callable(rhs) and not isinstance(rhs, Expr):
            rhs = rhs(state)
        return self.declare_state(state, rhs, initial, der_bounds)

    # -- connectors --------------------------------------------------------
    def add_connector(self, identifier: str, expr, polarity=Polarity.BIDIRECTIONAL) -> Connector:
        if self.frozen:
            raise ModelError(f"{self.label} is frozen")
        if identifier in self.connectors:
            raise DuplicateName(self._qualify(identifier))
        polarity = Polarity(polarity)
        expr = as_expr(expr)
        if polarity is Polarity.INPUT:
            self.add_constraint(f"{identifier}_input", expr, Relation.GE, 0.0)
        elif polarity is Polarity.OUTPUT:
            self.add_constraint(f"{identifier}_output", expr, Relation.LE, 0.0)
        con = Connector(identifier, expr, polarity, self)
        self.connectors[identifier] = con
        return con

    def add_input(self, identifier, expr):
        return self.add_connector(identifier, expr, Polarity.INPUT)

    def add_output(self, identifier, expr):
        """Output connectors carry nonpositive expressions, so pass ``-flow``."""
        return self.add_connector(identifier, expr, Polarity.OUTPUT)

    def __getitem__(self, identifier) -> Connector:
        try:
            return self.connectors[identifier]
        except KeyError:
            raise UnknownId(f"{self.label} has no connector {identifier!r}") from None

    # -- views used by systems and problems -------------------------------
    def iter_components(self):
        yield self

    @property
    def all_symbols(self) -> list:
        return self.parameters + self.design_variables + self.operational_variables

    def all_constraints(self) -> dict:
        return dict(self.constraints)

    def all_states(self) -> dict:
        return dict(self.states)

    def all_defaults(self) -> dict:
        return dict(self.defaults)


ZERO = Const(0.0)
