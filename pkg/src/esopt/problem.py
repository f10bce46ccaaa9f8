"""Two-stage problems: scenarios, time grids, parameter data and variable values."""
from __future__ import annotations

import copy
import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence
from urllib.parse import quote

from .expr import (Domain, Expr, StageClass, Symbol, SymbolKind, as_expr,
                   classify_stage, evaluate, substitute, symbols)
from .model import stage_of


class ProblemError(Exception):
    pass


class StageMismatch(ProblemError):
    pass


class MissingData(ProblemError):
    pass


class ShapeMismatch(ProblemError, ValueError):
    pass


class UnknownSymbol(ProblemError, KeyError):
    pass


class ValidationFailed(ProblemError):
    def __init__(self, report):
        super().__init__("problem validation failed:\n" + report.text())
        self.report = report


def escape(label) -> str:
    return quote(str(label), safe="._~")


def instance_name(name: str, scenario, timepoint) -> str:
    """Name of an operational-variable instance, e.g. ``HP.Q[winter,t1]``."""
    return f"{escape(name)}[{escape(scenario)},{escape(timepoint)}]"


@dataclass(frozen=True)
class ScenarioSet:
    entries: tuple  # ((scenario_id, weight), ...)

    def __post_init__(self):
        ids = [s for s, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ProblemError(f"duplicate scenario ids: {ids}")
        for s, w in self.entries:
            if not (w >= 0 and math.isfinite(w)):
                raise ProblemError(f"scenario {s!r} has invalid weight {w}")

    @classmethod
    def from_spec(cls, spec) -> "ScenarioSet":
        """``None``, a list of ids (equal weights 1/M), a mapping id->weight or (id, w) pairs."""
        if spec is None:
            return cls((("nominal", 1.0),))
        if isinstance(spec, ScenarioSet):
            return spec
        if isinstance(spec, Mapping):
            return cls(tuple((str(k), float(v)) for k, v in spec.items()))
        spec = list(spec)
        if spec and all(isinstance(x, tuple) for x in spec):
            return cls(tuple((str(k), float(v)) for k, v in spec))
        if not spec:
            return cls(())
        return cls(tuple((str(k), 1.0 / len(spec)) for k in spec))

    @property
    def ids(self) -> list:
        return [s for s, _ in self.entries]

    def weight(self, s) -> float:
        return dict(self.entries)[s]

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class TimeGrid:
    steps: Mapping  # scenario -> ((label, length), ...)

    @staticmethod
    def _one(spec) -> tuple:
        if spec is None:
            return (("t", 1.0),)
        if isinstance(spec, Mapping):
            out = tuple((str(k), float(v)) for k, v in spec.items())
        else:
            labels, horizon = spec
            labels = [str(x) for x in labels]
            if not labels:
                raise ProblemError("empty time grid")
            dt = float(horizon) / len(labels)
            out = tuple((lab, dt) for lab in labels)
        for lab, dt in out:
            if not (dt >= 0 and math.isfinite(dt)):
                raise ProblemError(f"time point {lab!r} has invalid length {dt}")
        if len({lab for lab, _ in out}) != len(out):
            raise ProblemError("duplicate time point labels")
        return out

    @classmethod
    def from_spec(cls, spec, scenario_ids: Sequence) -> "TimeGrid":
        """A single grid shared by all scenarios, or a mapping scenario -> grid.

        A grid is an ordered mapping label -> step length, or ``(labels, T)``
        for equidistant steps of length ``T/len(labels)``.
        """
        if isinstance(spec, TimeGrid):
            return spec
        per_scenario = (isinstance(spec, Mapping) and spec
                        and set(map(str, spec)) == set(scenario_ids)
                        and all(not isinstance(v, (int, float)) for v in spec.values()))
        if per_scenario:
            return cls({str(s): cls._one(v) for s, v in spec.items()})
        grid = cls._one(spec)
        return cls({s: grid for s in scenario_ids})

    def labels(self, s) -> list:
        return [lab for lab, _ in self.steps[s]]

    def length(self, s, t) -> float:
        return dict(self.steps[s])[t]

    def horizon(self, s) -> float:
        return math.fsum(dt for _, dt in self.steps[s])


@dataclass
class Issue:
    severity: str  # "error" or "warning"
    category: str
    symbol: str
    detail: str = ""

    def __str__(self):
        return f"{self.severity}: {self.category} {self.symbol} {self.detail}".rstrip()


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    @property
    def errors(self):
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self):
        return [i for i in self.issues if i.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def by_category(self, category):
        return [i for i in self.issues if i.category == category]

    def text(self) -> str:
        return "\n".join(str(i) for i in self.issues) or "ok"


@dataclass(frozen=True)
class SymbolUniverse:
    design: tuple
    operational: tuple  # ((name, scenario, timepoint), ...)

    def __len__(self):
        return len(self.design) + len(self.operational)


class Problem:
    """A two-stage problem over a frozen system.

    The objective is ``F_I + sum_s w_s * integral(F_II)``; the integral is
    realized as a right-endpoint sum ``sum_t dt[s,t] * F_II[s,t]``.
    """

    def __init__(self, system, design_objective=0.0, operational_objective=0.0,
                 timesteps=None, scenarios=None, data=None, name="P"):
        self.system = system.freeze()
        self.name = name
        self.design_objective = as_expr(design_objective)
        self.operational_objective = as_expr(operational_objective)
        if classify_stage(self.design_objective) is not StageClass.FIRST:
            bad = [s.name for s in symbols(self.design_objective)
                   if s.kind is SymbolKind.OPERATIONAL]
            raise StageMismatch(f"design objective contains operational symbols {bad}")
        self.scenarios = ScenarioSet.from_spec(scenarios)
        self.timegrid = TimeGrid.from_spec(timesteps, self.scenarios.ids)
        self._symbols = {s.name: s for s in system.all_symbols}
        self.data: dict = {}
        for k, v in system.all_defaults().items():
            self.data[k] = v
        self.design: dict = {}
        self.operation: dict = {}
        self.fixed: dict = {}  # name -> scalar or {(s, t): value}
        for k, v in (data or {}).items():
            self.set_data(k, v)
        for s in self._symbols.values():
            if s.kind is SymbolKind.DESIGN and s.init is not None:
                self.design[s.name] = s.init

    # -- structure ------------------------------------------------------------
    @property
    def index(self) -> list:
        return [(s, t) for s in self.scenarios.ids for t in self.timegrid.labels(s)]

    def weight(self, s) -> float:
        return self.scenarios.weight(s)

    def step(self, s, t) -> float:
        return self.timegrid.length(s, t)

    def symbol(self, ref) -> Symbol:
        name = ref.name if isinstance(ref, Symbol) else ref
        try:
            return self._symbols[name]
        except KeyError:
            raise UnknownSymbol(name) from None

    @property
    def parameters(self):
        return [s for s in self._symbols.values() if s.kind is SymbolKind.PARAMETER]

    @property
    def design_variables(self):
        return [s for s in self._symbols.values() if s.kind is SymbolKind.DESIGN]

    @property
    def operational_variables(self):
        return [s for s in self._symbols.values() if s.kind is SymbolKind.OPERATIONAL]

    @property
    def constraints(self) -> dict:
        return self.system.all_constraints()

    @property
    def states(self) -> dict:
        return self.system.all_states()

    # -- values -----------------------------------------------------------------
    def _indexed_value(self, name, values):
        """Normalize scalar / per-scenario / per-(s,t) data."""
        if isinstance(values, (int, float)) and not isinstance(values, bool):
            return float(values)
        if hasattr(values, "item") and getattr(values, "ndim", 1) == 0:
            return float(values)
        if isinstance(values, Mapping):
            out = {}
            scen = set(self.scenarios.ids)
            pairs = set(self.index)
            for k, v in values.items():
                if isinstance(k, tuple):
                    key = (str(k[0]), str(k[1]))
                    if key not in pairs:
                        raise ShapeMismatch(f"{name}: unknown index {k!r}")
                elif str(k) in scen:
                    key = str(k)
                else:
                    raise ShapeMismatch(f"{name}: unknown index {k!r}")
                out[key] = float(v)
            return out
        seq = list(values)
        idx = self.index
        if len(seq) != len(idx):
            raise ShapeMismatch(f"{name}: expected {len(idx)} values, got {len(seq)}")
        return {k: float(v) for k, v in zip(idx, seq)}

    def set_data(self, param, values):
        sym = self.symbol(param)
        if sym.kind is not SymbolKind.PARAMETER:
            raise UnknownSymbol(f"{sym.name} is not a parameter")
        self.data[sym.name] = self._indexed_value(sym.name, values)

    def get_design(self) -> dict:
        return dict(self.design)

    def set_design(self, values: Mapping):
        for k, v in values.items():
            sym = self.symbol(k)
            if sym.kind is not SymbolKind.DESIGN:
                raise UnknownSymbol(f"{sym.name} is not a design variable")
            if not isinstance(v, (int, float)) and not (hasattr(v, "ndim") and v.ndim == 0):
                raise ShapeMismatch(f"design value for {sym.name} must be scalar")
            self.design[sym.name] = float(v)

    def get_operation(self) -> dict:
        return {k: dict(v) for k, v in self.operation.items()}

    def set_operation(self, values: Mapping):
        for k, v in values.items():
            sym = self.symbol(k)
            if sym.kind is not SymbolKind.OPERATIONAL:
                raise UnknownSymbol(f"{sym.name} is not an operational variable")
            val = self._indexed_value(sym.name, v)
            self.operation[sym.name] = self._broadcast(val)

    def _broadcast(self, val) -> dict:
        if isinstance(val, float):
            return {k: val for k in self.index}
        out = {}
        for s, t in self.index:
            if (s, t) in val:
                out[(s, t)] = val[(s, t)]
            elif s in val:
                out[(s, t)] = val[s]
        return out

    def fix(self, name, value, scenario=None, timepoint=None):
        """Pin a variable (or one instance of it) to ``value`` at flatten time."""
        sym = self.symbol(name)
        if sym.kind is SymbolKind.PARAMETER:
            raise UnknownSymbol(f"{sym.name} is a parameter")
        if scenario is None:
            self.fixed[sym.name] = float(value)
        else:
            entry = self.fixed.setdefault(sym.name, {})
            if not isinstance(entry, dict):
                entry = self.fixed[sym.name] = {k: entry for k in self.index}
            entry[(scenario, timepoint)] = float(value)

    def fixed_value(self, name, s=None, t=None):
        v = self.fixed.get(name)
        if isinstance(v, dict):
            return v.get((s, t))
        return v

    def parameter_value(self, name, s=None, t=None) -> float:
        try:
            v = self.data[name]
        except KeyError:
            raise MissingData(name) from None
        if isinstance(v, float):
            return v
        if (s, t) in v:
            return v[(s, t)]
        if s in v:
            return v[s]
        raise MissingData(f"{name} at ({s}, {t})")

    def indexed_parameters(self) -> set:
        return {k for k, v in self.data.items() if not isinstance(v, float)}

    # -- CSV ingestion --------------------------------------------------------
    def load_data_csv(self, source):
        """Read ``scenario,timepoint,parameter,value`` rows; empty fields mean scalar."""
        if hasattr(source, "read"):
            text = source.read()
        elif "\n" in str(source) or "," in str(source):
            text = str(source)
        else:
            with open(source, newline="") as fh:
                text = fh.read()
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != ["scenario", "timepoint", "parameter", "value"]:
            raise ShapeMismatch(f"unexpected CSV header {reader.fieldnames}")
        # CSV fields are strings; map them back onto the actual labels
        scen = {str(s): s for s in self.scenarios.ids}
        points = {(str(s), str(t)): (s, t) for s, t in self.index}
        grouped: dict = {}
        for row in reader:
            name, s, t = row["parameter"], row["scenario"], row["timepoint"]
            val = float(row["value"])
            if not s and not t:
                grouped[name] = val
            else:
                entry = grouped.setdefault(name, {})
                if isinstance(entry, float):
                    raise ShapeMismatch(f"{name}: scalar and indexed rows mixed")
                key = points.get((s, t), (s, t)) if t else scen.get(s, s)
                entry[key] = val
        for name, vals in grouped.items():
            self.set_data(name, vals)

    # -- checks -----------------------------------------------------------------
    def _used_parameters(self) -> list:
        exprs = [c.lhs for c in self.constraints.values()] + [c.rhs for c in self.constraints.values()]
        exprs += [self.design_objective, self.operational_objective]
        return [s for s in symbols(exprs) if s.kind is SymbolKind.PARAMETER]

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        if len(self.scenarios) == 0:
            rep.issues.append(Issue("error", "no-scenarios", "", "at least one scenario is required"))
            return rep
        for p in self._used_parameters():
            if p.name not in self.data:
                rep.issues.append(Issue("error", "missing-data", p.name, "no value"))
                continue
            v = self.data[p.name]
            if isinstance(v, float):
                continue
            for s, t in self.index:
                if (s, t) not in v and s not in v:
                    rep.issues.append(Issue("error", "missing-data", p.name, f"at ({s}, {t})"))
        indexed = self.indexed_parameters()
        if classify_stage(self.design_objective, indexed) is not StageClass.FIRST:
            rep.issues.append(Issue("error", "stage-mismatch", "design objective",
                                    "contains indexed parameters"))
        for decl in self.states.values():
            if decl.initial is None:
                rep.issues.append(Issue("error", "missing-initial", decl.state.name))
            elif decl.initial.name not in self.data:
                rep.issues.append(Issue("error", "missing-initial", decl.state.name,
                                        f"parameter {decl.initial.name} has no value"))
        for s in self._symbols.values():
            if s.kind.is_variable and (s.lb is None or s.ub is None):
                rep.issues.append(Issue("warning", "unbounded", s.name,
                                        "default bounds +-1e9 applied at flatten"))
        return rep

    def instantiate_symbols(self) -> SymbolUniverse:
        rep = self.validate()
        if not rep.ok:
            raise ValidationFailed(rep)
        design = tuple(s.name for s in self.design_variables)
        op = tuple((v.name, s, t) for v in self.operational_variables for s, t in self.index)
        return SymbolUniverse(design, op)

    # -- objective --------------------------------------------------------------
    def point_bindings(self, design=None, operation=None, s=None, t=None) -> dict:
        design = self.design if design is None else design
        operation = self.operation if operation is None else operation
        b = dict(design)
        for name in self.data:
            try:
                b[name] = self.parameter_value(name, s, t)
            except MissingData:
                pass
        if s is not None:
            for name, vals in operation.items():
                if (s, t) in vals:
                    b[name] = vals[(s, t)]
        return b

    def evaluate_objectives(self, design_expr, operational_expr, design=None,
                            operation=None) -> float:
        total = evaluate(design_expr, self.point_bindings(design, operation))
        for s in self.scenarios.ids:
            w = self.weight(s)
            acc = 0.0
            for t in self.timegrid.labels(s):
                dt = self.step(s, t)
                acc += dt * evaluate(operational_expr, self.point_bindings(design, operation, s, t))
            total += w * acc
        return total

    def objective_value(self, design=None, operation=None) -> float:
        return self.evaluate_objectives(self.design_objective, self.operational_objective,
                                        design, operation)

    def copy(self) -> "Problem":
        new = copy.copy(self)
        new.data = copy.deepcopy(self.data)
        new.design = dict(self.design)
        new.operation = copy.deepcopy(self.operation)
        new.fixed = copy.deepcopy(self.fixed)
        return new

    def summary(self) -> str:
        cons = self.constraints
        indexed = self.indexed_parameters()
        n_first = sum(1 for c in cons.values() if stage_of(c, indexed) is StageClass.FIRST)
        lines = [
            f"problem {self.name} on system {self.system.label}",
            f"scenarios: {len(self.scenarios)} "
            + ", ".join(f"{s}(w={w:g}, n={len(self.timegrid.labels(s))}, "
                        f"T={self.timegrid.horizon(s):g})" for s, w in self.scenarios.entries),
            f"parameters: {len(self.parameters)}",
            f"design variables: {len(self.design_variables)}",
            f"operational variables: {len(self.operational_variables)}",
            f"states: {len(self.states)}",
            f"constraints: {len(cons)} ({n_first} first stage, {len(cons) - n_first} second stage)",
        ]
        return "\n".join(lines)
