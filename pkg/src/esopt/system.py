"""System models: aggregation of components, buses and nested subsystems."""
from __future__ import annotations

import json

from .expr import (Const, Domain, Symbol, SymbolKind, add, parse, print_generic,
                   symbols)
from .model import (Component, Connector, DuplicateName, ModelError, Polarity,
                    Relation, RelationalConstraint, StateDeclaration, UnknownId)


class AlreadyConnected(ModelError):
    pass


class UnknownConnector(ModelError, KeyError):
    pass


class System(Component):
    """A component made of member components and subsystems.

    Connecting connectors to a bus adds the balance ``sum(c_k) == 0`` to the
    system.  Connector expressions are summed as given: producers either
    carry negative expressions or declare output polarity.
    """

    def __init__(self, label: str, components=(), connections=None):
        super().__init__(label)
        self.members: list[Component] = []
        self.connections: dict[str, list[Connector]] = {}
        self.exposed: dict[str, Connector] = {}
        self._used: set[int] = set()
        for c in components:
            self.add_component(c)
        for bus, conns in (connections or {}).items():
            self.connect(bus, conns)

    def add_component(self, member: Component) -> Component:
        if self.frozen:
            raise ModelError(f"{self.label} is frozen")
        if any(m.label == member.label for m in self.members):
            raise DuplicateName(member.label)
        self.members.append(member)
        return member

    def _resolve(self, ref) -> Connector:
        if isinstance(ref, Connector):
            conn = ref
        else:
            member, cid = ref
            if isinstance(member, str):
                member = next((m for m in self.members if m.label == member), None)
                if member is None:
                    raise UnknownConnector(f"no member {ref[0]!r} in {self.label}")
            conn = member.connectors.get(cid)
            if conn is None:
                raise UnknownConnector(f"{member.label} has no connector {cid!r}")
        owner = conn.owner
        if owner is not self and owner not in self.members:
            raise UnknownConnector(f"{conn.qualified} does not belong to a member of {self.label}")
        if owner.connectors.get(conn.id) is not conn:
            raise UnknownConnector(conn.qualified)
        return conn

    def _balance(self, bus: str) -> RelationalConstraint:
        total = add(*[c.expr for c in self.connections[bus]])
        name = f"{self.label}.{bus}"
        con = RelationalConstraint(name, total, Relation.EQ, Const(0.0))
        self.constraints[name] = con
        return con

    def connect(self, bus: str, connectors) -> RelationalConstraint:
        """Attach connectors to a new bus and create its balance constraint."""
        if bus in self.connections or bus in self.exposed:
            raise DuplicateName(f"{self.label}.{bus}")
        resolved = [self._resolve(r) for r in connectors]
        for c in resolved:
            if id(c) in self._used:
                raise AlreadyConnected(c.qualified)
        if len({id(c) for c in resolved}) != len(resolved):
            raise AlreadyConnected("connector listed twice")
        self._claim(bus)
        self._used.update(id(c) for c in resolved)
        self.connections[bus] = resolved
        return self._balance(bus)

    def extend_connection(self, bus: str, connectors) -> RelationalConstraint:
        if bus not in self.connections:
            raise UnknownId(f"{self.label} has no connection {bus!r}")
        resolved = [self._resolve(r) for r in connectors]
        for c in resolved:
            if id(c) in self._used:
                raise AlreadyConnected(c.qualified)
        self._used.update(id(c) for c in resolved)
        self.connections[bus].extend(resolved)
        return self._balance(bus)

    def expose_connector(self, ref, new_id: str) -> Connector:
        """Make an unconnected member connector available on this system."""
        conn = self._resolve(ref)
        if id(conn) in self._used:
            raise AlreadyConnected(conn.qualified)
        if new_id in self.connectors:
            raise DuplicateName(f"{self.label}.{new_id}")
        # sign restrictions already live in the member
        exposed = Connector(new_id, conn.expr, Polarity.BIDIRECTIONAL, self)
        self.connectors[new_id] = exposed
        self.exposed[new_id] = conn
        self._used.add(id(conn))
        return exposed

    def expose_connection(self, bus: str, new_id: str) -> Connector:
        """Turn a bus into a connector so an enclosing system can balance it."""
        if bus not in self.connections:
            raise UnknownId(f"{self.label} has no connection {bus!r}")
        if new_id in self.connectors:
            raise DuplicateName(f"{self.label}.{new_id}")
        del self.constraints[f"{self.label}.{bus}"]
        conns = self.connections.pop(bus)
        exposed = Connector(new_id, add(*[c.expr for c in conns]), Polarity.BIDIRECTIONAL, self)
        self.connectors[new_id] = exposed
        return exposed

    def aggregate_component_expressions(self, identifier: str):
        """Sum of every expression stored under ``identifier``, recursively."""
        parts = []
        if identifier in self.expressions:
            parts.append(self.expressions[identifier])
        for m in self.members:
            if isinstance(m, System):
                parts.append(m.aggregate_component_expressions(identifier))
            elif identifier in m.expressions:
                parts.append(m.expressions[identifier])
        return add(*parts) if parts else Const(0.0)

    # -- recursive views ----------------------------------------------------
    def iter_components(self):
        yield self
        for m in self.members:
            yield from m.iter_components()

    @property
    def all_symbols(self) -> list:
        out = []
        for c in self.iter_components():
            out.extend(c.parameters + c.design_variables + c.operational_variables)
        return out

    def all_constraints(self) -> dict:
        out = {}
        for c in self.iter_components():
            out.update(c.constraints)
        return out

    def all_states(self) -> dict:
        out = {}
        for c in self.iter_components():
            out.update(c.states)
        return out

    def all_defaults(self) -> dict:
        out = {}
        for c in self.iter_components():
            out.update(c.defaults)
        return out

    def freeze(self):
        for m in self.members:
            m.freeze()
        self.frozen = True
        return self

    def create_problem(self, design_objective=0.0, operational_objective=0.0,
                       timesteps=None, scenarios=None, data=None, name="P"):
        from .problem import Problem
        return Problem(self, design_objective, operational_objective,
                       timesteps=timesteps, scenarios=scenarios, data=data, name=name)


# ---------------------------------------------------------------------------
# structured text document (JSON)

def _sym_doc(s: Symbol) -> dict:
    d = {"name": s.name, "kind": s.kind.value}
    if s.kind.is_variable:
        d.update(domain=s.domain.value, lb=s.lb, ub=s.ub, init=s.init)
    return d


def _component_doc(c: Component) -> dict:
    doc = {
        "type": "system" if isinstance(c, System) else "component",
        "label": c.label,
        "symbols": [_sym_doc(s) for s in c.parameters + c.design_variables
                    + c.operational_variables],
        "defaults": c.defaults,
        "constraints": [[k, print_generic(v.lhs), v.relation.value, print_generic(v.rhs)]
                        for k, v in c.constraints.items()],
        "expressions": {k: print_generic(v) for k, v in c.expressions.items()},
        "states": [[d.state.name, d.derivative.name, print_generic(d.rhs),
                    d.initial.name if d.initial is not None else None, d.constraint]
                   for d in c.states.values()],
        "connectors": [[k, print_generic(v.expr), v.polarity.value]
                       for k, v in c.connectors.items()],
    }
    if isinstance(c, System):
        doc["members"] = [_component_doc(m) for m in c.members]
        doc["connections"] = {bus: [conn.qualified for conn in conns]
                              for bus, conns in c.connections.items()}
        doc["exposed"] = {k: v.qualified for k, v in c.exposed.items()}
    return doc


def dumps(system: Component) -> str:
    """Serialize a component or system to a JSON document."""
    return json.dumps(_component_doc(system), indent=1, sort_keys=True)


def _all_symbol_docs(doc, out):
    for s in doc["symbols"]:
        out[s["name"]] = s
    for m in doc.get("members", ()):
        _all_symbol_docs(m, out)
    return out


def loads(text: str) -> Component:
    """Rebuild a component or system from :func:`dumps` output."""
    doc = json.loads(text)
    table = {}
    for name, s in _all_symbol_docs(doc, {}).items():
        kind = SymbolKind(s["kind"])
        if kind.is_variable:
            table[name] = Symbol(name, kind, Domain(s["domain"]), s["lb"], s["ub"], s["init"])
        else:
            table[name] = Symbol(name, kind)
    # derived symbols from CSE or parsing never appear; unknown names are an error
    def px(text):
        e = parse(text, table, default_kind=SymbolKind.PARAMETER)
        unknown = [s.name for s in symbols(e) if s.name not in table]
        if unknown:
            raise ModelError(f"unknown symbols in document: {unknown}")
        return e

    def build(d):
        c = System(d["label"]) if d["type"] == "system" else Component(d["label"])
        for s in d["symbols"]:
            sym = table[s["name"]]
            c._names.add(sym.name)
            {SymbolKind.PARAMETER: c.parameters, SymbolKind.DESIGN: c.design_variables,
             SymbolKind.OPERATIONAL: c.operational_variables}[sym.kind].append(sym)
        c.defaults.update(d["defaults"])
        for name, lhs, rel, rhs in d["constraints"]:
            c.constraints[name] = RelationalConstraint(name, px(lhs), Relation(rel), px(rhs))
            c._names.add(name)
        for k, v in d["expressions"].items():
            c.expressions[k] = px(v)
        for st, der, rhs, init, con in d["states"]:
            c.states[st] = StateDeclaration(table[st], table[der], px(rhs),
                                            table[init] if init else None, con)
        for k, e, pol in d["connectors"]:
            c.connectors[k] = Connector(k, px(e), Polarity(pol), c)
        if isinstance(c, System):
            for m in d["members"]:
                c.members.append(build(m))
            lookup = {}
            for comp in c.iter_components():
                for conn in comp.connectors.values():
                    lookup[conn.qualified] = conn
            for bus, refs in d["connections"].items():
                c.connections[bus] = [lookup[r] for r in refs]
                c._used.update(id(lookup[r]) for r in refs)
                c._names.add(f"{c.label}.{bus}")
            for k, ref in d["exposed"].items():
                c.exposed[k] = lookup[ref]
                c._used.add(id(lookup[ref]))
        return c
    return build(doc)
