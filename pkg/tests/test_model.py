import pytest

from esopt import expr as ex
from esopt.expr import Domain, StageClass, SymbolKind
from esopt.flatten import flatten
from esopt.model import (AlreadyState, BadBounds, Component, DuplicateName, ForeignSymbol,
                         Polarity, Relation, UnknownId)
from esopt.problem import Problem
from esopt.solve import solve


def test_parameter_naming_and_default():
    b = Component("B")
    eta = b.make_parameter("eta", 0.9)
    assert eta.name == "B.eta" and eta.kind is SymbolKind.PARAMETER
    assert b.defaults["B.eta"] == 0.9
    price = b.make_parameter("price")
    assert "B.price" not in b.defaults
    with pytest.raises(DuplicateName):
        b.make_parameter("eta")
    p = Problem(b, 0, price * b.make_operational_variable("x", (0, 1)))
    assert any(i.category == "missing-data" for i in p.validate().errors)


def test_design_and_operational_variables():
    b = Component("B")
    e_nom = b.make_design_variable("E_nom", (0, 400), Domain.REAL, 100)
    assert e_nom.bounds == (0, 400) and e_nom.init == 100
    build = b.make_design_variable("build", (0, 1), Domain.BINARY, 0)
    assert build.domain is Domain.BINARY and build.kind is SymbolKind.DESIGN
    with pytest.raises(BadBounds):
        b.make_design_variable("bad", (5, 1))
    on = b.make_operational_variable("on", (0, 1), Domain.BINARY, 0)
    assert on.kind is SymbolKind.OPERATIONAL
    q = b.make_operational_variable("Qdot_out", (0, None), Domain.REAL, 0)
    assert q.ub is None
    with pytest.raises(DuplicateName):
        b.make_operational_variable("on")
    assert all(s.name.startswith("B.") for s in b.all_symbols)


def test_constraint_stages():
    b = Component("B")
    e_nom = b.make_design_variable("E_nom", (0, 10))
    c_i = b.make_design_variable("C_I", (0, 1e4))
    e_in = b.make_operational_variable("E_in", (0, 10))
    e_out = b.make_operational_variable("E_out", (0, 10))
    eta = b.make_parameter("eta", 0.9)
    conv = b.add_eq_constraint(e_out, eta * e_in, "conversion")
    inv = b.add_eq_constraint(c_i, 100 * e_nom ** 0.8, "investment")
    hp = Component("HP")
    q = hp.make_operational_variable("Q", (0, 400))
    build = hp.make_design_variable("b", (0, 1), Domain.BINARY)
    qhp = hp.add_le_constraint(q, build * 400, "QHP")
    assert conv.stage is StageClass.SECOND and conv.relation is Relation.EQ
    assert inv.stage is StageClass.FIRST
    assert qhp.stage is StageClass.SECOND and qhp.relation is Relation.LE
    with pytest.raises(DuplicateName):
        b.add_eq_constraint(e_out, e_in, "conversion")


def test_expressions():
    b = Component("B")
    e_nom = b.make_design_variable("E_nom", (0, 10))
    e_in = b.make_operational_variable("E_in", (0, 10))
    price = b.make_parameter("price", 0.3)
    b.add_expression("investment_costs", 100 * e_nom ** 0.8)
    b.add_expression("variable_costs", price * e_in)
    assert b.get_expression("variable_costs") == price * e_in
    with pytest.raises(DuplicateName):
        b.add_expression("variable_costs", e_in)
    with pytest.raises(UnknownId):
        b.get_expression("missing")
    # hand sum of the toy objective at E_nom=2, E_in=4
    total = b.get_expression("investment_costs") + b.get_expression("variable_costs")
    assert ex.evaluate(total, {"B.E_nom": 2, "B.E_in": 4, "B.price": 0.3}) == pytest.approx(
        100 * 2 ** 0.8 + 1.2, abs=1e-12)


def test_declare_state():
    s = Component("TES")
    e = s.make_operational_variable("E", (0, 100))
    e_in = s.make_operational_variable("E_in", (0, 10))
    e_out = s.make_operational_variable("E_out", (0, 10))
    rhs = 0.95 * e_in - e_out / 0.95 - e / 100
    decl = s.declare_state(e, rhs, initial=0)
    assert decl.derivative.kind is SymbolKind.OPERATIONAL
    dyn = [c for c in s.constraints.values() if decl.derivative in c.symbols()]
    assert len(dyn) == 1 and dyn[0].relation is Relation.EQ
    assert dyn[0].lhs == decl.derivative and dyn[0].rhs == rhs
    with pytest.raises(AlreadyState):
        s.declare_state(e, rhs)
    other = Component("X").make_operational_variable("z")
    with pytest.raises(ForeignSymbol):
        s.declare_state(other, rhs)


def test_zone_state_from_make_state():
    z = Component("AIR")
    q_in = z.make_operational_variable("Q_in", (-5, 5))
    decl = z.make_state("T", lambda t: (q_in - 0.1 * (t - 20)) / (1.2 * 300 * 1.0), initial=20)
    assert decl.state.name == "AIR.T" and decl.initial.name == "AIR.T_init"


def test_make_state_equals_two_calls():
    a = Component("A")
    a.make_state("E", lambda e: -e, initial=1.0, bounds=(0, 1))
    b = Component("A")
    e = b.make_operational_variable("E", (0, 1))
    b.declare_state(e, -e, initial=1.0)
    assert [s.name for s in a.all_symbols] == [s.name for s in b.all_symbols]
    for name, con in a.constraints.items():
        other = b.constraints[name]
        assert con.expr == other.expr and con.relation is other.relation


def test_connector_polarity_rows_added_once():
    c = Component("B")
    out = c.make_operational_variable("E_out", (0, 5))
    inp = c.make_operational_variable("E_in", (0, 5))
    c.add_output("OUT", -out)
    c.add_input("IN", inp)
    c.add_connector("IO", inp - out, Polarity.BIDIRECTIONAL)
    assert set(c.constraints) == {"B.OUT_output", "B.IN_input"}
    assert c.constraints["B.OUT_output"].relation is Relation.LE
    with pytest.raises(DuplicateName):
        c.add_input("IN", inp)


def test_input_connector_forces_nonnegative():
    c = Component("C")
    x = c.make_operational_variable("x", (-5, 5))
    c.add_input("IN", x)
    p = Problem(c, 0, x, timesteps={"1": 1.0, "2": 1.0})
    sol = solve(flatten(p))
    assert sol.ok and all(v >= -1e-9 for v in sol.operation["C.x"].values())
    assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_output_connector_nonpositive_in_solution():
    c = Component("C")
    x = c.make_operational_variable("x", (-5, 5))
    c.add_output("OUT", x)
    p = Problem(c, 0, -x, timesteps={"1": 1.0})
    sol = solve(flatten(p))
    assert sol.objective == pytest.approx(0.0, abs=1e-9)
    assert max(sol.operation["C.x"].values()) <= 1e-9
