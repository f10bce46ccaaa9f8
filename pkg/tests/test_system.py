import random

import pytest
from hypothesis import given, settings, strategies as st

from esopt import expr as ex
from esopt import system as sysmod
from esopt.flatten import flatten
from esopt.model import Component, DuplicateName, Relation
from esopt.problem import Problem, StageMismatch
from esopt.system import AlreadyConnected, System, UnknownConnector


def unit(label, produce=True, ub=10.0):
    c = Component(label)
    q = c.make_operational_variable("Q", (0, ub))
    if produce:
        c.add_output("OUT", -q)
    else:
        c.add_input("IN", q)
    return c, q


def test_balance_sums_connectors():
    a, qa = unit("A")
    b, qb = unit("B", produce=False)
    c = Component("C")
    f = c.make_operational_variable("flow", (-5, 5))
    c.add_connector("flow", f)
    s = System("S", [a, b, c])
    con = s.connect("bus", [a["OUT"], b["IN"], c["flow"]])
    assert con.relation is Relation.EQ
    assert con.expr == -qa + qb + f
    with pytest.raises(AlreadyConnected):
        s.connect("other", [a["OUT"]])
    with pytest.raises(UnknownConnector):
        s.connect("ghost", [("A", "nope")])


def test_one_balance_per_connection():
    members = [unit(f"U{i}", produce=i % 2 == 0)[0] for i in range(6)]
    s = System("S", members)
    s.connect("heat", [members[0]["OUT"], members[1]["IN"], members[2]["OUT"]])
    s.connect("power", [members[3]["IN"], members[4]["OUT"]])
    s.connect("gas", [members[5]["IN"]])
    balances = [n for n in s.constraints if n.startswith("S.")]
    assert len(balances) == len(s.connections) == 3
    # a bus with one connector pins its expression to zero
    assert s.constraints["S.gas"].expr == members[5].operational_variables[0]


def test_expose_connector():
    src, _ = unit("CG.SRC")
    aux, _ = unit("CG.AUX")
    cg = System("CG", [src, aux])
    cg.expose_connector(src["OUT"], "NET_IN")
    with pytest.raises(DuplicateName):
        cg.expose_connector(("CG.AUX", "OUT"), "NET_IN")
    with pytest.raises(AlreadyConnected):
        cg.expose_connector(src["OUT"], "OTHER")
    dem, _ = unit("DEM", produce=False)
    top = System("TOP", [cg, dem])
    top.connect("heat", [cg["NET_IN"], dem["IN"]])
    expected = len(src.constraints) + len(aux.constraints) + len(dem.constraints) + 1
    assert len(top.all_constraints()) == expected


def test_aggregate_expressions():
    a, b = Component("A"), Component("B")
    a.add_expression("investment_costs", 3)
    b.add_expression("investment_costs", 5)
    s = System("S", [a, b])
    assert ex.evaluate(s.aggregate_component_expressions("investment_costs")) == 8
    assert s.aggregate_component_expressions("nothing") == ex.Const(0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_aggregation_is_linear(seed):
    rng = random.Random(seed)
    members, values, env = [], [], {}
    for i in range(rng.randint(1, 5)):
        c = Component(f"M{i}")
        v = c.make_operational_variable("x", (0, 1))
        coef = rng.uniform(-3, 3)
        c.add_expression("variable_costs", coef * v)
        env[v.name] = rng.uniform(0, 1)
        values.append(coef * env[v.name])
        members.append(c)
    inner = System("IN", members[1:])
    top = System("TOP", [members[0], inner])
    total = ex.evaluate(top.aggregate_component_expressions("variable_costs"), env)
    assert total == pytest.approx(sum(values), abs=1e-12)


def test_variable_costs_match_hand_sum():
    parts = []
    comps = []
    for lab, price in (("CHP", 0.05), ("B", 0.04), ("HP", 0.2)):
        c = Component(lab)
        e_in = c.make_operational_variable("E_in", (0, 10))
        p = c.make_parameter("price", price)
        c.add_expression("variable_costs", p * e_in)
        parts.append(p * e_in)
        comps.append(c)
    s = System("S", comps)
    assert s.aggregate_component_expressions("variable_costs") == ex.add(*parts)


def test_create_problem_stage_mismatch():
    c, q = unit("A")
    s = System("S", [c])
    with pytest.raises(StageMismatch):
        s.create_problem(q, 0)


def test_reuse_model_for_two_objectives():
    c = Component("B")
    e_nom = c.make_design_variable("E_nom", (0, 10))
    e_in = c.make_operational_variable("E_in", (0, 10))
    c.add_le_constraint(e_in, e_nom, "nominal")
    c.add_expression("investment_costs", 100 * e_nom)
    c.add_expression("emissions", 0.2 * e_in)
    s = System("S", [c])
    tac = s.create_problem(s.aggregate_component_expressions("investment_costs"), 0.1 * e_in)
    gwi = s.create_problem(0, s.aggregate_component_expressions("emissions"))
    assert len(flatten(tac).constraints) == len(flatten(gwi).constraints)


def _normalized(m, renames):
    rows = sorted((renames.get(c.name, c.name), ex.print_generic(c.expr), c.relation.value)
                  for c in m.constraints)
    return [(v.name, v.lb, v.ub, v.domain) for v in m.variables], rows, ex.print_generic(m.objective)


def test_nesting_matches_inlined_system():
    def members():
        prod, qp = unit("G.A")
        dem, qd = unit("G.D", produce=False, ub=4)
        d = dem.make_parameter("demand", 3.0)
        dem.add_ge_constraint(qd, d, "meet")
        return prod, dem, qp

    prod, dem, qp = members()
    inner = System("G", [prod, dem])
    inner.connect("heat", [prod["OUT"], dem["IN"]])
    nested = System("TOP", [inner])
    p1 = nested.create_problem(0, qp, timesteps={"1": 1.0, "2": 2.0})

    prod2, dem2, qp2 = members()
    flat = System("TOP", [prod2, dem2])
    flat.connect("heat", [prod2["OUT"], dem2["IN"]])
    p2 = flat.create_problem(0, qp2, timesteps={"1": 1.0, "2": 2.0})

    m1, m2 = flatten(p1), flatten(p2)
    renames = {f"TOP.heat[nominal,{t}]": f"G.heat[nominal,{t}]" for t in ("1", "2")}
    assert _normalized(m1, {}) == _normalized(m2, renames)


def test_json_round_trip():
    a, qa = unit("A")
    b, qb = unit("B", produce=False)
    tes = Component("TES")
    tes.make_state("E", lambda e: -e / 50, initial=2.0, bounds=(0, 10))
    s = System("S", [a, b, tes])
    s.connect("heat", [a["OUT"], b["IN"]])
    text = sysmod.dumps(s)
    back = sysmod.loads(text)
    assert sysmod.dumps(back) == text
    assert {k: v.expr for k, v in back.all_constraints().items()} == \
        {k: v.expr for k, v in s.all_constraints().items()}
