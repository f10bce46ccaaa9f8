"""Small bundled models used by the command line and the tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expr import Domain
from .library import (COSTS, StreamSide, carnot_heat_pump, consumer_demand, conversion_component,
                      cooling_system, demand_component, grid_component, heat_exchanger,
                      heat_source, heat_transfer, pipe_network, pump_turbine, random_ann,
                      storage_component, thermal_zone)
from .model import Component
from .problem import Problem
from .system import System


@dataclass
class BundledModel:
    name: str
    problem: Problem
    objectives: dict  # name -> (design expr, operational expr)
    grids: str | None = None
    notes: str = ""
    extras: dict = field(default_factory=dict)

    def objective(self, name: str):
        return self.objectives[name]


ANNUITY = 0.1  # capital recovery factor applied to investments


# ---------------------------------------------------------------------------
# mini integrated energy system

MINI_IES_GRIDS = """\
[B.cost_curve]
B.E_nom = 0 10 25 50
[HP.cost_curve]
HP.E_nom = 0 5 15 30
"""


def mini_ies() -> BundledModel:
    """Boiler, heat pump and heat storage covering a heat demand.

    Two typical days with two 12 h steps each, plus a zero-weight peak point.
    """
    gg = grid_component("GG", price=0.06, emission=0.24, e_max=200.0)
    pg = grid_component("PG", price=0.28, emission=0.45, e_max=200.0)
    b = conversion_component("B", 800.0, 0.7, 0.92, (0.0, 50.0), min_partload=0.2)
    hp = conversion_component("HP", 1500.0, 0.8, eta="COP", E_nom_bounds=(0.0, 30.0))
    tes = storage_component("TES", 0.95, 0.95, tau=100.0, capacity=(0.0, 200.0), rate=0.25,
                            c_spec=25.0, c_fix=500.0)
    dem = demand_component("DEM")
    s = System("IES", [gg, pg, b, hp, tes, dem])
    s.connect("gas", [gg["OUT"], b["IN"]])
    s.connect("power", [pg["OUT"], hp["IN"]])
    s.connect("heat", [b["OUT"], hp["OUT"], tes["IO"], dem["IN"]])
    inv = s.aggregate_component_expressions("investment_costs")
    var = s.aggregate_component_expressions("variable_costs")
    gwi = s.aggregate_component_expressions("emissions")
    scenarios = {"winter": 180.0, "summer": 185.0, "peak": 0.0}
    steps = {"winter": ([1, 2], 12.0), "summer": ([1, 2], 12.0), "peak": ([1], 0.0)}
    demand = {("winter", 1): 30.0, ("winter", 2): 18.0, ("summer", 1): 6.0, ("summer", 2): 3.0,
              ("peak", 1): 55.0}
    cop = {("winter", 1): 2.8, ("winter", 2): 3.1, ("summer", 1): 3.9, ("summer", 2): 4.2,
           ("peak", 1): 2.5}
    p = Problem(s, ANNUITY * inv, var, timesteps=steps, scenarios=scenarios,
                data={"DEM.demand": demand, "HP.COP": cop}, name="mini-ies")
    return BundledModel("mini-ies", p, {"TAC": (ANNUITY * inv, var), "GWI": (0.0, gwi)},
                        MINI_IES_GRIDS,
                        "boiler + heat pump + storage; TAC vs GWI")


# ---------------------------------------------------------------------------
# building demand response

def building_dr(n_steps: int = 8, dt: float = 3.0) -> BundledModel:
    """Three thermal masses heated by an on/off-limited heat pump under a time-varying price.

    Units: hours, kW, kWh/K (``cp`` passed in kWh/(kg K)).
    """
    air = thermal_zone("AIR", 1.2, 300.0, 1000 / 3.6e6, (20.0, 24.0), 21.0, q_max=50.0)
    core = thermal_zone("CORE", 2400.0, 20.0, 880 / 3.6e6, (10.0, 40.0), 21.0, q_max=50.0)
    wall = thermal_zone("WALL", 1800.0, 30.0, 900 / 3.6e6, (-20.0, 40.0), 15.0, q_max=50.0)
    t = {z.label: z.states[f"{z.label}.T"].state for z in (air, core, wall)}
    amb = Component("AMB")
    t_amb = amb.make_parameter("T")
    ht_aw = heat_transfer("HT_AW", 2.5, 0.2, t["AIR"], t["WALL"], 50.0)
    ht_ac = heat_transfer("HT_AC", 5.0, 0.2, t["AIR"], t["CORE"], 50.0)
    ht_cw = heat_transfer("HT_CW", 0.5, 0.1, t["CORE"], t["WALL"], 50.0)
    ht_we = heat_transfer("HT_WE", 0.3, 0.5, t["WALL"], t_amb, 50.0)

    hp = Component("HP")
    q_max, mpl = 8.0, 0.3
    cop = hp.make_parameter("COP")
    p_el = hp.make_operational_variable("P", (0.0, q_max))
    q_air = hp.make_operational_variable("Q_air", (0.0, q_max))
    q_core = hp.make_operational_variable("Q_core", (0.0, q_max))
    on = hp.make_operational_variable("on", (0, 1), Domain.BINARY)
    hp.add_eq_constraint(q_air + q_core, cop * p_el, "conversion")
    hp.add_le_constraint(q_air + q_core, q_max * on, "on_limit")
    hp.add_ge_constraint(q_air + q_core, mpl * q_max * on, "partload")
    hp.add_output("AIR", -q_air)
    hp.add_output("CORE", -q_core)
    hp.add_input("POWER", p_el)
    pg = grid_component("PG", price=0.0, emission=0.4, e_max=q_max)

    s = System("BLD", [air, core, wall, amb, ht_aw, ht_ac, ht_cw, ht_we, hp, pg])
    s.connect("air", [air["HEAT"], ht_aw["A"], ht_ac["A"], hp["AIR"]])
    s.connect("core", [core["HEAT"], ht_ac["B"], ht_cw["A"], hp["CORE"]])
    s.connect("wall", [wall["HEAT"], ht_aw["B"], ht_cw["B"], ht_we["A"]])
    s.connect("power", [pg["OUT"], hp["POWER"]])
    cost = s.aggregate_component_expressions("variable_costs")
    labels = list(range(1, n_steps + 1))
    hours = [dt * k for k in labels]
    data = {
        "AMB.T": {("day", k): 2.0 + 5.0 * math.sin(2 * math.pi * (h - 9) / 24) for k, h in zip(labels, hours)},
        "PG.price": {("day", k): 0.20 + 0.15 * (8 <= h % 24 <= 20) for k, h in zip(labels, hours)},
        "HP.COP": {("day", k): 3.0 + 0.05 * (2.0 + 5.0 * math.sin(2 * math.pi * (h - 9) / 24))
                   for k, h in zip(labels, hours)},
    }
    p = Problem(s, 0.0, cost, timesteps={"day": (labels, dt)}, scenarios=["day"], data=data,
                name="building-dr")
    return BundledModel("building-dr", p, {"cost": (0.0, cost)}, None,
                        "air/core/wall zones with a heat pump under a time-of-use price")


# ---------------------------------------------------------------------------
# district heating network

DH_SEGMENTS = ((400.0, 60000.0), (250.0, 40000.0), (300.0, 45000.0), (500.0, 70000.0))
DH_CONSUMERS = {"CG40": (0,), "CG50": (0, 1), "CG70": (0, 2), "CG85": (0, 2, 3)}


def dh_network(n_clusters: int = 3) -> BundledModel:
    """Waste-heat heat pump feeding a pipe network; every group may also install a boiler or a heating rod.

    Nonlinear (bilinear temperature and flow products).  Units: kW, K, hours.
    """
    comps = []
    wh = grid_component("WH", price=0.0, emission=0.0, e_max=600.0)
    pg = grid_component("PG", price=0.28, emission=0.45, e_max=2000.0)
    gg = grid_component("GG", price=0.06, emission=0.24, e_max=2000.0)
    amb = Component("AMB")
    t_amb = amb.make_parameter("T")
    nw = pipe_network("NW", DH_SEGMENTS, cp=4.18e-3, m_max=50.0, consumers=DH_CONSUMERS,
                      q_max=400.0, ambient=t_amb)
    t_fl = nw.operational_variables[3]
    t_re = nw.operational_variables[4]
    temps = {"T_re_con": t_fl + 273.15, "T_fl_con": t_re + 273.15,
             "T_fl_eva": 303.15, "T_re_eva": 293.15}
    hp = carnot_heat_pump("HP", temperatures=temps, c_spec=COSTS["central HP"][0])
    comps += [wh, pg, gg, amb, nw, hp]
    s = System("DH", comps)
    buses = {"power": [pg["OUT"], hp["POWER_IN"]], "gas": [gg["OUT"]]}
    s.connect("waste", [wh["OUT"], hp["HEAT_IN"]])
    s.connect("central", [hp["HEAT_OUT"], nw["HEAT_IN"]])
    for cg in DH_CONSUMERS:
        dem = consumer_demand(f"DEM_{cg}", cg)
        boiler = heat_source(f"B_{cg}", COSTS["HS_B"][0], COSTS["HS_B"][1], 0.92, 400.0)
        rod = heat_source(f"HR_{cg}", COSTS["HS_HR"][0], COSTS["HS_HR"][1], 1.0, 400.0)
        for c in (dem, boiler, rod):
            s.add_component(c)
        s.connect(f"heat_{cg}", [nw[f"HEAT_{cg}"], boiler["OUT"], rod["OUT"], dem["IN"]])
        buses["gas"].append(boiler["IN"])
        buses["power"].append(rod["IN"])
    for bus, members in buses.items():
        s.connect(bus, members)
    inv = s.aggregate_component_expressions("investment_costs")
    var = s.aggregate_component_expressions("variable_costs")
    rng = np.random.default_rng(7)
    ids = [f"c{k}" for k in range(n_clusters)]
    temps_c = np.linspace(-8.0, 15.0, n_clusters)
    weights = {s_: 365.0 / n_clusters for s_ in ids}
    data = {"AMB.T": {}}
    for cg, scale in zip(DH_CONSUMERS, (120.0, 90.0, 150.0, 60.0)):
        data[f"DEM_{cg}.Q_dem"] = {}
        data[f"DEM_{cg}.T_amb"] = {}
        for s_, ta in zip(ids, temps_c):
            q = max(0.0, scale * (18.0 - ta) / 26.0 * (1 + 0.05 * rng.standard_normal()))
            data[f"DEM_{cg}.Q_dem"][(s_, 1)] = float(q)
            data[f"DEM_{cg}.T_amb"][(s_, 1)] = float(ta)
    for s_, ta in zip(ids, temps_c):
        data["AMB.T"][(s_, 1)] = float(ta)
    p = Problem(s, ANNUITY * inv, var, timesteps={s_: ([1], 24.0) for s_ in ids},
                scenarios=weights, data=data, name="dh-network")
    return BundledModel("dh-network", p, {"TAC": (ANNUITY * inv, var)}, None,
                        "central waste-heat heat pump, pipe network and four consumer groups")


# ---------------------------------------------------------------------------
# organic Rankine cycle (reduced space, surrogate properties)

ORC_QUANTITIES = {
    # name: (inputs, input centres, input half-ranges, output offset, output scale)
    "h_liq": (("p", "s"), (10.0, 1.2), (10.0, 0.4), 260.0, 40.0),
    "T_liq": (("p", "h"), (10.0, 280.0), (10.0, 80.0), 340.0, 25.0),
    "h_satliq": (("p",), (10.0,), (10.0,), 270.0, 40.0),
    "s_satliq": (("p",), (10.0,), (10.0,), 1.25, 0.15),
    "T_sat": (("p",), (10.0,), (10.0,), 350.0, 30.0),
    "h_satvap": (("p",), (10.0,), (10.0,), 470.0, 20.0),
    "s_vap": (("p", "h"), (10.0, 500.0), (10.0, 60.0), 1.8, 0.1),
    "T_vap": (("p", "h"), (10.0, 500.0), (10.0, 60.0), 370.0, 30.0),
}

T_GB_IN = 408.0  # K, brine inlet
T_GB_OUT = 357.0  # K, brine outlet
MCP_GB = 200.0  # kW/K
DT_HE = 5.0  # K, heat exchanger approach
ETA_P = 0.75
ETA_T = 0.85


def orc_surrogates(seed: int = 2024) -> dict:
    """Stub property networks: two hidden tanh layers of six neurons, random weights."""
    nets = {}
    for k, (name, (ins, centre, half, off, scale)) in enumerate(ORC_QUANTITIES.items()):
        nets[name] = random_ann(len(ins), seed + k, (6, 6), name, centre,
                                tuple(1.0 / h for h in half), off, scale)
    return nets


def orc(nets: dict | None = None, smooth_eps: float | None = 1e-4) -> BundledModel:
    """Geothermal ORC with recuperator and air-cooled condenser; maximise net power.

    Five decision variables (mass flow, two pressures, recuperator outlet
    enthalpy and isentropic turbine outlet enthalpy) and 32 constraints.
    """
    nets = nets or orc_surrogates()
    core = Component("ORC")
    m = core.make_operational_variable("m", (5.0, 50.0), init=20.0)
    p1 = core.make_operational_variable("p1", (1.0, 6.0), init=3.0)
    p2 = core.make_operational_variable("p2", (6.0, 20.0), init=12.0)
    h2r = core.make_operational_variable("h2r", (220.0, 320.0), init=260.0)
    h6is = core.make_operational_variable("h6is", (420.0, 520.0), init=460.0)
    N = {k: v for k, v in nets.items()}

    h1 = N["h_satliq"](p1)
    s1 = N["s_satliq"](p1)
    h2is = N["h_liq"](p2, s1)
    h3 = N["h_satliq"](p2)
    h4 = N["h_satvap"](p2)
    pump = pump_turbine("PUMP", "pump", ETA_P, m, h1, h2is)
    h2 = pump.get_expression("h_out")
    eco = heat_exchanger("ECO", StreamSide(MCP_GB, T_in=None, T_out=T_GB_OUT),
                         StreamSide(m, h_in=h2r, h_out=h3), duty_nonneg=True)
    t_b2 = eco.get_expression("hot_in")
    eva = heat_exchanger("EVA", StreamSide(MCP_GB, T_in=None, T_out=t_b2),
                         StreamSide(m, h_in=h3, h_out=h4), duty_nonneg=True)
    t_b1 = eva.get_expression("hot_in")
    sup = heat_exchanger("SUP", StreamSide(MCP_GB, T_in=T_GB_IN, T_out=t_b1),
                         StreamSide(m, h_in=h4, h_out=None), duty_nonneg=True)
    h5 = sup.get_expression("cold_out")
    tur = pump_turbine("TUR", "turbine", ETA_T, m, h5, h6is)
    h6 = tur.get_expression("h_out")
    rec = heat_exchanger("REC", StreamSide(m, h_in=h6, h_out=None),
                         StreamSide(m, h_in=h2, h_out=h2r), duty_nonneg=True)
    h6r = rec.get_expression("hot_out")
    cs = cooling_system("CS", m, N["h_satvap"](p1), h1, N["T_sat"](p1), smooth_eps=smooth_eps)
    mcp_cw = cs.get_expression("mcp_cw")
    con = heat_exchanger("CON", StreamSide(m, h_in=h6r, h_out=h1),
                         StreamSide(mcp_cw, T_in=288.0, T_out=None), duty_nonneg=True)
    t_cw_out = con.get_expression("cold_out")
    p_net = core.add_expression("P_net", tur.get_expression("P") - pump.get_expression("P")
                                - cs.get_expression("P"))
    T_liq, T_vap, T_sat = N["T_liq"], N["T_vap"], N["T_sat"]
    h_sv = N["h_satvap"]
    ge, le = core.add_ge_constraint, core.add_le_constraint
    # heat exchanger approach temperatures
    ge(t_b2 - T_liq(p2, h3), DT_HE, "eco_hot_end")
    ge(T_GB_OUT - T_liq(p2, h2r), DT_HE, "eco_cold_end")
    ge(t_b1 - T_sat(p2), DT_HE, "eva_in")
    ge(t_b2 - T_sat(p2), DT_HE, "eva_out")
    ge(T_GB_IN - T_vap(p2, h5), DT_HE, "sup_hot_end")
    ge(t_b1 - T_vap(p2, h4), DT_HE, "sup_cold_end")
    ge(T_vap(p1, h6) - T_liq(p2, h2r), DT_HE, "rec_hot_end")
    ge(T_vap(p1, h6r) - T_liq(p2, h2), DT_HE, "rec_cold_end")
    ge(T_vap(p1, h6r) - t_cw_out, DT_HE, "con_hot_end")
    ge(T_sat(p1) - 288.0, DT_HE, "con_pinch")
    # pump
    ge(p2 - p1, 1.0, "pressure_lift")
    ge(h2, h1, "pump_work")
    # turbine
    ge(h5, h_sv(p2), "superheated_inlet")
    le(h6is, h5, "expansion")
    ge(h6, h_sv(p1), "dry_outlet")
    # cooling water
    le(t_cw_out, 308.0, "cw_outlet")
    ge(mcp_cw, 0.0, "cw_flow")
    # net power
    ge(p_net, 0.0, "net_power")
    # surrogate validity ranges
    le(h5, 560.0, "valid_h5")
    ge(h6, 400.0, "valid_h6")
    ge(h6r, 380.0, "valid_h6r")
    ge(h6r, h_sv(p1), "valid_h6r_vapour")
    le(h2r, h3, "valid_h2r_liquid")
    ge(s1, 0.9, "valid_s1_lo")
    le(s1, 1.6, "valid_s1_hi")
    le(h2, h3, "valid_h2_liquid")
    le(t_b1, T_GB_IN, "valid_brine")
    s = System("GEO", [core, pump, eco, eva, sup, tur, rec, cs, con])
    obj = -p_net
    p = Problem(s, 0.0, obj, timesteps={"design": ([1], 1.0)}, scenarios=["design"], name="orc")
    return BundledModel("orc", p, {"P_net": (0.0, obj)}, None,
                        "reduced-space ORC with eight property surrogates", {"nets": nets})


MODELS = {
    "mini-ies": mini_ies,
    "building-dr": building_dr,
    "dh-network": dh_network,
    "orc": orc,
}


def load_model(name: str) -> BundledModel:
    try:
        return MODELS[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {', '.join(MODELS)}") from None
