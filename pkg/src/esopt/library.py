"""Reusable component builders for energy-system models."""
from __future__ import annotations

import csv
import io
import math
from importlib import resources
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .expr import (Const, Domain, Expr, Symbol, SymbolKind, add, as_expr, emax, emin, evaluate,
                   mul, power, solve_linear, substitute, tanh)
from .model import Component, ModelError, Polarity
from .transform import smooth_max

# physical constants used by the case-study builders
U_NW = 0.035  # W/(m K), pipe heat transfer per metre
T_GROUND = 8.0  # degC
ETA_COP = 0.6
Q_HP_MAX = 400.0  # kW
DP_FAN = 170.0  # Pa
ETA_FAN = 0.65
CP_AIR = 1000.0  # J/(kg K)
RHO_AIR = 1.2  # kg/m3
T_CW_IN = 288.0  # K
DT_MIN = 10.0  # K
MAX_FLOOR = 1e-5  # K



def _table(filename: str) -> dict:
    text = resources.files(__package__).joinpath("data", filename).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    return {r[0]: tuple(float(v) for v in r[1:]) for r in rows[1:] if r}


# flow temperature (degC) at -12 degC and at 20 degC ambient, per consumer group
HEATING_CURVES = _table("heating_curves.csv")
# specific cost (EUR/kW) and fixed cost (EUR)
COSTS = _table("costs.csv")


class BadParams(ModelError, ValueError):
    pass


class ShapeMismatch(ModelError, ValueError):
    pass


class OverdeterminedSide(ModelError):
    pass


class UnderdeterminedBothSides(ModelError):
    pass


def _require(cond, msg):
    if not cond:
        raise BadParams(msg)


# ---------------------------------------------------------------------------
# sources, sinks and generic units

def grid_component(name: str, price=0.0, emission=0.0, e_max: float = 1e4) -> Component:
    """Purchase from an external grid: output connector ``OUT``."""
    c = Component(name)
    e = c.make_operational_variable("E", (0.0, e_max))
    price = price if isinstance(price, Expr) else c.make_parameter("price", price)
    factor = emission if isinstance(emission, Expr) else c.make_parameter("emission_factor", emission)
    c.add_output("OUT", -e)
    c.add_expression("variable_costs", price * e)
    c.add_expression("emissions", factor * e)
    return c


def demand_component(name: str, value=None) -> Component:
    """Fixed demand parameter ``demand`` drawn through input connector ``IN``."""
    c = Component(name)
    d = c.make_parameter("demand", value)
    c.add_connector("IN", d, Polarity.BIDIRECTIONAL)
    return c


def _power_law_cost(c: Component, size: Symbol, C_ref: float, M: float, hi: float) -> Symbol:
    """``C_I = C_ref * size**M`` with ``C_I`` bounded by the cost of the largest unit."""
    c_inv = c.make_design_variable("C_I", (0.0, C_ref * hi ** M))
    c.add_eq_constraint(c_inv, c.add_expression("cost_curve", C_ref * power(size, M)), "investment")
    c.add_expression("investment_costs", c_inv)
    return c_inv


def conversion_component(name: str, C_ref: float, M: float, eta=1.0, E_nom_bounds=(0.0, 100.0),
                         min_partload: float = 0.0, input_max: float | None = None,
                         build: bool = True) -> Component:
    """Conversion unit with a power-law cost curve, efficiency and part-load limits.

    ``eta`` is a number, an expression, a callable ``eta(E_out, E_nom)``, or
    a string naming a new (typically time-indexed) parameter.
    Stored expressions: ``cost_curve`` (``C_ref * E_nom**M``),
    ``investment_costs`` (``C_I``) and ``input`` / ``output`` flows.
    """
    _require(C_ref > 0, "C_ref must be positive")
    _require(0 < M <= 1, "M must lie in (0, 1]")
    _require(0 <= min_partload < 1, "min_partload must lie in [0, 1)")
    lo, hi = E_nom_bounds
    _require(0 <= lo <= hi and hi > 0, "bad nominal size bounds")
    c = Component(name)
    e_nom = c.make_design_variable("E_nom", (lo, hi))
    _power_law_cost(c, e_nom, C_ref, M, hi)
    e_out = c.make_operational_variable("E_out", (0.0, hi))
    e_in = c.make_operational_variable("E_in", (0.0, input_max if input_max is not None else 10 * hi))
    if isinstance(eta, str):
        eta = c.make_parameter(eta)
    elif callable(eta) and not isinstance(eta, Expr):
        eta = eta(e_out, e_nom)
    eta = as_expr(eta)
    c.add_eq_constraint(e_out, eta * e_in, "conversion")
    c.add_le_constraint(e_out, e_nom, "nominal")
    if build:
        b = c.make_design_variable("build", (0, 1), Domain.BINARY)
        c.add_le_constraint(e_nom, hi * b, "build_limit")
    if min_partload > 0:
        on = c.make_operational_variable("on", (0, 1), Domain.BINARY)
        c.add_le_constraint(e_out, hi * on, "on_limit")
        # E_out >= mpl*E_nom when on; relaxed by mpl*E_nom_max when off
        c.add_ge_constraint(e_out, min_partload * e_nom - min_partload * hi * (1 - on), "partload")
        if build:
            c.add_le_constraint(on, b, "on_build")
    c.add_input("IN", e_in)
    c.add_output("OUT", -e_out)
    c.add_expression("input", e_in)
    c.add_expression("output", e_out)
    return c


def storage_component(name: str, eta_in: float = 1.0, eta_out: float = 1.0, tau: float = math.inf,
                      capacity=(0.0, 100.0), rate: float = 1.0, c_spec: float = 0.0,
                      c_fix: float = 0.0, initial=0.0, build: bool = True) -> Component:
    """Storage with ``dE/dt = eta_in*E_in - E_out/eta_out - E/tau`` and a bidirectional port ``IO``."""
    _require(0 < eta_in <= 1 and 0 < eta_out <= 1, "efficiencies must lie in (0, 1]")
    _require(tau > 0, "tau must be positive")
    lo, hi = capacity
    _require(0 <= lo <= hi, "bad capacity bounds")
    c = Component(name)
    cap = c.make_design_variable("capacity", (lo, hi))
    e_in = c.make_operational_variable("E_in", (0.0, rate * hi))
    e_out = c.make_operational_variable("E_out", (0.0, rate * hi))

    def rhs(E):
        r = eta_in * e_in - e_out / eta_out
        return r if math.isinf(tau) else r - E / tau
    decl = c.make_state("E", rhs, initial, (0.0, hi), der_bounds=(-3 * rate * hi, 3 * rate * hi))
    c.add_le_constraint(decl.state, cap, "capacity_limit")
    c.add_le_constraint(e_in, rate * cap, "charge_limit")
    c.add_le_constraint(e_out, rate * cap, "discharge_limit")
    inv = c_spec * cap
    if build:
        b = c.make_design_variable("build", (0, 1), Domain.BINARY)
        c.add_le_constraint(cap, hi * b, "build_limit")
        inv = inv + c_fix * b
    c.add_connector("IO", e_in - e_out, Polarity.BIDIRECTIONAL)
    c.add_expression("investment_costs", inv)
    return c


# ---------------------------------------------------------------------------
# buildings

def thermal_zone(name: str, rho: float, V: float, cp: float, T_bounds=None, T_init=20.0,
                 q_max: float = 1e6) -> Component:
    """Lumped thermal mass: ``rho*V*cp*dT/dt = Q_net``; heat port ``HEAT`` (positive into the zone)."""
    _require(rho > 0 and V > 0 and cp > 0, "rho, V and cp must be positive")
    c = Component(name)
    q = c.make_operational_variable("Q_net", (-q_max, q_max))
    c.make_state("T", q / (rho * V * cp), T_init, T_bounds or (-100.0, 200.0),
                 der_bounds=(-q_max / (rho * V * cp), q_max / (rho * V * cp)))
    c.add_connector("HEAT", q, Polarity.BIDIRECTIONAL)
    return c


def heat_transfer(name: str, U: float, A: float, T_a, T_b, q_max: float = 1e6) -> Component:
    """``Q = U*A*(T_a - T_b)`` from side a to side b; ports ``A`` (draws Q) and ``B`` (delivers Q)."""
    _require(U >= 0 and A > 0, "U must be nonnegative and A positive")
    c = Component(name)
    q = c.make_operational_variable("Q", (-q_max, q_max))
    c.add_eq_constraint(q, U * A * (as_expr(T_a) - as_expr(T_b)), "transfer")
    c.add_connector("A", q, Polarity.BIDIRECTIONAL)
    c.add_connector("B", -q, Polarity.BIDIRECTIONAL)
    return c


# ---------------------------------------------------------------------------
# district heating

def carnot_heat_pump(name: str, eta_COP: float = ETA_COP, Q_max: float = Q_HP_MAX,
                     cp: float = 4.18, temperatures: Mapping | None = None,
                     build: bool = True, c_spec: float = 0.0) -> Component:
    """Heat pump with a Carnot-fraction efficiency.

    ``temperatures`` may supply expressions (K) for ``T_re_con``, ``T_re_eva``,
    ``T_fl_con`` and ``T_fl_eva``; missing ones become operational variables.
    """
    _require(0 < eta_COP <= 1, "eta_COP must lie in (0, 1]")
    _require(Q_max > 0, "Q_max must be positive")
    c = Component(name)
    q = c.make_operational_variable("Q", (0.0, Q_max))
    p = c.make_operational_variable("P", (0.0, Q_max))
    m_eva = c.make_operational_variable("m_eva", (0.0, 1e3))
    m_con = c.make_operational_variable("m_con", (0.0, 1e3))
    temps = dict(temperatures or {})
    T = {}
    for key in ("T_re_con", "T_re_eva", "T_fl_con", "T_fl_eva"):
        T[key] = as_expr(temps[key]) if key in temps else c.make_operational_variable(key, (250.0, 420.0))
    q_nom = c.make_design_variable("Q_nom", (0.0, Q_max))
    if build:
        b = c.make_design_variable("build", (0, 1), Domain.BINARY)
        c.add_le_constraint(q, b * Q_max, "QHP")
        c.add_le_constraint(q_nom, b * Q_max, "build_limit")
    c.add_le_constraint(q, q_nom, "nominal")
    c.add_eq_constraint(p * T["T_re_con"] * eta_COP, q * (T["T_re_con"] - T["T_re_eva"]), "carnot")
    c.add_eq_constraint(m_eva * cp * (T["T_fl_eva"] - T["T_re_eva"]) + p,
                        m_con * cp * (T["T_re_con"] - T["T_fl_con"]), "energy_balance")
    c.add_output("HEAT_OUT", -q)
    c.add_input("POWER_IN", p)
    c.add_connector("HEAT_IN", q - p, Polarity.BIDIRECTIONAL)
    c.add_expression("investment_costs", c_spec * q_nom)
    return c


def heat_source(name: str, c_spec: float, c_fix: float, eta: float = 1.0,
                Q_max: float = 100.0) -> Component:
    """Boiler or heating rod: ``Q = eta * E_in`` with linear cost ``c_spec*Q_nom + c_fix*build``."""
    _require(0 < eta <= 1.2, "eta out of range")
    c = Component(name)
    q_nom = c.make_design_variable("Q_nom", (0.0, Q_max))
    b = c.make_design_variable("build", (0, 1), Domain.BINARY)
    q = c.make_operational_variable("Q", (0.0, Q_max))
    e = c.make_operational_variable("E_in", (0.0, Q_max / eta))
    c.add_le_constraint(q_nom, Q_max * b, "build_limit")
    c.add_le_constraint(q, q_nom, "nominal")
    c.add_eq_constraint(q, eta * e, "conversion")
    c.add_input("IN", e)
    c.add_output("OUT", -q)
    c.add_expression("investment_costs", c_spec * q_nom + c_fix * b)
    return c


def chp_subsystem(name: str, variants: Mapping) -> "System":
    """Alternative CHP units of which at most one may be built.

    ``variants`` maps a label to keyword arguments for a two-output unit:
    ``C_ref``, ``M``, ``eta_el``, ``eta_th`` and ``P_max``.  The subsystem
    exposes ``GAS_IN``, ``POWER_OUT`` and ``HEAT_OUT`` as connection stubs.
    """
    from .system import System
    _require(len(variants) >= 1, "need at least one CHP variant")
    sub = System(name)
    builds, gas, elec, heat = [], [], [], []
    for label, kw in variants.items():
        c = Component(f"{name}.{label}")
        p_max = kw["P_max"]
        _require(0 < kw["eta_el"] and 0 < kw["eta_th"] and kw["eta_el"] + kw["eta_th"] <= 1.0,
                 "CHP efficiencies must be positive with a sum of at most 1")
        p_nom = c.make_design_variable("P_nom", (0.0, p_max))
        b = c.make_design_variable("build", (0, 1), Domain.BINARY)
        _power_law_cost(c, p_nom, kw["C_ref"], kw["M"], p_max)
        fuel = c.make_operational_variable("F", (0.0, p_max / kw["eta_el"]))
        p = c.make_operational_variable("P", (0.0, p_max))
        q = c.make_operational_variable("Q", (0.0, p_max * kw["eta_th"] / kw["eta_el"]))
        c.add_eq_constraint(p, kw["eta_el"] * fuel, "power")
        c.add_eq_constraint(q, kw["eta_th"] * fuel, "heat")
        c.add_le_constraint(p, p_nom, "nominal")
        c.add_le_constraint(p_nom, p_max * b, "build_limit")
        sub.add_component(c)
        builds.append(b)
        gas.append(fuel)
        elec.append(p)
        heat.append(q)
    sub.add_le_constraint(add(*builds), 1.0, "at_most_one")
    sub.add_connector("GAS_IN", add(*gas), Polarity.INPUT)
    sub.add_connector("POWER_OUT", -add(*elec), Polarity.OUTPUT)
    sub.add_connector("HEAT_OUT", -add(*heat), Polarity.OUTPUT)
    return sub


def pipe_network(name: str, segments: Sequence, U: float = U_NW, T_gr: float = T_GROUND,
                 cp: float = 4180.0, m_max: float = 100.0, consumers: Mapping | None = None,
                 q_max: float = 1e6, ambient=None, dT_flow: float = 15.0) -> Component:
    """Two-pipe network with length-proportional heat losses (SI units, temperatures in degC).

    ``segments`` lists ``(length_m, cost)``; ``consumers`` maps a consumer id
    to the segment indices it needs.  A consumer link binary may only be 1
    when all of its segments are built.
    """
    _require(U > 0, "U must be positive")
    _require(all(l > 0 for l, _ in segments), "segment lengths must be positive")
    c = Component(name)
    bs = [c.make_design_variable(f"b{i}", (0, 1), Domain.BINARY) for i in range(len(segments))]
    total = float(sum(l for l, _ in segments))
    l_nw = c.make_design_variable("l_NW", (0.0, total))
    c.add_eq_constraint(l_nw, add(*[l * b for (l, _), b in zip(segments, bs)]), "network_length")
    m = c.make_operational_variable("m", (0.0, m_max))
    dt_fl = c.make_operational_variable("dT_fl", (0.0, 50.0))
    dt_re = c.make_operational_variable("dT_re", (0.0, 50.0))
    t_fl = c.make_operational_variable("T_fl", (0.0, 120.0))
    t_re = c.make_operational_variable("T_re", (0.0, 120.0))
    c.add_eq_constraint(m * cp * dt_fl, U * l_nw * (t_fl - T_gr), "thloss_flow")
    c.add_eq_constraint(m * cp * dt_re, U * l_nw * (t_re + dt_re - T_gr), "thloss_return")
    c.add_eq_constraint(t_fl, t_re + dT_flow, "flow_offset")
    if ambient is not None:
        t_max = c.make_design_variable("T_re_max", (20.0, 60.0))
        t_min = c.make_design_variable("T_re_min", (20.0, 60.0))
        frac = (20.0 - as_expr(ambient)) / 32.0
        c.add_eq_constraint(t_re, t_min + (t_max - t_min) * frac, "return_curve")
        c.add_le_constraint(t_min, t_max, "return_order")
    deliveries = []
    for cid, needed in (consumers or {}).items():
        link = c.make_design_variable(f"link_{cid}", (0, 1), Domain.BINARY)
        for i in needed:
            c.add_le_constraint(link, bs[i], f"link_{cid}_needs_b{i}")
        q = c.make_operational_variable(f"Q_{cid}", (0.0, q_max))
        c.add_le_constraint(q, q_max * link, f"link_{cid}_gate")
        c.add_output(f"HEAT_{cid}", -q)
        deliveries.append(q)
    losses = m * cp * (dt_fl + dt_re)
    c.add_expression("losses", losses)
    c.add_connector("HEAT_IN", add(*deliveries, losses), Polarity.BIDIRECTIONAL)
    c.add_expression("investment_costs", add(*[cost * b for (_, cost), b in zip(segments, bs)]))
    return c


def heating_curve(T_amb, T_fl_max: float, T_fl_min: float, T_cold: float = -12.0,
                  T_warm: float = 20.0) -> Expr:
    """Linear flow temperature between the two design points, clamped outside them."""
    t = emin(emax(as_expr(T_amb), T_cold), T_warm)
    return T_fl_max + (T_fl_min - T_fl_max) * (t - T_cold) / (T_warm - T_cold)


def heating_curve_value(T_amb: float, T_fl_max: float, T_fl_min: float,
                        T_cold: float = -12.0, T_warm: float = 20.0) -> float:
    return evaluate(heating_curve(T_amb, T_fl_max, T_fl_min, T_cold, T_warm))


def consumer_demand(name: str, group: str | None = None, T_fl_max: float | None = None,
                    T_fl_min: float | None = None) -> Component:
    """Heat demand with a heating-curve flow temperature expression ``T_fl``."""
    if group is not None:
        T_fl_max, T_fl_min = HEATING_CURVES[group]
    _require(T_fl_max is not None and T_fl_min is not None, "heating curve needed")
    c = Component(name)
    q = c.make_parameter("Q_dem")
    t_amb = c.make_parameter("T_amb")
    c.add_expression("T_fl", heating_curve(t_amb, T_fl_max, T_fl_min))
    c.add_connector("IN", q, Polarity.BIDIRECTIONAL)
    return c


# ---------------------------------------------------------------------------
# process components (reduced space)

@dataclass(frozen=True)
class StreamSide:
    """One side of a heat exchanger.

    ``flow`` is a mass flow when enthalpies are given and a heat-capacity
    flow when temperatures are given.  One terminal value may be ``None``.
    """

    flow: object
    h_in: object = None
    h_out: object = None
    T_in: object = None
    T_out: object = None

    @property
    def mode(self) -> str:
        has_h = self.h_in is not None or self.h_out is not None
        has_T = self.T_in is not None or self.T_out is not None
        if has_h and has_T:
            raise OverdeterminedSide("a side takes either enthalpies or temperatures")
        return "h" if has_h else "T"

    def terminals(self):
        if self.mode == "h":
            return self.h_in, self.h_out
        return self.T_in, self.T_out


def _duty(side: StreamSide, hot: bool, unknown: Symbol, which: str):
    a, b = side.terminals()
    a = unknown if a is None and which == "in" else a
    b = unknown if b is None and which == "out" else b
    diff = as_expr(a) - as_expr(b) if hot else as_expr(b) - as_expr(a)
    return as_expr(side.flow) * diff


def heat_exchanger(name: str, hot: StreamSide, cold: StreamSide, reduced: bool = True,
                   duty_nonneg: bool = False, bounds=(-1e9, 1e9)) -> Component:
    """Energy balance ``Q_h == Q_c`` between two streams.

    With one terminal value missing the balance is solved for it.  In
    reduced form the result is stored as an expression (``hot_in``,
    ``hot_out``, ``cold_in`` or ``cold_out``); otherwise a variable and the
    balance constraint are added.  ``Q`` is always stored.
    """
    c = Component(name)
    missing = []
    for tag, side in (("hot", hot), ("cold", cold)):
        a, b = side.terminals()
        if a is None and b is None:
            raise UnderdeterminedBothSides(f"{name}: {tag} side has no terminal values")
        if a is None:
            missing.append((tag, "in"))
        if b is None:
            missing.append((tag, "out"))
    if len(missing) > 1:
        raise UnderdeterminedBothSides(f"{name}: {len(missing)} unknown terminal values")
    placeholder = Symbol(f"{name}.unknown", SymbolKind.OPERATIONAL)
    tag, which = missing[0] if missing else (None, None)
    q_h = _duty(hot, True, placeholder, which if tag == "hot" else "")
    q_c = _duty(cold, False, placeholder, which if tag == "cold" else "")
    if tag is None:
        balance = q_h - q_c
        consistent = False
        try:
            consistent = abs(evaluate(balance)) <= 1e-12 * max(1.0, abs(evaluate(q_h)))
        except Exception:
            consistent = balance == Const(0.0)
        if not consistent:
            c.add_eq_constraint(q_h, q_c, "EB")
        c.add_expression("Q", q_h)
    else:
        key = f"{tag}_{which}"
        if reduced:
            value = solve_linear(q_h - q_c, placeholder)
            c.add_expression(key, value)
            c.add_expression("Q", substitute(q_h, {placeholder: value}))
        else:
            var = c.make_operational_variable(key, bounds)
            q_h = substitute(q_h, {placeholder: var})
            q_c = substitute(q_c, {placeholder: var})
            c.add_eq_constraint(q_h, q_c, "EB")
            c.add_expression(key, var)
            c.add_expression("Q", q_h)
    if duty_nonneg:
        c.add_ge_constraint(c.get_expression("Q"), 0.0, "duty")
    return c


def pump_turbine(name: str, kind: str, eta_is: float, m, h_in, h_is_out) -> Component:
    """Pump or turbine with isentropic efficiency; stores ``P`` and ``h_out``."""
    _require(kind in ("pump", "turbine"), "kind must be 'pump' or 'turbine'")
    _require(0 < eta_is <= 1, "eta_is must lie in (0, 1]")
    m, h_in, h_is = as_expr(m), as_expr(h_in), as_expr(h_is_out)
    c = Component(name)
    if kind == "pump":
        c.add_expression("P", m * (h_is - h_in) / eta_is)
        c.add_expression("h_out", h_in + (h_is - h_in) / eta_is)
    else:
        c.add_expression("P", m * (h_in - h_is) * eta_is)
        c.add_expression("h_out", h_in - eta_is * (h_in - h_is))
    return c


def cooling_system(name: str, m, h_pinch, h_1, T_sat, T_cw_in: float = T_CW_IN,
                   dT_min: float = DT_MIN, dp_fan: float = DP_FAN, eta_fan: float = ETA_FAN,
                   cp_air: float = CP_AIR, rho_air: float = RHO_AIR,
                   smooth_eps: float | None = 1e-4) -> Component:
    """Cooling-water heat-capacity flow from a condenser pinch and the fan power.

    ``smooth_eps=None`` keeps the exact ``max``.  Stores ``pinch_gap``,
    ``mcp_cw``, ``mcp_air`` and ``P``.
    """
    _require(0 < eta_fan <= 1, "eta_fan must lie in (0, 1]")
    _require(dp_fan > 0 and cp_air > 0 and rho_air > 0, "fan parameters must be positive")
    c = Component(name)
    gap = as_expr(T_sat) - dT_min - T_cw_in
    denom = emax(MAX_FLOOR, gap) if smooth_eps is None else smooth_max(MAX_FLOOR, gap, smooth_eps)
    mcp_cw = as_expr(m) * (as_expr(h_pinch) - as_expr(h_1)) / denom
    c.add_expression("pinch_gap", gap)
    c.add_expression("denominator", denom)
    c.add_expression("mcp_cw", mcp_cw)
    c.add_expression("mcp_air", mcp_cw)
    c.add_expression("P", mcp_cw * dp_fan / (cp_air * rho_air * eta_fan))
    return c


# ---------------------------------------------------------------------------
# neural-network surrogates

@dataclass(frozen=True)
class AnnSurrogate:
    """Feedforward network with tanh hidden layers and a linear output."""

    weights: tuple  # per layer, rows of (n_out x n_in)
    biases: tuple
    input_offset: tuple = ()
    input_scale: tuple = ()
    output_offset: float = 0.0
    output_scale: float = 1.0
    name: str = "ann"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("weights and biases need one entry per layer")
        n_prev = len(self.weights[0][0]) if self.weights[0] else 0
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if len(W) != len(b) or any(len(row) != n_prev for row in W):
                raise ShapeMismatch(f"layer {k}: inconsistent shapes")
            n_prev = len(W)
        if n_prev != 1:
            raise ShapeMismatch("output layer must have one neuron")
        n_in = self.n_inputs
        for vec in (self.input_offset, self.input_scale):
            if vec and len(vec) != n_in:
                raise ShapeMismatch("input scaling length must equal the input count")

    @property
    def n_inputs(self) -> int:
        return len(self.weights[0][0])

    @property
    def hidden_sizes(self) -> tuple:
        return tuple(len(W) for W in self.weights[:-1])

    def expression(self, inputs: Sequence) -> Expr:
        if len(inputs) != self.n_inputs:
            raise ShapeMismatch(f"{self.name} expects {self.n_inputs} inputs, got {len(inputs)}")
        xs = [as_expr(x) for x in inputs]
        if self.input_offset:
            xs = [(x - o) * s for x, o, s in zip(xs, self.input_offset, self.input_scale)]
        layer = xs
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            last = k == len(self.weights) - 1
            out = []
            for row, bias in zip(W, b):
                z = add(bias, *[mul(w, x) for w, x in zip(row, layer)])
                out.append(z if last else tanh(z))
            layer = out
        return add(self.output_offset, mul(self.output_scale, layer[0]))

    def __call__(self, *inputs) -> Expr:
        return self.expression(inputs)

    def forward(self, x: Sequence[float]) -> float:
        """Plain matrix forward pass."""
        v = np.asarray(x, dtype=float)
        if self.input_offset:
            v = (v - np.asarray(self.input_offset)) * np.asarray(self.input_scale)
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            v = np.asarray(W) @ v + np.asarray(b)
            if k < len(self.weights) - 1:
                v = np.tanh(v)
        return float(self.output_offset + self.output_scale * v[0])


def ann_surrogate(weights, biases, inputs, **scaling) -> Expr:
    """Closed-form expression of a tanh network evaluated at ``inputs``."""
    net = AnnSurrogate(tuple(tuple(tuple(map(float, r)) for r in W) for W in weights),
                       tuple(tuple(map(float, b)) for b in biases), **scaling)
    return net.expression(inputs)


def random_ann(n_inputs: int, seed: int, hidden=(6, 6), name="ann", input_offset=(),
               input_scale=(), output_offset=0.0, output_scale=1.0) -> AnnSurrogate:
    """Stub network with seeded random weights (for structure tests)."""
    rng = np.random.default_rng(seed)
    sizes = [n_inputs, *hidden, 1]
    W, B = [], []
    for a, b in zip(sizes, sizes[1:]):
        W.append(tuple(tuple(float(v) for v in row) for row in rng.normal(0, 0.5, (b, a))))
        B.append(tuple(float(v) for v in rng.normal(0, 0.1, b)))
    return AnnSurrogate(tuple(W), tuple(B), tuple(input_offset), tuple(input_scale),
                        output_offset, output_scale, name)


def format_ann(net: AnnSurrogate) -> str:
    """Text form: header, optional scaling lines, then per-layer weight rows and a bias row."""
    lines = [f"ann {net.name} {net.n_inputs}"]
    if net.input_offset:
        lines.append("input_offset " + " ".join(repr(v) for v in net.input_offset))
        lines.append("input_scale " + " ".join(repr(v) for v in net.input_scale))
    lines.append(f"output {net.output_offset!r} {net.output_scale!r}")
    for W, b in zip(net.weights, net.biases):
        lines.append(f"layer {len(W)}")
        lines.extend("w " + " ".join(repr(v) for v in row) for row in W)
        lines.append("b " + " ".join(repr(v) for v in b))
    return "\n".join(lines) + "\n"


def parse_ann(text: str) -> AnnSurrogate:
    name, n_in = "ann", None
    io, isc, oo, osc = (), (), 0.0, 1.0
    W, B = [], []
    rows = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        key, vals = parts[0], parts[1:]
        try:
            if key == "ann":
                name, n_in = vals[0], int(vals[1])
            elif key == "input_offset":
                io = tuple(map(float, vals))
            elif key == "input_scale":
                isc = tuple(map(float, vals))
            elif key == "output":
                oo, osc = float(vals[0]), float(vals[1])
            elif key == "layer":
                rows = []
                W.append(rows)
            elif key == "w":
                rows.append(tuple(map(float, vals)))
            elif key == "b":
                B.append(tuple(map(float, vals)))
            else:
                raise ValueError(key)
        except (ValueError, IndexError, AttributeError):
            raise ShapeMismatch(f"line {lineno}: cannot parse {raw!r}") from None
    net = AnnSurrogate(tuple(tuple(r) for r in W), tuple(B), io, isc, oo, osc, name)
    if n_in is not None and net.n_inputs != n_in:
        raise ShapeMismatch("declared input count differs from the first layer")
    return net
