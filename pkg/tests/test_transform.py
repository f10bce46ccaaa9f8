import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from esopt import expr as ex
from esopt.expr import Symbol
from esopt.flatten import flatten
from esopt.model import Component
from esopt.problem import Problem
from esopt.solve import solve
from esopt import transform as tr

from conftest import DES, decay_problem, model_from_linearization


def euler_values(dt):
    sol = solve(flatten(decay_problem(dt)))
    vals = sol.operation["S.E"]
    return [(float(t) * dt, vals[("s", t)]) for (_, t) in sorted(vals, key=lambda k: int(k[1]))]


def test_single_step_matches_hand_update():
    assert euler_values(0.5)[0][1] == pytest.approx(2 / 3, abs=1e-12)


def test_first_order_convergence():
    errors = []
    for dt in (0.2, 0.1, 0.05):
        errors.append(max(abs(v - math.exp(-t)) for t, v in euler_values(dt)))
    for coarse, fine in zip(errors, errors[1:]):
        assert 1.8 <= coarse / fine <= 2.2


def test_zero_length_point_repeats_state():
    c = Component("S")
    c.make_state("E", lambda e: -e, initial=1.0, bounds=(0, 2))
    p = Problem(c, 0, 0, timesteps={"1": 1.0, "peak": 0.0})
    v = solve(flatten(p)).operation["S.E"]
    assert v[("nominal", "peak")] == pytest.approx(v[("nominal", "1")], abs=1e-12)


def test_euler_constraints_and_errors():
    p = decay_problem(0.25)
    links = tr.apply_implicit_euler(p)
    assert len(links) == 4
    c = Component("S")
    e = c.make_operational_variable("E", (0, 1))
    c.declare_state(e, -e)
    with pytest.raises(tr.MissingInitial):
        tr.apply_implicit_euler(Problem(c, 0, 0))


def test_pure_integrator():
    c = Component("TES")
    charge = c.make_operational_variable("E_in", (1, 1))
    c.make_state("E", charge, initial=0.0, bounds=(0, 10))
    p = Problem(c, 0, 0, timesteps={"1": 1.0, "2": 1.0})
    assert solve(flatten(p)).operation["TES.E"][("nominal", "2")] == pytest.approx(2.0, abs=1e-12)


# ---------------------------------------------------------------------------
# piecewise linearization

X = Symbol("P.x", DES, lb=0, ub=2)
Y = Symbol("P.y", DES, lb=0, ub=2)


def surrogate_range(grid, method, point):
    """Min and max surrogate value with the inputs pinned to ``point``."""
    art = tr.linearize(grid, "P.f", method)
    fixed = {sym.name: v for sym, v in zip(grid.symbols, point)}
    lo = solve(model_from_linearization(grid, art, fixed))
    hi = solve(model_from_linearization(grid, art, fixed, objective=-art.surrogate))
    assert lo.ok and hi.ok
    return lo.values["P.f"], hi.values["P.f"]


def test_square_exact_and_chord():
    grid = tr.PiecewiseGrid.sample(X ** 2, [(X, (0, 1, 2))])
    for method in ("cc", "mc"):
        assert surrogate_range(grid, method, (1.0,)) == pytest.approx((1.0, 1.0), abs=1e-9)
        assert surrogate_range(grid, method, (0.5,)) == pytest.approx((0.5, 0.5), abs=1e-9)


def test_methods_agree_on_square():
    grid = tr.PiecewiseGrid.sample(X ** 2, [(X, (0, 1, 2))])
    for x in (0, 0.5, 1, 1.5, 2):
        cc = surrogate_range(grid, "cc", (x,))
        mc = surrogate_range(grid, "mc", (x,))
        assert abs(cc[0] - mc[0]) <= 1e-9 and abs(cc[1] - mc[1]) <= 1e-9


def test_bilinear_corners():
    grid = tr.PiecewiseGrid.sample(X * Y, [(X, (0, 2)), (Y, (0, 2))])
    for corner in ((0, 0), (0, 2), (2, 0), (2, 2)):
        for method in ("cc", "mc"):
            lo, hi = surrogate_range(grid, method, corner)
            assert lo == pytest.approx(corner[0] * corner[1], abs=1e-9)
            assert hi == pytest.approx(lo, abs=1e-9)


def test_single_cell_has_no_binaries():
    e = Symbol("P.e", DES, lb=0, ub=1)
    grid = tr.PiecewiseGrid.sample(ex.exp(e), [(e, (0, 1))])
    art = tr.linearize_multiple_choice(grid, "P.f")
    assert art.aux_binary == []
    assert tr.linearize_convex_combination(grid, "P.f").aux_binary == []
    lo, hi = surrogate_range(grid, "mc", (1.0,))
    assert lo == pytest.approx(math.e, abs=1e-12)


def test_minimize_linearized_square():
    grid = tr.PiecewiseGrid.sample(X ** 2, [(X, (0, 1, 2))])
    sol = solve(model_from_linearization(grid, tr.linearize(grid, "P.f", "cc")))
    assert sol.values["P.x"] == pytest.approx(0, abs=1e-9)
    assert sol.values["P.f"] == pytest.approx(0, abs=1e-9)


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_methods_agree_on_random_grid(seed):
    rng = random.Random(seed)
    bx = sorted(rng.sample([0.0, 0.4, 0.9, 1.3, 2.0], 3))
    by = sorted(rng.sample([0.0, 0.7, 1.1, 2.0], 2))
    f = ex.exp(X / 2) * Y + X
    grid = tr.PiecewiseGrid.sample(f, [(X, tuple(bx)), (Y, tuple(by))])
    point = (rng.uniform(bx[0], bx[-1]), rng.uniform(by[0], by[-1]))
    cc = surrogate_range(grid, "cc", point)
    mc = surrogate_range(grid, "mc", point)
    expected = grid.interpolate(point)
    for v in cc + mc:
        assert abs(v - expected) <= 1e-9


def test_interpolant_vertex_exact_and_continuous():
    f = lambda x, y: math.sin(x) * y + x * x
    grid = tr.PiecewiseGrid.sample(f, [(X, (0, 0.5, 1.2, 2)), (Y, (0, 1, 2))])
    for v in grid.vertices():
        assert grid.interpolate(grid.point(v)) == pytest.approx(f(*grid.point(v)), abs=1e-12)
    for bx in (0.5, 1.2):
        for y in (0.3, 1.7):
            left = grid.interpolate((bx - 1e-10, y))
            right = grid.interpolate((bx + 1e-10, y))
            assert abs(left - right) <= 1e-8


def test_grid_validation():
    with pytest.raises(tr.GridMismatch):
        tr.PiecewiseGrid.sample(X, [(X, (0,))])
    with pytest.raises(tr.GridMismatch):
        tr.PiecewiseGrid.sample(X, [(X, (0, 2, 1))])
    with pytest.raises(tr.UnboundedVariable):
        free = Symbol("P.z", DES)
        tr.linearize(tr.PiecewiseGrid.sample(free, [(free, (0, 1))]), "P.f")
    with pytest.raises(tr.GridMismatch):
        tr.PiecewiseGrid.sample(X * Y, [(X, (0, 1))])


def test_uniform_grid_default():
    grid = tr.uniform_grid(X ** 2, [X])
    assert grid.dims[0][1] == (0.0, 0.5, 1.0, 1.5, 2.0)


def test_grid_file_round_trip():
    text = "# sizing grid\n[HP.cost_curve]\nHP.E_nom = 0 5 15 30\nHP.T = uniform 4\n"
    specs = tr.parse_grid_file(text)
    assert specs[0].target == "HP.cost_curve"
    assert specs[0].breakpoints == (("HP.E_nom", (0.0, 5.0, 15.0, 30.0)), ("HP.T", ("uniform", 4)))
    assert tr.parse_grid_file(tr.format_grid_file(specs)) == specs
    with pytest.raises(tr.GridFileError):
        tr.parse_grid_file("[A.b]\nA.x = 3 1\n")
    with pytest.raises(tr.GridFileError):
        tr.parse_grid_file("A.x = 0 1\n")


# ---------------------------------------------------------------------------
# smoothing and tanh

def test_smooth_max_examples():
    a, b = Symbol("P.a", DES), Symbol("P.b", DES)
    s = tr.smooth_max(a, b, 1e-4)
    assert ex.evaluate(s, {a: 3, b: 1}) == pytest.approx(3.00005, abs=1e-12)
    assert ex.evaluate(s, {a: 0, b: 0}) == pytest.approx(5e-5, abs=1e-15)
    with pytest.raises(tr.NonPositiveEps):
        tr.smooth_max(a, b, 0.0)


def test_smooth_max_sweep():
    a, b = Symbol("P.a", DES), Symbol("P.b", DES)
    eps = 1e-4
    s = tr.smooth_max(a, b, eps)
    for i in range(1000):
        d = -1 + 2 * i / 999
        if abs(d) < 2 * eps:
            continue
        val = ex.evaluate(s, {a: 0.3 + d, b: 0.3})
        assert abs(val - max(0.3 + d, 0.3)) <= eps


def test_smooth_nonsmooth_max_replaces_nodes():
    a = Symbol("P.a", DES)
    e = ex.emax(a, 1e-5) * 2
    smoothed = tr.smooth_nonsmooth_max(e, 1e-4)
    assert "max" not in ex.print_generic(smoothed)
    ex.differentiate(smoothed, a)


def test_reformulate_tanh():
    x = Symbol("P.x", DES)
    assert ex.evaluate(tr.reformulate_tanh(ex.tanh(x)), {x: 0}) == 0.0
    assert ex.evaluate(tr.reformulate_tanh(ex.tanh(x)), {x: 1}) == pytest.approx(math.tanh(1), abs=1e-12)
    plain = x * 2 + ex.exp(x)
    assert tr.reformulate_tanh(plain) is plain or tr.reformulate_tanh(plain) == plain
    rng = random.Random(9)
    nested = ex.tanh(0.5 * ex.tanh(x) + 0.2) * 3
    flat = tr.reformulate_tanh(nested)
    assert "tanh" not in ex.print_generic(flat)
    for _ in range(100):
        v = rng.uniform(-5, 5)
        assert abs(ex.evaluate(flat, {x: v}) - ex.evaluate(nested, {x: v})) <= 1e-12
