"""Unit checks for the conic-program IR and the interior-point backend.

Each problem is tiny and has a hand-computable optimum.
"""

import numpy as np
import pytest

from isacwave.conic import ConicProgram, LinExpr, solve_conic


def test_linexpr_algebra():
    e = LinExpr.var(0) * 2.0 + LinExpr.var(1, -1.0) + 3.0
    x = np.array([1.5, 4.0])
    assert e.value(x) == pytest.approx(2.0 * 1.5 - 4.0 + 3.0)
    f = (e - LinExpr.var(0)) * 0.5
    assert f.value(x) == pytest.approx(0.5 * (1.5 - 4.0 + 3.0))
    g = -e + 1.0
    assert g.value(x) == pytest.approx(1.0 - e.value(x))


def test_lp_corner():
    # max x + y  s.t.  x + 2y <= 4, 3x + y <= 6, x,y >= 0  -> (8/5, 6/5)
    p = ConicProgram()
    x = p.add_var("x", lb=0.0)
    y = p.add_var("y", lb=0.0)
    p.add_ineq(LinExpr.var(x) + LinExpr.var(y) * 2.0, 4.0)
    p.add_ineq(LinExpr.var(x) * 3.0 + LinExpr.var(y), 6.0)
    p.set_objective(LinExpr.var(x) + LinExpr.var(y))
    res = solve_conic(p)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(14.0 / 5.0, rel=1e-7)
    assert res.x[x] == pytest.approx(8.0 / 5.0, rel=1e-6)
    assert res.x[y] == pytest.approx(6.0 / 5.0, rel=1e-6)


def test_equality_constraint():
    # max x - y  s.t.  x + y == 1, 0 <= x <= 0.25  -> x=0.25, y=0.75
    p = ConicProgram()
    x = p.add_var("x", lb=0.0, ub=0.25)
    y = p.add_var("y")
    p.add_eq(LinExpr.var(x) + LinExpr.var(y), 1.0)
    p.set_objective(LinExpr.var(x) - LinExpr.var(y))
    res = solve_conic(p)
    assert res.status == "optimal"
    assert res.x[x] == pytest.approx(0.25, abs=1e-7)
    assert res.x[y] == pytest.approx(0.75, abs=1e-7)


def test_soc_ball():
    # max x + 2y  s.t.  ||(x, y)|| <= 5  -> 5*sqrt(5) at (sqrt5, 2sqrt5)
    p = ConicProgram()
    x = p.add_var("x")
    y = p.add_var("y")
    p.add_soc(LinExpr.constant(5.0), [LinExpr.var(x), LinExpr.var(y)])
    p.set_objective(LinExpr.var(x) + LinExpr.var(y) * 2.0)
    res = solve_conic(p)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(5.0 * np.sqrt(5.0), rel=1e-7)


def test_rotated_soc_hyperbola():
    # max j  s.t.  t * u >= j^2 with t = 2, u = 3 encoded as
    # ||(sqrt2 * j, t - u)|| <= t + u  ->  j = sqrt(6)
    p = ConicProgram()
    j = p.add_var("j", lb=0.0)
    t, u = 2.0, 3.0
    p.add_soc(LinExpr.constant(t + u),
              [LinExpr.var(j) * (2.0 / np.sqrt(2.0)) * np.sqrt(2.0) * 0.5 * 2.0,
               LinExpr.constant(t - u)])
    # bound row above encodes ||(2j, t-u)|| <= t+u  <=>  j^2 <= t*u
    p.set_objective(LinExpr.var(j))
    res = solve_conic(p)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(np.sqrt(6.0), rel=1e-7)


def test_exp_cone_log():
    # max y s.t. (y*ln2, 1, 1 + g) in Kexp  <=>  y <= log2(1+g), g = 3 -> y = 2
    p = ConicProgram()
    y = p.add_var("rate")
    p.add_exp(LinExpr.var(y) * np.log(2.0), LinExpr.constant(1.0),
              LinExpr.constant(4.0))
    p.set_objective(LinExpr.var(y))
    res = solve_conic(p)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(2.0, rel=1e-7)


def test_exp_cone_with_variable_argument():
    # max log2(1 + 4e) - e  over e >= 0: d/de = 4/(ln2 (1+4e)) - 1 = 0
    p = ConicProgram()
    e = p.add_var("e", lb=0.0)
    y = p.add_var("y")
    p.add_exp(LinExpr.var(y) * np.log(2.0), LinExpr.constant(1.0),
              LinExpr.var(e, 4.0) + 1.0)
    p.set_objective(LinExpr.var(y) - LinExpr.var(e))
    res = solve_conic(p)
    assert res.status == "optimal"
    e_star = (4.0 / np.log(2.0) - 1.0) / 4.0
    # the optimum is flat, so the argmax is only sqrt(tol)-accurate
    assert res.x[e] == pytest.approx(e_star, rel=1e-3)
    assert res.objective == pytest.approx(np.log2(1.0 + 4.0 * e_star) - e_star,
                                          rel=1e-7)


def test_infeasible_detected():
    p = ConicProgram()
    x = p.add_var("x", lb=2.0)
    p.add_ineq(LinExpr.var(x), 1.0)
    p.set_objective(LinExpr.var(x))
    res = solve_conic(p)
    assert res.status == "infeasible"
    assert res.x is None


def test_binary_bounds_override():
    # max x0 + x1 s.t. x0 + x1 <= 1.5 over [0,1]^2; fixing x0 = 0 leaves 1.0
    p = ConicProgram()
    x0 = p.add_var("x0", binary=True)
    x1 = p.add_var("x1", binary=True)
    p.add_ineq(LinExpr.var(x0) + LinExpr.var(x1), 1.5)
    p.set_objective(LinExpr.var(x0) + LinExpr.var(x1))
    free = solve_conic(p)
    assert free.objective == pytest.approx(1.5, rel=1e-7)
    fixed = solve_conic(p, bounds_override={x0: (0.0, 0.0)})
    assert fixed.objective == pytest.approx(1.0, rel=1e-7)
    assert fixed.x[x0] == pytest.approx(0.0, abs=1e-7)
    # the program is untouched: a fresh unrestricted solve still reaches 1.5
    again = solve_conic(p)
    assert again.objective == pytest.approx(1.5, rel=1e-7)


def test_dump_smoke():
    p = ConicProgram()
    x = p.add_var("x", lb=0.0)
    b = p.add_var("pick", binary=True)
    p.add_ineq(LinExpr.var(x) - LinExpr.var(b) * 3.0, 0.0)
    p.add_soc(LinExpr.var(x) + 1.0, [LinExpr.var(b), LinExpr.constant(2.0)])
    p.add_exp(LinExpr.var(x), LinExpr.constant(1.0), LinExpr.var(b) + 1.0)
    p.set_objective(LinExpr.var(x))
    text = p.dump()
    assert "2 vars" in text and "1 binary" in text
    assert "soc:" in text and "exp:" in text and "ineq:" in text
