import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochreach import lp, simplex
from stochreach.harness import random_lp, vertex_optimum


def program(sense, cost, A, senses, rhs, lower, upper):
    return lp.LinearProgram(sense, cost, np.atleast_2d(np.array(A, dtype=float)), senses, rhs, lower, upper)


def test_lower_bounded_single_variable():
    rep = simplex.solve(program("min", [1.0], [[1.0]], [">="], [3.0], [0.0], [10.0]))
    assert rep.ok and rep.x[0] == pytest.approx(3.0, abs=1e-12)


def test_single_binding_face():
    rep = simplex.solve(program("max", [1.0, 1.0], [[1.0, 1.0]], ["<="], [1.0], [0.0, 0.0], [np.inf, np.inf]))
    assert rep.ok and rep.objective == pytest.approx(1.0, abs=1e-12)


def test_infeasible_program():
    rep = simplex.solve(program("min", [1.0], [[1.0], [1.0]], [">=", "<="], [3.0, 2.0], [0.0], [10.0]))
    assert rep.status == simplex.INFEASIBLE and rep.x is None


def test_crossed_bounds_are_infeasible():
    rep = simplex.solve(program("min", [1.0], [[1.0]], [">="], [0.0], [2.0], [1.0]))
    assert rep.status == simplex.INFEASIBLE


def test_unbounded_program():
    rep = simplex.solve(program("max", [1.0, 0.0], [[0.0, 1.0]], ["<="], [1.0], [0.0, 0.0], [np.inf, np.inf]))
    assert rep.status == simplex.UNBOUNDED and rep.x is None


def test_free_and_upper_only_variables():
    # min x - y with x free, y <= 2 (no lower bound), x + y = 1, x >= -4
    prog = program("min", [1.0, -1.0], [[1.0, 1.0], [1.0, 0.0]], ["=", ">="], [1.0, -4.0],
                   [-np.inf, -np.inf], [np.inf, 2.0])
    rep = simplex.solve(prog)
    assert rep.ok
    np.testing.assert_allclose(rep.x, [-1.0, 2.0], atol=1e-12)


def test_iteration_limit_reported():
    prog = random_lp(3)
    rep = simplex.solve(prog, max_iters=1)
    assert rep.status in (simplex.ITERATION_LIMIT, simplex.OPTIMAL)
    if rep.status == simplex.ITERATION_LIMIT:
        assert rep.x is None


def test_report_invariant():
    with pytest.raises(ValueError):
        simplex.SolveReport(simplex.OPTIMAL, 1.0, None, 0)
    with pytest.raises(ValueError):
        simplex.SolveReport(simplex.INFEASIBLE, None, np.zeros(1), 0)


def test_unknown_method():
    with pytest.raises(ValueError):
        simplex.solve(random_lp(0), method="ellipsoid")


@given(st.integers(0, 100_000))
def test_matches_vertex_enumeration(seed):
    prog = random_lp(seed)
    rep = simplex.solve(prog)
    assert rep.ok
    assert rep.objective == pytest.approx(vertex_optimum(prog), abs=1e-8)
    assert lp.max_violation(prog, rep.x) <= 1e-9


@given(st.integers(0, 100_000))
def test_repeat_solves_are_bit_identical(seed):
    prog = random_lp(seed)
    a, b = simplex.solve(prog), simplex.solve(prog)
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


@given(st.integers(0, 100_000))
def test_highs_agrees(seed):
    prog = random_lp(seed)
    assert simplex.solve(prog, method="highs").objective == pytest.approx(simplex.solve(prog).objective, abs=1e-7)
