import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochreach import dp, harness, lp


def test_oracle_two_state(two_state):
    model, safe = two_state
    res = harness.enumerate_policies(model, safe, None, 2, kinds=("max-invariance", "min-invariance"))
    assert res["max-invariance"][0, 0] == pytest.approx(0.81, abs=1e-15)
    assert res["min-invariance"][0, 0] == pytest.approx(0.25, abs=1e-15)
    # two actions at the one safe state over two stages
    assert res.policy_counts["invariance"] == 2 ** 2


def test_oracle_single_action_equals_policy_evaluation():
    model, safe, target = harness.random_instance(5, 4, 1)
    res = harness.enumerate_policies(model, safe, target, 3)
    ev = dp.evaluate_policy(model, safe, dp.PolicyTable(np.zeros((3, 4), dtype=int)), 3)
    np.testing.assert_allclose(res["max-invariance"], ev.values, atol=1e-15)
    np.testing.assert_allclose(res["min-invariance"], ev.values, atol=1e-15)


def test_oracle_guards_size():
    model, safe, target = harness.random_instance(0, 7, 2)
    with pytest.raises(ValueError):
        harness.enumerate_policies(model, safe, target, 2)
    model, safe, target = harness.random_instance(0, 6, 3)
    with pytest.raises(ValueError):
        harness.enumerate_policies(model, safe, target, 4, max_policies=1000)


@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(1, 3), st.integers(0, 3))
def test_oracle_orders_and_counts(seed, S, U, N):
    model, safe, target = harness.random_instance(seed, S, U)
    res = harness.enumerate_policies(model, safe, target, N)
    assert np.all(res["max-invariance"] >= res["min-invariance"])
    assert np.all(res["max-reach"] >= res["min-reach"])
    for v in res.values.values():
        assert v.min() >= 0.0 and v.max() <= 1.0 + 1e-15
    assert res.policy_counts["invariance"] == U ** (int(safe.member.sum()) * N)


@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 3))
def test_random_instance_is_well_formed_and_seeded(seed, S, U):
    model, safe, target = harness.random_instance(seed, S, U)
    again = harness.random_instance(seed, S, U)
    assert model == again[0] and safe == again[1] and target == again[2]
    assert safe.member.any() and target.member.any() and target.issubset(safe)
    np.testing.assert_allclose(model.dense().sum(axis=2), 1.0, atol=1e-12)


def test_instance_suite_respects_limits():
    sizes = [(m.n_states, m.n_actions, N) for _, m, _, _, N in harness.instance_suite(50)]
    assert all(2 <= s <= 4 and 1 <= u <= 3 and 0 <= n <= 3 for s, u, n in sizes)
    assert [x[0] for x in harness.instance_suite(3, first_seed=10)] == [10, 11, 12]


def test_check_routines_pass_on_a_few_instances():
    for seed, model, safe, target, N in harness.instance_suite(10, max_states=5, max_horizon=4):
        checks = harness.check_dp_against_oracle(seed, model, safe, target, N)
        checks += harness.check_lp_against_dp(seed, model, safe, target, N)
        assert all(c.ok for c in checks), [c for c in checks if not c.ok]


def test_checks_csv(tmp_path):
    harness.write_checks_csv(tmp_path / "c.csv", [harness.Check(0, "x", 0.5, 1.0), harness.Check(1, "y", 2.0, 1.0)])
    assert (tmp_path / "c.csv").read_text().splitlines() == ["seed,check,error,tol,ok", "0,x,0.5,1.0,1", "1,y,2.0,1.0,0"]


def test_vertex_oracle_small_case():
    prog = lp.LinearProgram("max", [1.0, 2.0], np.array([[1.0, 1.0]]), ["<="], [3.0], [0.0, 0.0], [2.0, 2.0])
    assert harness.vertex_optimum(prog) == pytest.approx(5.0)


def _const(c):
    f = lambda k, p: np.full(len(p), c + 0.0 * k)
    f.horizon = 3
    return f


def test_error_study_identity_and_offset():
    pts = harness.evaluation_points((0, 0), (50, 50), 100)
    assert pts.shape == (10_000, 2)
    rep = harness.error_study(_const(0.2), {"same": _const(0.2), "shifted": _const(0.3)}, pts, 3)
    assert np.all(rep.distances["same"] == 0.0)
    np.testing.assert_allclose(rep.distances["shifted"], 10.0, rtol=1e-12)


def test_error_study_order_invariance_and_horizon_check():
    pts = harness.evaluation_points((0, 0), (1, 1), 5)
    cands = {"a": _const(0.1), "b": _const(0.7)}
    one = harness.error_study(_const(0.0), cands, pts, 3)
    two = harness.error_study(_const(0.0), dict(reversed(list(cands.items()))), pts, 3)
    for k in cands:
        assert np.array_equal(one.distances[k], two.distances[k])
    with pytest.raises(ValueError):
        harness.error_study(_const(0.0), cands, pts, 4)


def test_error_report_csv(tmp_path):
    rep = harness.ErrorReport({"m": np.array([0.0, 1.0, 2.0])}, 2)
    rep.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines() == ["method,timestep,distance", "m,1,1.0", "m,2,2.0"]


def test_grid_evaluator_piecewise_constant():
    from stochreach.model import StateGrid

    g = StateGrid((2,), (0.0,), (2.0,))
    table = dp.ValueTable(np.array([[0.1, 0.2, 0.0]]), "policy-eval")
    ev = harness.grid_evaluator(g, table)
    assert ev(0, np.array([[0.3], [1.7], [5.0]])).tolist() == [0.1, 0.2, 0.0]
    assert ev.horizon == 0


def test_timing_report_keeps_reference_seconds(tmp_path):
    rows = harness.timing_report([("grid25", lambda: None), ("mine", lambda: None)])
    assert rows[0].reported_seconds == 4.0 and rows[1].reported_seconds is None
    harness.write_timing_csv(tmp_path / "t.csv", rows)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "method,seconds,reported_seconds"
