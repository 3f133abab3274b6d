import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochreach.model import (
    ActionSet, RegionMask, StateGrid, TransitionModel, estimate_kernel, mask_from_predicate, mask_lookup,
)


def no_noise(rng, shape):
    return np.zeros(shape)


def test_grid_shape_and_out_cell():
    g = StateGrid((3, 2), (0.0, 0.0), (3.0, 2.0))
    assert g.n_cells == 6 and g.n_states == 7 and g.out_index == 6
    np.testing.assert_allclose(g.cell_size, [1.0, 1.0])


@pytest.mark.parametrize("dims, lo, hi", [((0,), (0.0,), (1.0,)), ((2,), (1.0,), (1.0,)), ((2, 2), (0.0,), (1.0,))])
def test_grid_rejects_bad_shapes(dims, lo, hi):
    with pytest.raises(ValueError):
        StateGrid(dims, lo, hi)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.data())
def test_grid_index_round_trip(dims, data):
    g = StateGrid(tuple(dims), tuple(0.0 for _ in dims), tuple(float(d) * 2 for d in dims))
    idx = data.draw(st.integers(0, g.n_cells - 1))
    multi = g.multi_index(idx)
    assert int(g.cell_index(multi)) == idx
    assert int(g.locate(g.center_of(multi)[None, :])[0]) == idx


def test_locate_half_open_with_closed_last_box():
    g = StateGrid((4,), (0.0,), (4.0,))
    pts = np.array([[0.0], [0.999], [1.0], [3.5], [4.0], [4.0001], [-1e-9]])
    assert g.locate(pts).tolist() == [0, 0, 1, 3, 3, 4, 4]


def test_action_set_distinct():
    assert len(ActionSet([0.0, 1.0])) == 2
    with pytest.raises(ValueError):
        ActionSet([1.0, 1.0])


def test_region_mask_complement_and_subset():
    m = RegionMask(np.array([True, False, True]), "A")
    assert m.complement().member.tolist() == [False, True, False]
    assert m.complement().complement() == m
    assert RegionMask.from_indices(3, [0], "T").issubset(m)
    assert m.minus(RegionMask.from_indices(3, [2])).indices.tolist() == [0]


def test_transition_model_validation():
    with pytest.raises(ValueError):
        TransitionModel(np.array([[[0.5, 0.4], [0.0, 1.0]]]))
    with pytest.raises(ValueError):
        TransitionModel(np.array([[[1.2, -0.2], [0.0, 1.0]]]))


def test_identity_dynamics_gives_identity_kernel():
    g = StateGrid((3, 3), (0.0, 0.0), (3.0, 3.0))
    m = estimate_kernel(lambda x, u, w: x, g, ActionSet([0.0, 1.0]), 7, seed=3, noise=no_noise)
    for a in range(2):
        np.testing.assert_array_equal(m.dense()[a], np.eye(g.n_states))


def test_deterministic_shift_to_next_cell():
    g = StateGrid((2,), (0.0,), (2.0,))
    m = estimate_kernel(lambda x, u, w: x + 1.0, g, ActionSet([0.0, 1.0]), 10, seed=0, noise=no_noise)
    for a in range(2):
        assert m.row(a, 0).tolist() == [0.0, 1.0, 0.0]
        assert m.row(a, 1).tolist() == [0.0, 0.0, 1.0]
        assert m.row(a, 2).tolist() == [0.0, 0.0, 1.0]


def test_estimate_kernel_errors():
    g = StateGrid((2,), (0.0,), (2.0,))
    with pytest.raises(ValueError):
        estimate_kernel(lambda x, u, w: x, g, ActionSet([0.0]), 0, seed=0, noise=no_noise)
    with pytest.raises(ValueError):
        estimate_kernel(lambda x, u, w: x * np.nan, g, ActionSet([0.0]), 3, seed=0, noise=no_noise)


def _noisy(seed, workers=1):
    g = StateGrid((4, 4), (0.0, 0.0), (4.0, 4.0))
    rng_noise = lambda rng, shape: rng.normal(0.0, 0.8, shape + (2,))
    return estimate_kernel(lambda x, u, w: x + u + w, g, ActionSet([[0.5, 0.0], [0.0, 0.5]]), 50, seed, rng_noise,
                           workers=workers)


def test_estimate_kernel_is_seed_deterministic_and_worker_independent():
    a, b, c = _noisy(5), _noisy(5), _noisy(5, workers=3)
    assert a == b and a == c
    assert not (a == _noisy(6))


def test_estimated_rows_are_stochastic_and_count_based():
    m = _noisy(1)
    P = m.dense()
    np.testing.assert_allclose(P.sum(axis=2), 1.0, atol=1e-12)
    assert P.min() >= 0.0 and P.max() <= 1.0
    # every entry is a multiple of 1/50
    np.testing.assert_allclose(P * 50, np.round(P * 50), atol=1e-9)
    # out-of-domain state absorbs
    assert np.all(P[:, -1, -1] == 1.0)


def test_kernel_csv_and_npz_round_trip(tmp_path):
    m = _noisy(2)
    m.to_csv(tmp_path / "k.csv")
    assert TransitionModel.from_csv(tmp_path / "k.csv") == m
    m.save_npz(tmp_path / "k.npz")
    assert TransitionModel.load_npz(tmp_path / "k.npz", n_actions=m.n_actions) == m


def test_mask_from_predicate_examples():
    g = StateGrid((4,), (0.0,), (4.0,))
    assert mask_from_predicate(g, lambda p: np.ones(len(p), bool)).member.tolist() == [True] * 4 + [False]
    assert mask_from_predicate(g, lambda p: p[:, 0] < 2.0).member.tolist() == [True, True, False, False, False]


def test_mask_lookup_points():
    g = StateGrid((4,), (0.0,), (4.0,))
    mask = mask_from_predicate(g, lambda p: p[:, 0] < 2.0)
    contains = mask_lookup(g, mask)
    assert contains(np.array([[0.2], [1.9], [2.5], [9.0]])).tolist() == [True, True, False, False]
