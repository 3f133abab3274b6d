import numpy as np
import pytest
from hypothesis import settings

from stochreach.model import RegionMask, TransitionModel

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def kernel(rows_per_action):
    return TransitionModel(np.array(rows_per_action, dtype=float))


@pytest.fixture
def two_state():
    """s0 safe, s1 unsafe and absorbing; a0 keeps s0 with 0.9, a1 with 0.5."""
    model = kernel([
        [[0.9, 0.1], [0.0, 1.0]],
        [[0.5, 0.5], [0.0, 1.0]],
    ])
    return model, RegionMask(np.array([True, False]), "A")


@pytest.fixture
def chain3():
    """s0 hits the target s1 with 0.3 per step; s2 is an absorbing sink."""
    model = kernel([[[0.7, 0.3, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]])
    return model, RegionMask(np.array([False, True, False]), "T")


@pytest.fixture
def reach_avoid3():
    """s0 live, s1 target, s2 unsafe; one action: to target 0.3, stay 0.6, to unsafe 0.1."""
    model = kernel([[[0.6, 0.3, 0.1], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]])
    safe = RegionMask(np.array([True, True, False]), "A")
    target = RegionMask(np.array([False, True, False]), "T")
    return model, safe, target


DESK = dict(grid=25, n_actions=8, samples=200, horizon=20, seed=0)
DESK_METHODS = ("grid25", "rbf5", "rbf10", "rbf15")


@pytest.fixture(scope="session")
def desk_study():
    """Desk-scale robot run: Grid100 reference plus the named methods, all on one master seed."""
    import time

    from stochreach import harness, scenario

    t0 = time.perf_counter()
    scn = scenario.RobotScenario(**DESK)
    N = scn.horizon
    runs = {name: scenario.run_method(scn, name, N, scn.seed) for name in ("grid100",) + DESK_METHODS}
    points = harness.evaluation_points((0.0, 0.0), (50.0, 50.0), 100)
    report = harness.error_study(runs["grid100"].evaluator, {m: runs[m].evaluator for m in DESK_METHODS}, points, N)
    return {"scenario": scn, "runs": runs, "points": points, "report": report,
            "seconds": time.perf_counter() - t0}
