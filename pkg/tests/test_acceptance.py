"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line."""
import json
import math
import time

import numpy as np

from stochreach import cli, dp, harness, lp
from stochreach.scenario import robot_dynamics


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")


def all_tables(model, safe, target, N):
    return [
        (dp.max_invariance(model, safe, N)[0], safe, None),
        (dp.min_invariance(model, safe, N)[0], safe, None),
        (dp.max_reachability(model, target, N), target, None),
        (dp.min_reachability(model, target, N), target, None),
        (dp.reach_avoid(model, safe, target, N)[0], safe, target),
    ]


def test_criterion_1_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    checks = []
    for seed, model, safe, target, N in harness.instance_suite(200, max_states=4, max_actions=3, max_horizon=3):
        checks += [c for c in harness.check_dp_against_oracle(seed, model, safe, target, N, tol=1e-12)
                   if c.name.startswith("dp/")]
    seconds = time.perf_counter() - t0
    worst = max(c.error for c in checks)
    bad = [c for c in checks if not c.ok]
    ok = not bad and seconds < 60
    report(capsys, 1, ok, f"{len(checks)} DP-vs-enumeration checks, worst {worst:.2e} (tol 1e-12), {seconds:.1f} s")
    assert not bad, bad[:3]
    assert seconds < 60


def test_criterion_2_duality(capsys):
    worst = 0.0
    n = 0
    for seed, model, safe, target, N in harness.instance_suite(200, max_states=4, max_actions=3, max_horizon=3):
        orc = harness.enumerate_policies(model, safe, target, N)
        comp = harness.enumerate_policies(model, target.complement(), None, N,
                                          kinds=("max-invariance", "min-invariance"))
        pairs = [
            (orc["max-reach"], 1.0 - comp["min-invariance"]),
            (orc["min-reach"], 1.0 - comp["max-invariance"]),
            (dp.max_reachability(model, target, N).values, orc["max-reach"]),
            (dp.min_reachability(model, target, N).values, orc["min-reach"]),
            (dp.min_invariance(model, target.complement(), N)[0].values, comp["min-invariance"]),
            (dp.max_invariance(model, target.complement(), N)[0].values, comp["max-invariance"]),
        ]
        for a, b in pairs:
            worst = max(worst, float(np.abs(a - b).max()))
            n += 1
    ok = worst <= 1e-12
    report(capsys, 2, ok, f"{n} duality comparisons on 200 instances, worst {worst:.2e} (tol 1e-12)")
    assert ok


def test_criterion_3_lp_equals_dp(capsys):
    t0 = time.perf_counter()
    checks = []
    for seed, model, safe, target, N in harness.instance_suite(200, max_states=6, max_actions=3, max_horizon=4):
        checks += harness.check_lp_against_dp(seed, model, safe, target, N, tol=1e-7, feas_tol=1e-9,
                                              method="simplex")
    seconds = time.perf_counter() - t0
    bad = [c for c in checks if not c.ok]
    families = sorted({c.name.split("/")[0] for c in checks})
    worst = {f: max(c.error for c in checks if c.name.startswith(f + "/")) for f in families}
    ok = not bad and seconds < 120
    detail = ", ".join(f"{f} {w:.1e}" for f, w in worst.items())
    report(capsys, 3, ok, f"{len(checks)} checks ({detail}), {seconds:.1f} s")
    assert not bad, bad[:3]
    assert seconds < 120


def test_criterion_4_monotonicity(capsys, desk_study):
    problems = []
    n = 0
    for seed, model, safe, target, N in harness.instance_suite(200, max_states=6, max_actions=3, max_horizon=4):
        for table, region, tgt in all_tables(model, safe, target, N):
            n += 1
            problems += [f"seed {seed} {table.kind}: {p}" for p in dp.validate_table(table, region, tgt)]
    for name in ("grid100", "grid25"):
        run = desk_study["runs"][name]
        n += 1
        problems += [f"{name}: {p}" for p in dp.validate_table(run.table, run.safe, run.target)]
    ok = not problems
    report(capsys, 4, ok, f"{n} tables checked (random instances and robot grids), {len(problems)} violations")
    assert ok, problems[:3]


def adjacent_to_target(grid, safe, target):
    live = safe.member & ~target.member
    idx = grid.multi_index(np.arange(grid.n_cells))
    tgt = np.flatnonzero(target.member[:grid.n_cells])
    t_idx = np.stack(grid.multi_index(tgt), axis=-1)
    cells = []
    for c in np.flatnonzero(live[:grid.n_cells]):
        mi = np.array([idx[0][c], idx[1][c]])
        if np.any(np.abs(t_idx - mi).max(axis=1) == 1):
            cells.append(int(c))
    return cells


def test_criterion_5_robot_desk_scale(capsys, desk_study):
    scn = desk_study["scenario"]
    N = scn.horizon
    run = desk_study["runs"]["grid25"]
    model, safe, target = run.model, run.safe, run.target
    # (a)
    problems = dp.validate_table(run.table, safe, target)
    # (b) independent re-simulation of the one-step target hit under the stage N-1 action
    _, policy, _ = dp.reach_avoid_q(model, safe, target, N)
    cells = adjacent_to_target(model.grid, safe, target)
    rng = np.random.default_rng(2024)
    fresh = 20_000
    worst_z = 0.0
    for c in cells:
        u = policy.actions[N - 1, c]
        x = np.tile(model.grid.cell_centers[c], (fresh, 1))
        nxt = robot_dynamics(x, scn.action_set().actions[u, 0], scn.noise_sampler(rng, fresh), scn.step)
        freq = float(target.member[model.grid.locate(nxt)].mean())
        sigma = math.sqrt(freq * (1.0 - freq) / scn.samples)
        gap = abs(run.table.values[N - 1, c] - freq)
        worst_z = max(worst_z, gap / sigma if sigma > 0 else (0.0 if gap == 0 else math.inf))
    # (c)
    d = desk_study["report"].distances
    last = {m: float(d[m][N]) for m in ("rbf5", "rbf10", "rbf15")}
    ordered = last["rbf5"] > last["rbf10"] > last["rbf15"]
    seconds = desk_study["seconds"]
    ok = not problems and cells and worst_z <= 3.0 and ordered and seconds < 600
    report(capsys, 5, ok,
           f"(a) {len(problems)} violations; (b) {len(cells)} target-adjacent cells, worst {worst_z:.2f} sigma; "
           f"(c) distance at N-k={N}: rbf5 {last['rbf5']:.2f} > rbf10 {last['rbf10']:.2f} > rbf15 "
           f"{last['rbf15']:.2f} (grid25 {float(d['grid25'][N]):.2f}); {seconds:.0f} s")
    assert not problems
    assert cells and worst_z <= 3.0
    assert ordered, last
    assert seconds < 600


def test_criterion_6_simplex(capsys):
    worst_obj, worst_res = 0.0, 0.0
    failures = 0
    for seed in range(100):
        prog = harness.random_lp(seed)
        rep = lp.solve(prog)
        if not rep.ok:
            failures += 1
            continue
        worst_obj = max(worst_obj, abs(rep.objective - harness.vertex_optimum(prog)))
        worst_res = max(worst_res, lp.max_violation(prog, rep.x))
    ok = failures == 0 and worst_obj <= 1e-8 and worst_res <= 1e-9
    report(capsys, 6, ok, f"100 random LPs, {failures} non-optimal, worst objective gap {worst_obj:.1e} "
                          f"(tol 1e-8), worst residual {worst_res:.1e} (tol 1e-9)")
    assert ok


SMALL = ["--grid", "6", "--actions", "3", "--samples", "20"]
COMMANDS = [
    ["estimate-kernel", *SMALL],
    ["dp", *SMALL, "--horizon", "3"],
    ["lp", *SMALL, "--horizon", "2"],
    ["rbf", *SMALL, "--horizon", "2", "--basis", "3", "--states", "15", "--draws", "2", "--eval-points", "3"],
    ["verify", "--seeds", "5", "--lp-seeds", "3"],
    ["error-study", *SMALL, "--horizon", "2", "--reference", "grid8", "--methods", "grid6,rbf2", "--eval-points", "5"],
    ["report", *SMALL, "--horizon", "2", "--methods", "grid6,rbf2", "--eval-points", "5"],
]


def test_criterion_7_reproducibility(capsys, tmp_path):
    differing = []
    compared = 0
    for i, argv in enumerate(COMMANDS):
        outs = [tmp_path / f"{i}{tag}" for tag in "ab"]
        for out in outs:
            assert cli.main(argv + ["--out", str(out)]) == 0
        manifests = [json.loads((o / "manifest.json").read_text()) for o in outs]
        for name, digest in manifests[0]["artifacts"].items():
            if digest is None:
                continue        # wall-clock timings
            compared += 1
            if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                differing.append(f"{argv[0]}/{name}")
    ok = not differing
    report(capsys, 7, ok, f"{len(COMMANDS)} commands re-run, {compared} artifacts compared, "
                          f"{len(differing)} differ (timing.csv and manifest wall clock excluded)")
    assert ok, differing
