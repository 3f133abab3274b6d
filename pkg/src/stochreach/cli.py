"""Command-line front end.

Every command writes CSV artifacts plus ``manifest.json`` into the output directory
(``--out``, else ``$STOCHREACH_OUT``, else ``runs/<command>``).  Exit status is 0 on
success, 1 for configuration errors and 2 for solver or verification failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, dp, harness, lp, rbf, scenario

OUT_ENV = "STOCHREACH_OUT"
# artifacts whose content depends on the clock; listed in the manifest but not hashed
UNHASHED = ("timing.csv",)


class ConfigError(Exception):
    pass


class SolverFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=Path, help="scenario JSON (defaults to the built-in robot room)")
    p.add_argument("--out", type=Path, help=f"output directory (overrides ${OUT_ENV})")
    p.add_argument("--seed", type=int, help="master seed (overrides the scenario's)")
    p.add_argument("--workers", type=int, default=1, help="maximum worker threads")


def _robot(p: argparse.ArgumentParser, horizon: bool = True) -> None:
    p.add_argument("--grid", type=int, help="cells per axis")
    p.add_argument("--actions", type=int, help="number of headings")
    p.add_argument("--samples", type=int, help="Monte-Carlo samples per (cell, action)")
    if horizon:
        p.add_argument("--horizon", type=int, help="number of stages N")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stochreach", description="Finite-horizon stochastic reachability via DP, LP and RBFs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate-kernel", help="Monte-Carlo transition kernel and masks for a grid")
    _common(p); _robot(p, horizon=False)

    p = sub.add_parser("dp", help="value table by dynamic programming")
    _common(p); _robot(p)
    p.add_argument("--kind", default="reach-avoid",
                   choices=["reach-avoid", "max-invariance", "min-invariance", "max-reach", "min-reach"])

    p = sub.add_parser("lp", help="value table by linear programming, compared against DP")
    _common(p); _robot(p)
    p.add_argument("--kind", default="reach-avoid", choices=["reach-avoid", "max-invariance", "min-invariance"])
    p.add_argument("--lp-method", default="auto", choices=["auto", "simplex", "highs"])
    p.add_argument("--stagewise", action="store_true", help="one LP per stage instead of one for all stages")

    p = sub.add_parser("rbf", help="Gaussian RBF reach-avoid fit")
    _common(p); _robot(p)
    p.add_argument("--basis", type=int, default=15, help="basis functions per axis")
    p.add_argument("--epsilon", type=float, help="basis width parameter (default basis / room width)")
    p.add_argument("--states", type=int, help="sampled states per stage")
    p.add_argument("--inputs", type=int, help="sampled inputs per state")
    p.add_argument("--draws", type=int, help="noise draws per (state, input)")
    p.add_argument("--eval-points", type=int, default=50, help="evaluation grid points per axis")

    p = sub.add_parser("verify", help="DP, LP and simplex against brute-force oracles on random instances")
    p.add_argument("--out", type=Path, help=f"output directory (overrides ${OUT_ENV})")
    p.add_argument("--seeds", type=int, default=200, help="random MDP instances")
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--max-states", type=int, default=4)
    p.add_argument("--max-actions", type=int, default=3)
    p.add_argument("--max-horizon", type=int, default=3)
    p.add_argument("--lp-seeds", type=int, default=100, help="random LPs checked against vertex enumeration")
    p.add_argument("--no-lp", action="store_true", help="skip the LP-versus-DP checks")

    for name, text in (("error-study", "distance of each method to a reference, per timestep"),
                       ("report", "wall-clock timings and value summaries per method")):
        p = sub.add_parser(name, help=text)
        _common(p); _robot(p)
        if name == "error-study":
            p.add_argument("--reference", default="grid100", help="reference method, e.g. grid100")
        p.add_argument("--methods", default="grid25,rbf5", help="comma-separated methods (gridN, rbfN)")
        p.add_argument("--eval-points", type=int, default=100, help="evaluation grid points per axis")
    return parser


# -- helpers ----------------------------------------------------------------------

def _out_dir(args) -> Path:
    out = args.out or (Path(os.environ[OUT_ENV]) if os.environ.get(OUT_ENV) else Path("runs") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario(args) -> scenario.RobotScenario:
    try:
        scn = scenario.RobotScenario.from_json(args.scenario) if args.scenario else scenario.RobotScenario()
        scn = scn.with_(grid=getattr(args, "grid", None), n_actions=getattr(args, "actions", None),
                        samples=getattr(args, "samples", None), horizon=getattr(args, "horizon", None),
                        seed=args.seed)
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file not found: {exc.filename}") from exc
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad scenario: {exc}") from exc
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return scn


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(out: Path, args, inputs: dict, seeds: dict, started: float, artifacts: list[str]) -> None:
    doc = {
        "command": args.command,
        "inputs": inputs,
        "seeds": seeds,
        "versions": {"stochreach": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
        "artifacts": {a: (None if a in UNHASHED else _sha256(out / a)) for a in sorted(artifacts)},
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _require_valid(table: dp.ValueTable, region, target=None, tol: float = dp.CHECK_TOL) -> None:
    problems = dp.validate_table(table, region, target, tol)
    if problems:
        raise SolverFailure(f"{table.kind} table failed validation: " + "; ".join(problems))


def _grid_problem(scn, seed, workers):
    kseed = scenario.derive_seed(seed, f"kernel/grid{scn.grid}")
    model, safe, target = scenario.build_robot_model(scn, scn.samples, kseed, scn.grid, workers)
    return model, safe, target, kseed


def _dp_table(kind, model, safe, target, N):
    if kind == "reach-avoid":
        table, policy = dp.reach_avoid(model, safe, target, N)
        return table, policy, (safe, target)
    if kind in ("max-invariance", "min-invariance"):
        fn = dp.max_invariance if kind == "max-invariance" else dp.min_invariance
        table, policy, _ = fn(model, safe, N)
        return table, policy, (safe, None)
    fn = dp.max_reachability if kind == "max-reach" else dp.min_reachability
    return fn(model, target, N), None, (target, None)


def _methods(text: str) -> list[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    if not names:
        raise ConfigError("no methods given")
    if len(set(names)) != len(names):
        raise ConfigError("methods must be distinct")
    try:
        for m in names:
            scenario.parse_method(m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return names


# -- commands -----------------------------------------------------------------------

def cmd_estimate_kernel(args, out, started):
    scn = _scenario(args)
    model, safe, target, kseed = _grid_problem(scn, scn.seed, args.workers)
    model.to_csv(out / "kernel.csv")
    scenario.write_masks_csv(out / "masks.csv", model.grid, safe, target)
    _manifest(out, args, scn.to_dict(), {"seed": scn.seed, "kernel": kseed}, started, ["kernel.csv", "masks.csv"])


def cmd_dp(args, out, started):
    scn = _scenario(args)
    model, safe, target, kseed = _grid_problem(scn, scn.seed, args.workers)
    table, policy, check = _dp_table(args.kind, model, safe, target, scn.horizon)
    _require_valid(table, *check)
    table.to_csv(out / "values.csv", model.grid)
    artifacts = ["values.csv", "masks.csv"]
    if policy is not None:
        policy.to_csv(out / "policy.csv")
        artifacts.append("policy.csv")
    scenario.write_masks_csv(out / "masks.csv", model.grid, safe, target)
    _manifest(out, args, {**scn.to_dict(), "kind": args.kind}, {"seed": scn.seed, "kernel": kseed}, started, artifacts)


def cmd_lp(args, out, started):
    scn = _scenario(args)
    model, safe, target, kseed = _grid_problem(scn, scn.seed, args.workers)
    N = scn.horizon
    try:
        if args.kind == "reach-avoid":
            table = lp.solve_reach_avoid_lp(model, safe, target, N, method=args.lp_method, stagewise=args.stagewise)
        else:
            table = lp.solve_invariance_lp(model, safe, N, maximise=args.kind == "max-invariance",
                                           method=args.lp_method, stagewise=args.stagewise)
    except lp.LPError as exc:
        raise SolverFailure(str(exc)) from exc
    reference, _, check = _dp_table(args.kind, model, safe, target, N)
    _require_valid(table, *check, tol=1e-7)
    table.to_csv(out / "values.csv", model.grid)
    gap = np.abs(table.values - reference.values).max(axis=1)
    with open(out / "lp_vs_dp.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "max_abs_difference"])
        for k, g in enumerate(gap):
            w.writerow([k, repr(float(g))])
    scenario.write_masks_csv(out / "masks.csv", model.grid, safe, target)
    inputs = {**scn.to_dict(), "kind": args.kind, "lp_method": args.lp_method, "stagewise": args.stagewise}
    _manifest(out, args, inputs, {"seed": scn.seed, "kernel": kseed}, started,
              ["values.csv", "lp_vs_dp.csv", "masks.csv"])


def cmd_rbf(args, out, started):
    scn = _scenario(args)
    if args.basis < 1 or args.eval_points < 1:
        raise ConfigError("--basis and --eval-points must be >= 1")
    overrides = {"epsilon": args.epsilon, "n_x": args.states, "n_u": args.inputs, "n_w": args.draws}
    try:
        run = scenario.run_method(scn, f"rbf{args.basis}", scn.horizon, scn.seed, args.workers, overrides)
    except lp.LPError as exc:
        raise SolverFailure(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    (out / "rbf_model.json").write_text(run.rbf_model.to_json() + "\n")
    lower, upper = (scn.room[0], scn.room[2]), (scn.room[1], scn.room[3])
    pts = harness.evaluation_points(lower, upper, args.eval_points)
    rbf.write_eval_grid_csv(out / "rbf_eval.csv", run.rbf_model, pts, run.evaluator)
    with open(out / "fit_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "worst_drop", "violations_beyond_slack"])
        for k, (d, v) in enumerate(zip(run.fit_report.worst_drop, run.fit_report.violations)):
            w.writerow([k, repr(d), v])
    if not run.fit_report.ok:
        print(f"warning: monotonicity slack {rbf.MONOTONE_SLACK} exceeded at "
              f"{sum(run.fit_report.violations)} sampled states", file=sys.stderr)
    inputs = {**scn.to_dict(), "basis": args.basis, **run.extra, "eval_points": args.eval_points}
    _manifest(out, args, inputs, {"seed": scn.seed, "rbf": scenario.derive_seed(scn.seed, f"rbf{args.basis}")},
              started, ["rbf_model.json", "rbf_eval.csv", "fit_report.csv"])


def cmd_verify(args, out, started):
    if min(args.seeds, args.lp_seeds) < 0 or args.max_states < 2 or args.max_actions < 1 or args.max_horizon < 0:
        raise ConfigError("verify limits out of range")
    if args.max_states > harness.ORACLE_MAX_STATES or args.max_actions > harness.ORACLE_MAX_ACTIONS \
            or args.max_horizon > harness.ORACLE_MAX_HORIZON:
        raise ConfigError("instance limits exceed the brute-force oracle's range")
    checks = []
    for seed, model, safe, target, N in harness.instance_suite(
            args.seeds, args.max_states, args.max_actions, args.max_horizon, args.first_seed):
        checks += harness.check_dp_against_oracle(seed, model, safe, target, N)
        if not args.no_lp:
            checks += harness.check_lp_against_dp(seed, model, safe, target, N)
    for seed in range(args.lp_seeds):
        prog = harness.random_lp(seed)
        report = lp.solve(prog)
        if not report.ok:
            checks.append(harness.Check(seed, "simplex/status", float("inf"), 1e-8))
            continue
        checks.append(harness.Check(seed, "simplex/objective",
                                    abs(report.objective - harness.vertex_optimum(prog)), 1e-8))
        checks.append(harness.Check(seed, "simplex/residual", lp.max_violation(prog, report.x), 1e-9))
    harness.write_checks_csv(out / "verify.csv", checks)
    bad = [c for c in checks if not c.ok]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["checks", "mismatches"])
        w.writerow([len(checks), len(bad)])
    inputs = {k: getattr(args, k) for k in ("seeds", "first_seed", "max_states", "max_actions", "max_horizon",
                                            "lp_seeds", "no_lp")}
    _manifest(out, args, inputs, {"first_seed": args.first_seed}, started, ["verify.csv", "summary.csv"])
    print(f"{len(checks)} checks, {len(bad)} mismatches")
    if bad:
        raise SolverFailure(f"{len(bad)} oracle mismatches, first: {bad[0]}")


def _method_runs(args, scn, names):
    runs = {}
    for name in names:
        try:
            runs[name] = scenario.run_method(scn, name, scn.horizon, scn.seed, args.workers)
        except lp.LPError as exc:
            raise SolverFailure(f"{name}: {exc}") from exc
        problems = [] if runs[name].table is None else dp.validate_table(
            runs[name].table, runs[name].safe, runs[name].target)
        if problems:
            raise SolverFailure(f"{name} failed validation: " + "; ".join(problems))
    return runs


def _eval_points(args, scn):
    if args.eval_points < 1:
        raise ConfigError("--eval-points must be >= 1")
    return harness.evaluation_points((scn.room[0], scn.room[2]), (scn.room[1], scn.room[3]), args.eval_points)


def cmd_error_study(args, out, started):
    scn = _scenario(args)
    names = _methods(args.methods)
    ref_name = _methods(args.reference)[0]
    pts = _eval_points(args, scn)
    runs = _method_runs(args, scn, [ref_name] + [n for n in names if n != ref_name])
    report = harness.error_study(runs[ref_name].evaluator, {n: runs[n].evaluator for n in names}, pts, scn.horizon)
    report.to_csv(out / "errors.csv")
    harness.write_timing_csv(out / "timing.csv", [
        harness.TimingRow(n, r.seconds, harness.REPORTED_SECONDS.get(n)) for n, r in runs.items()])
    inputs = {**scn.to_dict(), "reference": ref_name, "methods": names, "eval_points": args.eval_points}
    seeds = {"seed": scn.seed, **{n: _sub_seed(scn, n) for n in runs}}
    _manifest(out, args, inputs, seeds, started, ["errors.csv", "timing.csv"])


def _sub_seed(scn, name):
    kind, n = scenario.parse_method(name)
    return scenario.derive_seed(scn.seed, f"kernel/grid{n}" if kind == "grid" else f"rbf{n}")


def cmd_report(args, out, started):
    scn = _scenario(args)
    names = _methods(args.methods)
    pts = _eval_points(args, scn)
    runs = _method_runs(args, scn, names)
    harness.write_timing_csv(out / "timing.csv", [
        harness.TimingRow(n, r.seconds, harness.REPORTED_SECONDS.get(n)) for n, r in runs.items()])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "stage", "mean_value", "max_value", "fraction_at_least_0.5"])
        for n, r in runs.items():
            for k in (scn.horizon, 0):
                v = r.evaluator(k, pts)
                w.writerow([n, k, repr(float(v.mean())), repr(float(v.max())), repr(float(np.mean(v >= 0.5)))])
    inputs = {**scn.to_dict(), "methods": names, "eval_points": args.eval_points}
    seeds = {"seed": scn.seed, **{n: _sub_seed(scn, n) for n in runs}}
    _manifest(out, args, inputs, seeds, started, ["timing.csv", "summary.csv"])


COMMANDS = {
    "estimate-kernel": cmd_estimate_kernel, "dp": cmd_dp, "lp": cmd_lp, "rbf": cmd_rbf,
    "verify": cmd_verify, "error-study": cmd_error_study, "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        out = _out_dir(args)
        COMMANDS[args.command](args, out, started)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
