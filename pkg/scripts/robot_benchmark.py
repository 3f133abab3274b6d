"""Robot-room error study: distance of each method to a fine grid, plus timings.

    python scripts/robot_benchmark.py --out runs/benchmark               # desk scale
    python scripts/robot_benchmark.py --full --out runs/full             # 18 actions, 1000 samples, N = 100
"""
import argparse
import csv
from pathlib import Path

from stochreach import dp, harness, scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("runs/benchmark"))
    ap.add_argument("--full", action="store_true", help="use the full-size scenario defaults")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reference", default="grid100")
    ap.add_argument("--methods", default="grid25,grid50,rbf5,rbf10,rbf15")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    scn = scenario.RobotScenario(seed=args.seed)
    if not args.full:
        scn = scn.with_(n_actions=8, samples=200, horizon=20)
    methods = [m for m in args.methods.split(",") if m]
    args.out.mkdir(parents=True, exist_ok=True)

    runs = {}
    for name in [args.reference] + methods:
        runs[name] = scenario.run_method(scn, name, scn.horizon, scn.seed, args.workers)
        run = runs[name]
        if run.table is not None:
            problems = dp.validate_table(run.table, run.safe, run.target)
            if problems:
                raise SystemExit(f"{name}: {problems}")
        print(f"{name:>8}  {run.seconds:8.1f} s")

    points = harness.evaluation_points((scn.room[0], scn.room[2]), (scn.room[1], scn.room[3]), 100)
    report = harness.error_study(runs[args.reference].evaluator, {m: runs[m].evaluator for m in methods},
                                 points, scn.horizon)
    report.to_csv(args.out / "errors.csv")
    harness.write_timing_csv(args.out / "timing.csv", [
        harness.TimingRow(n, r.seconds, harness.REPORTED_SECONDS.get(n)) for n, r in runs.items()])
    with open(args.out / "final_distance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "timestep", "distance", "reference_plot_value"])
        for m in methods:
            w.writerow([m, scn.horizon, repr(float(report.distances[m][scn.horizon])),
                        harness.REPORTED_ERROR_AT_20.get(m, "")])
    for m in methods:
        print(f"{m:>8}  distance at N-k={scn.horizon}: {report.distances[m][scn.horizon]:.3f}")


if __name__ == "__main__":
    main()
