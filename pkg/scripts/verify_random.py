"""Oracle sweep on seeded random MDPs and LPs; prints a per-family summary.

    python scripts/verify_random.py --seeds 1000 --max-states 6 --max-horizon 4
"""
import argparse
from collections import defaultdict

from stochreach import harness, lp


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=200)
    ap.add_argument("--max-states", type=int, default=4)
    ap.add_argument("--max-actions", type=int, default=3)
    ap.add_argument("--max-horizon", type=int, default=3)
    ap.add_argument("--lp-seeds", type=int, default=100)
    ap.add_argument("--csv", help="optional path for the per-check table")
    args = ap.parse_args()

    checks = []
    for seed, model, safe, target, N in harness.instance_suite(args.seeds, args.max_states, args.max_actions,
                                                               args.max_horizon):
        checks += harness.check_dp_against_oracle(seed, model, safe, target, N)
        checks += harness.check_lp_against_dp(seed, model, safe, target, N)
    for seed in range(args.lp_seeds):
        prog = harness.random_lp(seed)
        rep = lp.solve(prog)
        checks.append(harness.Check(seed, "simplex/objective", abs(rep.objective - harness.vertex_optimum(prog)), 1e-8))
        checks.append(harness.Check(seed, "simplex/residual", lp.max_violation(prog, rep.x), 1e-9))

    worst = defaultdict(float)
    bad = defaultdict(int)
    for c in checks:
        worst[c.name] = max(worst[c.name], c.error)
        bad[c.name] += not c.ok
    for name in sorted(worst):
        print(f"{name:<28} worst {worst[name]:.2e}  failures {bad[name]}")
    if args.csv:
        harness.write_checks_csv(args.csv, checks)
    raise SystemExit(1 if any(bad.values()) else 0)


if __name__ == "__main__":
    main()
