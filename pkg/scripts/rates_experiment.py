"""Scan the step constant and report mean-square slope and pathwise pass counts.

Small constants leave the run bias-dominated (slopes steeper than -eta);
large ones reach the noise floor but make the decade witness noisier.

    python scripts/rates_experiment.py --eta 0.8 --a 1 2 5 --seeds 50
"""

import argparse

from pmdrift.config import ExperimentConfig, build_experiment
from pmdrift.rates import l2_slope, l2_target, pathwise_report, rate_window
from pmdrift.sa import run_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eta", type=float, default=0.8)
    ap.add_argument("--a", type=float, nargs="+", default=[1.0, 2.0, 5.0])
    ap.add_argument("--zeta", type=float, default=0.5)
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--seeds", type=int, default=50)
    args = ap.parse_args()

    print(f"{'a':>6} {'l2 slope':>9} {'target':>7} {'pathwise':>9}")
    for a in args.a:
        exp = build_experiment(ExperimentConfig.from_dict({"schedule": {"eta": args.eta, "a": a}}))
        trajs = run_ensemble(exp.problem, exp.schedule, exp.theta0(), args.steps, list(range(args.seeds)),
                             exp.checkpoints(args.steps), exp.init_dist, exp.env)
        target, logc = l2_target(exp.schedule, exp.problem.kappa, exp.env)
        rep = l2_slope(trajs, eta=args.eta, target=target, log_corrected=logc, n_lo=1000, n_hi=args.steps)
        path = pathwise_report(trajs, args.zeta, window=rate_window(exp.problem, exp.env, exp.schedule))
        print(f"{a:6g} {rep.slope:9.3f} {target:7.3f} {path.pass_count:5d}/{args.seeds}")


if __name__ == "__main__":
    main()
