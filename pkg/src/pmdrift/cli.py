"""Command-line entry point: ``pmdrift {verify,run,certify,rates,all,config}``.

Outputs land in ``<out>/<config hash[:12]>/`` and every file carries the full
config hash.  Nothing time-dependent is written, so a fixed config always
reproduces byte-identical files.

Exit codes: 0 pass, 1 verification failure, 2 configuration or input error,
3 numerical error or divergence.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import DEFAULTS_YAML, ExperimentConfig, build_experiment
from .drift import certify_drift, compute_constants, shifted_energy
from .exceptions import DivergenceError, NumericalError, PMDriftError
from .exceptions import ConfigurationError
from .rates import l2_bound_only, l2_slope, l2_target, pathwise_report, rate_window
from .sa import run_ensemble, write_trajectory_csv
from .verify import run_suites

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)  # JSON has no inf/nan
    return obj


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


class Context:
    """A loaded config, its compiled experiment and its output directory."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.hash = cfg.hash
        self.exp = build_experiment(cfg)
        self.dir = Path(cfg["output"]["dir"]) / self.hash[:12]
        self.dir.mkdir(parents=True, exist_ok=True)
        with open(self.dir / "config.yaml", "w") as fh:
            fh.write(f"# config_hash={self.hash}\n")
            # the output root is not part of the experiment, so it is left out
            body = {k: v for k, v in cfg.data.items() if k != "output"}
            fh.write(yaml.safe_dump(body, sort_keys=False))

    def say(self, msg):
        print(msg, flush=True)


# ---------------------------------------------------------------- commands


def cmd_verify(ctx):
    checks = run_suites(ctx.exp)
    passed = all(c.passed for c in checks)
    _write_json(ctx.dir / "verify_report.json", {
        "config_hash": ctx.hash, "passed": passed, "checks": [c.to_dict() for c in checks],
    })
    for c in checks:
        ctx.say(f"{'PASS' if c.passed else 'FAIL'} {c.name}: worst={c.worst:.3e} tol={c.tol:g} {c.detail}".rstrip())
    for c in checks:
        if not c.passed:
            ctx.say(f"verify failed: {c.name}")
    return EXIT_PASS if passed else EXIT_FAIL


def _energies(exp, traj):
    """V_xi at the recorded checkpoints, or None when xi is inadmissible."""
    if not exp.xi_admissible:
        return None
    try:
        K = compute_constants(exp.problem, exp.env, exp.schedule).K
    except PMDriftError:
        return None
    return shifted_energy(exp.problem, exp.env, K, traj.n, traj.theta, traj.window, exp.schedule)


def cmd_run(ctx):
    exp, r = ctx.exp, ctx.cfg["run"]
    seeds, steps = ctx.cfg.seeds, r["steps"]
    tdir = ctx.dir / "trajectories"
    tdir.mkdir(exist_ok=True)
    manifest = {"config_hash": ctx.hash, "steps": steps, "seeds": seeds, "status": "ok", "files": []}
    try:
        trajs = run_ensemble(exp.problem, exp.schedule, exp.theta0(), steps, seeds,
                             exp.checkpoints(), exp.init_dist, exp.env)
    except DivergenceError as exc:
        manifest.update(status="diverged", offending_seed=exc.seed, step=exc.step, error=str(exc))
        _write_json(tdir / "manifest.json", manifest)
        ctx.say(f"divergence: seed {exc.seed} at step {exc.step}")
        return EXIT_NUMERIC
    for t in trajs:
        name = f"seed_{t.seed:04d}.csv"
        write_trajectory_csv(tdir / name, t, V=_energies(exp, t), config_hash=ctx.hash)
        manifest["files"].append(name)
    _write_json(tdir / "manifest.json", manifest)
    ctx.say(f"wrote {len(trajs)} trajectories to {tdir}")
    return EXIT_PASS


def cmd_certify(ctx):
    exp, c = ctx.exp, ctx.cfg["certify"]
    if not exp.xi_admissible:
        raise ConfigurationError("certification needs an admissible xi (kappa u_xi / ell_xi < 1)")
    consts = compute_constants(exp.problem, exp.env, exp.schedule, c["K"])
    start = consts.N_tail if c["start"] is None else c["start"]
    if start < consts.N_tail:
        raise ConfigurationError(f"certify.start={start} precedes the tail index {consts.N_tail}")
    stop = start + c["window"]
    horizon = ctx.cfg["run"]["steps"]
    if stop > horizon:
        raise ConfigurationError(
            f"certification window [{start}, {stop}] exceeds run.steps={horizon}; need run.steps >= {stop}"
        )
    work = c["window"] * exp.problem.chain.n
    if work > c["max_work"]:
        raise ConfigurationError(f"window x windows = {work} exceeds certify.max_work={c['max_work']}")
    cps = np.union1d(exp.checkpoints(stop), np.arange(start, stop + 1))
    traj = run_ensemble(exp.problem, exp.schedule, exp.theta0(), stop, [c["seed"]], cps,
                        exp.init_dist, exp.env)[0]
    mu = c["mu_factor"] * consts.mu_xi
    C = None
    if c["remainder"] == "tight":
        base = certify_drift(traj, exp.problem, exp.env, schedule=exp.schedule, constants=consts,
                             window=(start, stop))
        C = base.C_required
    cert = certify_drift(traj, exp.problem, exp.env, schedule=exp.schedule, constants=consts,
                         window=(start, stop), mu=mu, C=C)
    if c["mu_factor"] != 1.0:
        cert.notes.append(f"mutation: mu = {c['mu_factor']:g} x mu_xi")
    if c["remainder"] == "tight":
        cert.notes.append("remainder: smallest C passing the unmutated run")
    _write_json(ctx.dir / "certificate.json", {
        "config_hash": ctx.hash, "seed": c["seed"], "summary": cert.summary(), "steps": list(cert.rows()),
    })
    s = cert.summary()
    ctx.say(f"{'PASS' if cert.passed else 'FAIL'} certify window={s['window']} min_slack={s['min_slack']:.3e} "
            f"failures={s['n_failures']} C_used={s['C_used']:.4g} C_required={s['C_required']:.4g}")
    return EXIT_PASS if cert.passed else EXIT_FAIL


def cmd_rates(ctx):
    exp, q = ctx.exp, ctx.cfg["rates"]
    steps, seeds = ctx.cfg["run"]["steps"], ctx.cfg.seeds
    window = rate_window(exp.problem, exp.env, exp.schedule)
    need = q["burn_in"] * 1000
    do_path = not window.empty
    if do_path and steps < need:
        raise ConfigurationError(f"pathwise rates need run.steps >= {need} (3 decades past burn-in)")
    trajs = run_ensemble(exp.problem, exp.schedule, exp.theta0(), steps, seeds,
                         exp.checkpoints(), exp.init_dist, exp.env)
    out = {"config_hash": ctx.hash, "window": window.to_dict(), "pathwise": [], "l2": None}
    ok = True

    if exp.schedule.eta == 1.0 and not exp.xi_admissible:
        raise ConfigurationError("the eta = 1 mean-square target needs an admissible xi")
    target, logc = l2_target(exp.schedule, exp.problem.kappa, exp.env)
    one_sided = q["l2_check"] == "bound" or l2_bound_only(exp.schedule, exp.problem.kappa, exp.env)
    rep = l2_slope(trajs, q["norm"], n_lo=q["n_lo"], n_hi=q["n_hi"], eta=exp.schedule.eta, target=target,
                   log_corrected=logc, tolerance=q["tolerance"], burn_in=q["burn_in"], one_sided=one_sided)
    rep.write_means_csv(ctx.dir / "rates_means.csv", ctx.hash)
    out["l2"] = rep.summary()
    ok &= rep.verdict
    ctx.say(f"{'PASS' if rep.verdict else 'FAIL'} l2 slope={rep.slope:.4f} +- {rep.stderr:.4f} "
            f"target={rep.target:.4f} tol={rep.tolerance:g} {'bound' if one_sided else 'match'} "
            f"within_tolerance={rep.within_tolerance}")

    if do_path:
        sub = trajs[: q["pathwise_seeds"]]
        for z in ctx.cfg.zetas:
            pr = pathwise_report(sub, z, q["norm"], burn_in=q["burn_in"], threshold=q["threshold"],
                                 window=window, min_fraction=q["min_pass_fraction"])
            out["pathwise"].append(pr.summary())
            tag = "outside-theory" if pr.outside_theory else ("PASS" if pr.verdict else "FAIL")
            if not pr.outside_theory:
                ok &= pr.verdict
            ctx.say(f"{tag} pathwise zeta={z:g} passed {pr.pass_count}/{pr.n_seeds}")
    else:
        ctx.say(f"pathwise window empty ({window.reason}); mean-square only")
    out["passed"] = bool(ok)
    _write_json(ctx.dir / "rates_summary.json", out)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_all(ctx):
    codes = [cmd_verify(ctx), cmd_certify(ctx), cmd_rates(ctx)]
    return max(codes)


COMMANDS = {"verify": cmd_verify, "run": cmd_run, "certify": cmd_certify, "rates": cmd_rates, "all": cmd_all}


# ---------------------------------------------------------------- argument parsing


def build_parser():
    p = argparse.ArgumentParser(prog="pmdrift", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config (keys override the defaults)")
    common.add_argument("--out", help="output root directory (default: output.dir)")
    common.add_argument("--seeds", help="seed range 'a..b' (inclusive)")
    common.add_argument("--steps", type=int, help="run horizon")
    common.add_argument("--zeta", help="comma-separated pathwise exponents")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    c = sub.add_parser("config")
    c.add_argument("--print-defaults", action="store_true", help="print the documented default config")
    return p


def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({})
    return cfg.override(seeds=args.seeds, steps=args.steps, zeta=args.zeta, out=args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "config":
        sys.stdout.write(DEFAULTS_YAML)
        return EXIT_PASS
    try:
        ctx = Context(load_config(args))
        return COMMANDS[args.command](ctx)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PMDriftError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
