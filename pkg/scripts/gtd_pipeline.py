"""Run the full verify/certify/rates pipeline for every factor preset.

Draws a random 3-state, 2-action MDP per preset, skipping draws whose mean
matrix is not Hurwitz, and calls ``pmdrift all`` on it.

    python scripts/gtd_pipeline.py --out runs/pipeline --seeds 0..49 --steps 1000000
"""

import argparse
import tempfile
from pathlib import Path

import yaml

from pmdrift.cli import main as pmdrift
from pmdrift.exceptions import ModelError
from pmdrift.gtd import PRESETS, FactorSpec, GeneralizedTDModel, PolicyPair, random_mdp, random_policy


def hurwitz_seed(preset, start, horizon):
    s, rejected = start, 0
    behavior = [[0.5, 0.5]] * 3
    while True:
        mdp = random_mdp(3, 2, gamma=0.5, seed=s)
        if preset == "on_policy":
            pol = PolicyPair.on_policy(behavior)
        else:
            pol = PolicyPair(random_policy(3, 2, seed=s + 1), behavior)
        try:
            GeneralizedTDModel(mdp, pol, FactorSpec(preset, lam=0.9), horizon=horizon)
            return s, rejected
        except ModelError:
            rejected += 1
            s += 2


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/pipeline")
    ap.add_argument("--seeds", default="0..99")
    ap.add_argument("--steps", type=int, default=1_000_000)
    ap.add_argument("--horizon", type=int, default=2)
    ap.add_argument("--zeta", type=float, default=0.1)
    args = ap.parse_args()

    codes = {}
    with tempfile.TemporaryDirectory() as tmp:
        for preset in PRESETS:
            s, rejected = hurwitz_seed(preset, 100, args.horizon)
            cfg = {
                "model": {
                    "mdp": {"seed": s, "gamma": 0.5},
                    "policies": {"target": "behavior" if preset == "on_policy" else "random",
                                 "target_seed": s + 1},
                    "factors": {"preset": preset, "lam": 0.9},
                    "horizon": args.horizon,
                },
                "schedule": {"eta": 1.0, "mu_alpha": 1.5},
                "rates": {"zeta": [args.zeta], "l2_check": "match", "n_lo": 1000},
            }
            path = Path(tmp) / f"{preset}.yaml"
            path.write_text(yaml.safe_dump(cfg))
            print(f"== {preset} (mdp seed {s}, {rejected} rejected draws)", flush=True)
            codes[preset] = pmdrift(["all", "--config", str(path), "--out", args.out,
                                     "--seeds", args.seeds, "--steps", str(args.steps)])
    print({k: ("pass" if v == 0 else f"exit {v}") for k, v in codes.items()})
    return max(codes.values())


if __name__ == "__main__":
    raise SystemExit(main())
