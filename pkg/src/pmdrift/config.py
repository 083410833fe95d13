"""Experiment configuration: a YAML file merged over documented defaults.

Every key must already exist in the defaults (typos are configuration
errors).  The resolved configuration, minus the output directory, is hashed
to key output directories.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np
import yaml

from .exceptions import ConfigurationError, PMDriftError
from .gtd import PRESETS, FactorSpec, FiniteMDP, GeneralizedTDModel, PolicyPair, random_mdp, random_policy
from .markov import FiniteMarkovChain, MAX_STATES
from .moreau import MoreauEnvelope, choose_xi, mu_xi
from .norms import Norm
from .sa import AffineSAProblem, LearningRateSchedule, checkpoint_grid

DEFAULTS_YAML = """\
# pmdrift experiment configuration (all keys shown with their defaults)
model:
  kind: gtd                 # gtd | linear
  mdp:
    source: random          # random | explicit
    n_states: 3
    n_actions: 2
    gamma: 0.5
    seed: 0
    p: null                 # explicit: p[s][a][s'] transition tensor
    r: null                 # explicit: r[s][a] rewards
  policies:
    behavior: uniform       # uniform | random | [[pi_b(a|s)]] table
    behavior_seed: 1000
    behavior_concentration: 1.0
    target: behavior        # behavior | uniform | random | [[pi(a|s)]] table
    target_seed: 2000
    target_concentration: 1.0
  factors:
    preset: on_policy       # on_policy | off_policy | q_trace | retrace | tree_backup | q_pi | custom
    lam: 0.9
    c_bar: 1.0
    rho_bar: 1.0
    c: null                 # custom: c[s][a]
    rho: null               # custom: rho[s][a]
  horizon: 1                # window length N
  features: null            # null = tabular; else phi[s*A + a] rows
  initial: stationary       # stationary | fixed
  start_state: 0
  max_windows: 20000
  linear:                   # kind: linear, F(theta, y) = A[y] theta - b[y]
    P: null                 # transition matrix of the driving chain
    A: null                 # per-state matrices
    b: null                 # per-state vectors
    norm: {kind: euclidean} # euclidean | max | weighted_max (weights) | quadratic (matrix)
envelope:
  xi: auto                  # auto or a positive number
  margin: 0.5               # auto: keep kappa u_xi / ell_xi <= 1 - margin (1 - kappa)
  default_xi: 1.0           # used when every xi is admissible
schedule:
  eta: 0.8
  a: 1.0                    # GTD step constant; alpha = a / beta (beta = 1 for linear models)
  alpha: null               # overrides a: the SA step constant directly
  mu_alpha: null            # overrides a and alpha: alpha = mu_alpha / mu_xi
run:
  steps: 100000
  seeds: "0..99"            # "a..b" inclusive, or a list
  theta0: null              # null = zero vector
  dense_prefix: 100
  checkpoint_factor: 1.1
certify:
  start: null               # first certified step; null = the tail index
  window: 10000             # number of certified steps after the start
  seed: 0
  K: null                   # null = K_xi, the smallest admissible constant
  mu_factor: 1.0            # mutation: certify with mu_factor * mu_xi
  remainder: verbatim       # verbatim | tight (smallest C passing the unmutated run)
  max_work: 50000000        # cap on window * number of chain states
rates:
  zeta: [0.5]
  burn_in: 100
  threshold: 0.7
  min_pass_fraction: 0.95
  pathwise_seeds: 100       # first seeds used for the pathwise witness
  n_lo: 1000
  n_hi: null                # null = run horizon
  tolerance: null           # null = 0.1 (eta < 1) or 0.15 (eta = 1)
  norm: gtd                 # gtd | euclid | mnorm
  l2_check: bound           # bound: slope <= target + tol | match: |slope - target| <= tol
verify:
  envelope: true
  poisson: true
  contraction: true
  drift_probes: true
  points: 1000
  seed: 0
output:
  dir: runs
"""

DEFAULTS = yaml.safe_load(DEFAULTS_YAML)

_FREE_KEYS = {("model", "linear", "norm")}


def _merge(base, over, path=()):
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = ".".join(path + (str(key),))
        if key not in base:
            raise ConfigurationError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict) and path + (key,) not in _FREE_KEYS:
            if not isinstance(val, dict):
                raise ConfigurationError(f"{where} must be a mapping")
            out[key] = _merge(base[key], val, path + (key,))
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_seeds(spec):
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, (list, tuple)):
        seeds = [int(s) for s in spec]
    else:
        m = re.fullmatch(r"\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*", str(spec))
        if not m:
            raise ConfigurationError(f"seeds must look like 'a..b' or be a list, got {spec!r}")
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise ConfigurationError(f"empty seed range {spec!r}")
        seeds = list(range(lo, hi + 1))
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError("seeds must be distinct")
    if any(s < 0 for s in seeds):
        raise ConfigurationError("seeds must be nonnegative")
    return seeds


def parse_zeta(spec):
    if isinstance(spec, (int, float)):
        return [float(spec)]
    if isinstance(spec, str):
        try:
            return [float(v) for v in spec.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigurationError(f"bad zeta list {spec!r}") from exc
    return [float(v) for v in spec]


@dataclass
class ExperimentConfig:
    data: dict

    # construction ---------------------------------------------------
    @classmethod
    def defaults(cls):
        return cls(copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, data):
        cfg = cls(_merge(DEFAULTS, data or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigurationError("top level of the config must be a mapping")
        return cls.from_dict(data or {})

    def override(self, *, seeds=None, steps=None, zeta=None, out=None):
        d = copy.deepcopy(self.data)
        if seeds is not None:
            d["run"]["seeds"] = seeds
        if steps is not None:
            d["run"]["steps"] = int(steps)
        if zeta is not None:
            d["rates"]["zeta"] = parse_zeta(zeta)
        if out is not None:
            d["output"]["dir"] = str(out)
        cfg = ExperimentConfig(d)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    # identity -------------------------------------------------------
    def canonical(self):
        d = copy.deepcopy(self.data)
        d.pop("output", None)
        d["run"]["seeds"] = self.seeds
        d["rates"]["zeta"] = self.zetas
        return d

    @property
    def hash(self):
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=float)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=False)

    # validated views ------------------------------------------------
    @property
    def seeds(self):
        return parse_seeds(self.data["run"]["seeds"])

    @property
    def zetas(self):
        return parse_zeta(self.data["rates"]["zeta"])

    def validate(self):
        d = self.data
        m = d["model"]
        if m["kind"] not in ("gtd", "linear"):
            raise ConfigurationError(f"model.kind must be gtd or linear, got {m['kind']!r}")
        s = d["schedule"]
        eta = s["eta"]
        if not isinstance(eta, (int, float)) or not 0.0 < eta <= 1.0:
            raise ConfigurationError(f"schedule.eta must lie in (0, 1], got {eta!r}")
        if s["alpha"] is not None and s["mu_alpha"] is not None:
            raise ConfigurationError("set at most one of schedule.alpha and schedule.mu_alpha")
        for key in ("a", "alpha", "mu_alpha"):
            v = s[key]
            if v is not None and (not isinstance(v, (int, float)) or v < 0):
                raise ConfigurationError(f"schedule.{key} must be a nonnegative number")
        if s["mu_alpha"] is not None and s["mu_alpha"] <= 0:
            raise ConfigurationError("schedule.mu_alpha must be positive")
        r = d["run"]
        if not isinstance(r["steps"], int) or r["steps"] < 0:
            raise ConfigurationError("run.steps must be a nonnegative integer")
        if r["checkpoint_factor"] <= 1.0:
            raise ConfigurationError("run.checkpoint_factor must exceed 1")
        self.seeds
        e = d["envelope"]
        if e["xi"] != "auto" and (not isinstance(e["xi"], (int, float)) or e["xi"] <= 0):
            raise ConfigurationError("envelope.xi must be 'auto' or a positive number")
        if not 0.0 < e["margin"] < 1.0:
            raise ConfigurationError("envelope.margin must lie in (0, 1)")
        c = d["certify"]
        if not isinstance(c["window"], int) or c["window"] < 1:
            raise ConfigurationError("certify.window must be a positive integer")
        if c["start"] is not None and (not isinstance(c["start"], int) or c["start"] < 0):
            raise ConfigurationError("certify.start must be null or a nonnegative integer")
        if c["remainder"] not in ("verbatim", "tight"):
            raise ConfigurationError("certify.remainder must be verbatim or tight")
        if c["mu_factor"] <= 0:
            raise ConfigurationError("certify.mu_factor must be positive")
        q = d["rates"]
        if q["norm"] not in ("gtd", "euclid", "mnorm"):
            raise ConfigurationError("rates.norm must be gtd, euclid or mnorm")
        if q["l2_check"] not in ("bound", "match"):
            raise ConfigurationError("rates.l2_check must be bound or match")
        if not 0.0 < q["min_pass_fraction"] <= 1.0:
            raise ConfigurationError("rates.min_pass_fraction must lie in (0, 1]")
        if q["n_lo"] < 10 * q["burn_in"]:
            raise ConfigurationError("rates.n_lo must be at least 10 x rates.burn_in")
        self.zetas
        if m["kind"] == "gtd":
            f = m["factors"]["preset"]
            if f not in PRESETS + ("custom",):
                raise ConfigurationError(f"unknown factor preset {f!r}")
            if not isinstance(m["horizon"], int) or m["horizon"] < 1:
                raise ConfigurationError("model.horizon must be a positive integer")
            if m["max_windows"] > MAX_STATES:
                raise ConfigurationError(f"model.max_windows is capped at {MAX_STATES}")
            g = m["mdp"]["gamma"]
            if not 0.0 < g < 1.0:
                raise ConfigurationError("model.mdp.gamma must lie in (0, 1)")
            if m["initial"] not in ("stationary", "fixed"):
                raise ConfigurationError("model.initial must be stationary or fixed")
        else:
            lin = m["linear"]
            if lin["P"] is None or lin["A"] is None or lin["b"] is None:
                raise ConfigurationError("linear models need P, A and b")
        return self


# ---------------------------------------------------------------- builders


def _policy(spec, S, A, seed, conc, fallback=None):
    if isinstance(spec, str):
        if spec == "uniform":
            return np.full((S, A), 1.0 / A)
        if spec == "random":
            return random_policy(S, A, seed=seed, concentration=conc)
        if spec == "behavior" and fallback is not None:
            return fallback
        raise ConfigurationError(f"unknown policy {spec!r}")
    return np.asarray(spec, dtype=float)


def build_mdp(cfg):
    m = cfg["model"]["mdp"]
    if m["source"] == "random":
        return random_mdp(m["n_states"], m["n_actions"], gamma=m["gamma"], seed=m["seed"])
    if m["source"] == "explicit":
        if m["p"] is None or m["r"] is None:
            raise ConfigurationError("explicit MDPs need p and r")
        return FiniteMDP(np.asarray(m["p"], dtype=float), np.asarray(m["r"], dtype=float), m["gamma"])
    raise ConfigurationError(f"model.mdp.source must be random or explicit, got {m['source']!r}")


def build_policies(cfg, mdp):
    p = cfg["model"]["policies"]
    S, A = mdp.n_states, mdp.n_actions
    pb = _policy(p["behavior"], S, A, p["behavior_seed"], p["behavior_concentration"])
    pi = _policy(p["target"], S, A, p["target_seed"], p["target_concentration"], fallback=pb)
    return PolicyPair(pi, pb)


def build_factors(cfg):
    f = cfg["model"]["factors"]
    c = None if f["c"] is None else tuple(map(tuple, f["c"]))
    rho = None if f["rho"] is None else tuple(map(tuple, f["rho"]))
    return FactorSpec(f["preset"], lam=f["lam"], c_bar=f["c_bar"], rho_bar=f["rho_bar"], c=c, rho=rho)


@dataclass
class Experiment:
    """Everything a command needs, built once from a config."""

    config: ExperimentConfig
    model: object
    problem: AffineSAProblem
    env: MoreauEnvelope
    schedule: LearningRateSchedule
    init_dist: np.ndarray | None
    xi_admissible: bool

    @property
    def beta(self):
        return self.problem.beta if self.problem.beta is not None else 1.0

    def checkpoints(self, steps=None):
        r = self.config["run"]
        n = r["steps"] if steps is None else steps
        return checkpoint_grid(n, dense_prefix=r["dense_prefix"], factor=r["checkpoint_factor"])

    def theta0(self):
        t = self.config["run"]["theta0"]
        if t is None:
            return np.zeros(self.problem.dim)
        t = np.asarray(t, dtype=float)
        if t.shape != (self.problem.dim,):
            raise ConfigurationError(f"run.theta0 must have {self.problem.dim} entries")
        return t


def _linear_problem(cfg):
    lin = cfg["model"]["linear"]
    chain = FiniteMarkovChain(np.asarray(lin["P"], dtype=float))
    A = np.asarray(lin["A"], dtype=float)
    b = np.asarray(lin["b"], dtype=float)
    if A.ndim == 2:  # one matrix shared by all states
        A = np.broadcast_to(A, (chain.n,) + A.shape).copy()
    if b.ndim == 1:
        b = np.broadcast_to(b, (chain.n, b.size)).copy()
    norm = Norm.from_dict(lin["norm"], dim=A.shape[-1])
    return AffineSAProblem(chain, A, b, norm=norm, beta=1.0)


def build_experiment(cfg):
    """Compile the model, envelope and step schedule; domain errors become config errors."""
    try:
        if cfg["model"]["kind"] == "gtd":
            mdp = build_mdp(cfg)
            pol = build_policies(cfg, mdp)
            m = cfg["model"]
            feat = None if m["features"] is None else np.asarray(m["features"], dtype=float)
            model = GeneralizedTDModel(mdp, pol, build_factors(cfg), horizon=m["horizon"],
                                       features=feat, max_windows=m["max_windows"])
            problem = model.sa_problem()
            init = model.initial_distribution(m["initial"], m["start_state"])
        else:
            model = None
            problem = _linear_problem(cfg)
            init = None
        kappa = problem.kappa
        if not 0.0 <= kappa < 1.0:
            raise ConfigurationError(f"mean map is not a contraction in the chosen norm (kappa={kappa:.6g})")
        e = cfg["envelope"]
        xi = choose_xi(kappa, problem.norm, e["margin"], e["default_xi"]) if e["xi"] == "auto" else float(e["xi"])
        env = MoreauEnvelope(problem.norm, xi)
        admissible = kappa * env.ratio < 1.0
        s = cfg["schedule"]
        beta = problem.beta if problem.beta is not None else 1.0
        if s["mu_alpha"] is not None:
            if not admissible:
                raise ConfigurationError("schedule.mu_alpha needs an admissible xi")
            alpha = s["mu_alpha"] / mu_xi(kappa, env)
        elif s["alpha"] is not None:
            alpha = float(s["alpha"])
        else:
            alpha = float(s["a"]) / beta
        schedule = LearningRateSchedule(alpha, float(s["eta"]))
    except ConfigurationError:
        raise
    except PMDriftError as exc:
        raise ConfigurationError(f"{type(exc).__name__}: {exc}") from exc
    return Experiment(cfg, model, problem, env, schedule, init, bool(admissible))
