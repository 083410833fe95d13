"""Generalized TD family on finite MDPs.

A window ``y = (s_0, a_0, ..., s_N, a_N)`` of the behaviour trajectory drives
the N-step update

    g(w, y) = phi_0 sum_{i<N} gamma^i (prod_{j=1..i} c_j) delta_i(w; y),
    delta_i = r(s_i, a_i) + gamma rho_{i+1} phi_{i+1}^T w - phi_i^T w,

which is affine, ``g(w, y) = A(y) w - b(y)``.  The importance factors
``(c, rho)`` select the algorithm (on/off-policy n-step TD, Q-trace, Retrace,
Tree-Backup, Q^pi(lambda)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import InputError, ModelError, StructureError
from .markov import MAX_STATES, FiniteMarkovChain, contraction_setup, is_hurwitz
from .norms import Norm
from .sa import AffineSAProblem

PRESETS = ("on_policy", "off_policy", "q_trace", "retrace", "tree_backup", "q_pi")


@dataclass(frozen=True, eq=False)
class FiniteMDP:
    p: np.ndarray  # p[s, a, s']
    r: np.ndarray  # r[s, a]
    gamma: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise InputError(f"transition tensor must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise InputError(f"reward table must have shape {p.shape[:2]}, got {r.shape}")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=2) - 1.0)) > 1e-12:
            raise InputError("each p[s, a, :] must be a probability vector")
        if not np.all(np.isfinite(r)):
            raise InputError("rewards must be finite")
        if not 0.0 < self.gamma < 1.0:
            raise InputError(f"discount must lie in (0, 1), got {self.gamma}")
        object.__setattr__(self, "p", p / p.sum(axis=2, keepdims=True))
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self):
        return self.p.shape[0]

    @property
    def n_actions(self):
        return self.p.shape[1]

    @property
    def r_max(self):
        return float(np.abs(self.r).max())


def random_mdp(n_states, n_actions, gamma=0.9, seed=0):
    """Dirichlet(1) transitions and U[-1, 1] rewards."""
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return FiniteMDP(p, r, gamma)


def random_policy(n_states, n_actions, seed=0, concentration=1.0):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.full(n_actions, concentration), size=n_states)


@dataclass(frozen=True, eq=False)
class PolicyPair:
    target: np.ndarray
    behavior: np.ndarray

    def __post_init__(self):
        for name in ("target", "behavior"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim != 2 or np.any(m < 0) or np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-12:
                raise InputError(f"{name} policy must be a row-stochastic (S, A) matrix")
            object.__setattr__(self, name, m / m.sum(axis=1, keepdims=True))
        if self.target.shape != self.behavior.shape:
            raise InputError("target and behavior policies differ in shape")
        if np.any(self.behavior <= 0):
            raise InputError("behavior policy must give every action positive probability")

    @classmethod
    def on_policy(cls, policy):
        return cls(policy, policy)

    @property
    def ratio(self):
        return self.target / self.behavior


@dataclass(frozen=True)
class FactorSpec:
    """Importance factor preset, or custom ``c``/``rho`` tables of shape (S, A)."""

    preset: str = "on_policy"
    lam: float = 1.0
    c_bar: float = 1.0
    rho_bar: float = 1.0
    c: tuple | None = None
    rho: tuple | None = None

    def __post_init__(self):
        if self.preset not in PRESETS + ("custom",):
            raise InputError(f"unknown factor preset {self.preset!r}")
        if self.preset == "custom" and (self.c is None or self.rho is None):
            raise InputError("custom factors need both c and rho tables")

    def tables(self, policies):
        ratio = policies.ratio
        pi = policies.target
        one = np.ones_like(ratio)
        if self.preset == "on_policy":
            c, rho = one, one
        elif self.preset == "off_policy":
            c, rho = ratio, ratio
        elif self.preset == "q_trace":
            c, rho = np.minimum(self.c_bar, ratio), np.minimum(self.rho_bar, ratio)
        elif self.preset == "retrace":
            c, rho = self.lam * np.minimum(1.0, ratio), ratio
        elif self.preset == "tree_backup":
            c, rho = self.lam * pi, ratio
        elif self.preset == "q_pi":
            c, rho = self.lam * one, ratio
        else:
            c, rho = np.asarray(self.c, dtype=float), np.asarray(self.rho, dtype=float)
        c, rho = np.array(c, dtype=float), np.array(rho, dtype=float)
        if c.shape != ratio.shape or rho.shape != ratio.shape:
            raise InputError("factor tables must have shape (S, A)")
        if np.any(c < 0) or np.any(rho < 0) or not (np.all(np.isfinite(c)) and np.all(np.isfinite(rho))):
            raise InputError("factors must be finite and nonnegative")
        return c, rho

    def to_dict(self):
        out = {"preset": self.preset}
        if self.preset in ("retrace", "tree_backup", "q_pi"):
            out["lam"] = self.lam
        if self.preset == "q_trace":
            out.update(c_bar=self.c_bar, rho_bar=self.rho_bar)
        if self.preset == "custom":
            out.update(c=[list(r) for r in self.c], rho=[list(r) for r in self.rho])
        return out


def behavior_pair_chain(mdp, policies):
    """State-action chain (s, a) -> (s', a') under the behaviour policy; pair index s * A + a."""
    S, A = mdp.n_states, mdp.n_actions
    P = mdp.p[:, :, :, None] * policies.behavior[None, None, :, :]
    return FiniteMarkovChain(P.reshape(S * A, S * A))


def build_window_chain(mdp, policies, N, require_aperiodic=True, max_windows=MAX_STATES):
    """Chain over positive-probability windows of N + 1 consecutive state-action pairs.

    Returns ``(chain, windows)`` where ``windows[k]`` lists the pair indices
    ``s_i * A + a_i`` of window k.
    """
    if N < 1:
        raise InputError("horizon N must be at least 1")
    pairs = behavior_pair_chain(mdp, policies)
    if not np.all(pairs.recurrent):
        raise StructureError("behavior state-action chain is reducible")
    if require_aperiodic:
        pairs.require_aperiodic()
    Psa = pairs.P
    succ = [np.flatnonzero(Psa[x] > 0) for x in range(pairs.n)]
    windows = [(x,) for x in range(pairs.n)]
    for _ in range(N):
        windows = [w + (int(x),) for w in windows for x in succ[w[-1]]]
        if len(windows) > max_windows:
            raise InputError(f"window count exceeds the cap of {max_windows}")
    index = {w: k for k, w in enumerate(windows)}
    P = np.zeros((len(windows), len(windows)))
    for k, w in enumerate(windows):
        head = w[1:]
        for x in succ[w[-1]]:
            P[k, index[head + (int(x),)]] = Psa[w[-1], x]
    labels = [tuple((x // mdp.n_actions, x % mdp.n_actions) for x in w) for w in windows]
    chain = FiniteMarkovChain(P, states=labels, max_states=max_windows)
    return chain, np.array(windows, dtype=int)


def td_increment(model, w, y):
    """Generalized TD increment of a single window, evaluated term by term."""
    w = np.asarray(w, dtype=float)
    pairs = model.windows[y]
    phi = model.features
    gamma = model.mdp.gamma
    r = model.mdp.r.reshape(-1)
    c, rho = model.c.reshape(-1), model.rho.reshape(-1)
    total = 0.0
    trace = 1.0
    for i in range(model.horizon):
        if i > 0:
            trace *= c[pairs[i]]
        delta = r[pairs[i]] + gamma * rho[pairs[i + 1]] * phi[pairs[i + 1]] @ w - phi[pairs[i]] @ w
        total += gamma**i * trace * delta
    return phi[pairs[0]] * total


def _affine_tables(windows, features, gamma, r, c, rho, N):
    Phi = features[windows]  # (W, N+1, d)
    C = c[windows]
    R = r[windows]
    Rho = rho[windows]
    coef = np.ones((windows.shape[0], N))
    for i in range(1, N):
        coef[:, i] = coef[:, i - 1] * gamma * C[:, i]
    v = np.zeros((windows.shape[0], features.shape[1]))
    s = np.zeros(windows.shape[0])
    for i in range(N):
        v += coef[:, i, None] * (gamma * Rho[:, i + 1, None] * Phi[:, i + 1] - Phi[:, i])
        s += coef[:, i] * R[:, i]
    A = Phi[:, 0, :, None] * v[:, None, :]
    b = -Phi[:, 0] * s[:, None]
    return A, b


@dataclass(eq=False)
class GeneralizedTDModel:
    mdp: FiniteMDP
    policies: PolicyPair
    factors: FactorSpec
    horizon: int = 1
    features: np.ndarray | None = None
    require_hurwitz: bool = True
    beta_grid: np.ndarray | None = None
    max_windows: int = MAX_STATES
    # compiled state
    window_chain: FiniteMarkovChain = field(init=False, repr=False)
    windows: np.ndarray = field(init=False, repr=False)
    c: np.ndarray = field(init=False, repr=False)
    rho: np.ndarray = field(init=False, repr=False)
    A_y: np.ndarray = field(init=False, repr=False)
    b_y: np.ndarray = field(init=False, repr=False)
    A_bar: np.ndarray = field(init=False, repr=False)
    b_bar: np.ndarray = field(init=False, repr=False)
    w_star: np.ndarray = field(init=False, repr=False)
    beta: float | None = field(init=False, default=None)
    P_gtd: np.ndarray | None = field(init=False, default=None, repr=False)
    kappa_gtd: float | None = field(init=False, default=None)
    abscissa: float = field(init=False, default=np.nan)

    def __post_init__(self):
        S, A = self.mdp.n_states, self.mdp.n_actions
        if self.policies.target.shape != (S, A):
            raise InputError("policy shape does not match the MDP")
        if self.features is None:
            self.features = np.eye(S * A)
        else:
            f = np.asarray(self.features, dtype=float)
            if f.ndim == 3:
                f = f.reshape(S * A, -1)
            if f.shape[0] != S * A or not np.all(np.isfinite(f)):
                raise InputError("features must be a finite (S*A, d) table")
            self.features = f
        self.c, self.rho = self.factors.tables(self.policies)
        self.window_chain, self.windows = build_window_chain(
            self.mdp, self.policies, self.horizon, max_windows=self.max_windows
        )
        compile_affine(self)
        setup_contraction(self)

    @property
    def dim(self):
        return self.features.shape[1]

    @cached_property
    def gtd_norm(self):
        return Norm.quadratic(self.P_gtd)

    def product_form_stationary(self):
        """Window stationary law d_b(x_0) prod_i P_sa(x_i, x_{i+1})."""
        pairs = behavior_pair_chain(self.mdp, self.policies)
        probs = pairs.pi[self.windows[:, 0]].copy()
        for i in range(self.horizon):
            probs *= pairs.P[self.windows[:, i], self.windows[:, i + 1]]
        return probs

    def initial_distribution(self, mode="stationary", start_state=0):
        """Law of the first window: stationary, or a fixed start state followed by N burn-in steps."""
        if mode == "stationary":
            return np.array(self.window_chain.pi)
        if mode != "fixed":
            raise InputError(f"unknown initial window mode {mode!r}")
        S, A = self.mdp.n_states, self.mdp.n_actions
        if not 0 <= start_state < S:
            raise InputError("start state out of range")
        pairs = behavior_pair_chain(self.mdp, self.policies)
        first = self.windows[:, 0]
        mu = np.where(first // A == start_state, self.policies.behavior[start_state, first % A], 0.0)
        for i in range(self.horizon):
            mu = mu * pairs.P[self.windows[:, i], self.windows[:, i + 1]]
        for _ in range(self.horizon):
            mu = mu @ self.window_chain.P
        return mu / mu.sum()

    def sa_problem(self):
        """The recursion in SA form: F(w, y) = beta (A(y) w - b(y)), alpha_n = a_n / beta."""
        return AffineSAProblem(
            chain=self.window_chain,
            A=self.beta * self.A_y,
            b=self.beta * self.b_y,
            theta_star=self.w_star,
            norm=self.gtd_norm,
            kappa=self.kappa_gtd,
            beta=self.beta,
        )


def compile_affine(model):
    """Per-window A(y), b(y), their stationary means, and the mean root w*."""
    mdp = model.mdp
    A_y, b_y = _affine_tables(
        model.windows,
        model.features,
        mdp.gamma,
        mdp.r.reshape(-1),
        model.c.reshape(-1),
        model.rho.reshape(-1),
        model.horizon,
    )
    varpi = model.window_chain.pi
    A_bar = np.tensordot(varpi, A_y, axes=(0, 0))
    b_bar = varpi @ b_y
    lam = np.linalg.eigvals(A_bar)
    if np.min(np.abs(lam)) < 1e-12 * max(1.0, np.max(np.abs(lam))):
        raise ModelError(f"mean matrix is singular; spectrum {np.sort_complex(lam)}")
    model.A_y, model.b_y = A_y, b_y
    model.A_bar, model.b_bar = A_bar, b_bar
    model.w_star = np.linalg.solve(A_bar, b_bar)
    return A_y, b_y, A_bar, b_bar, model.w_star


def setup_contraction(model):
    """Lyapunov norm and step beta making w + beta (A_bar w - b_bar) a contraction."""
    ok, abscissa = is_hurwitz(model.A_bar)
    model.abscissa = abscissa
    if not ok:
        if model.require_hurwitz:
            raise ModelError(
                f"mean matrix is not Hurwitz (spectral abscissa {abscissa:.4e}); "
                f"eigenvalues {np.sort_complex(np.linalg.eigvals(model.A_bar))}"
            )
        return None
    beta, P, kappa = contraction_setup(model.A_bar, model.beta_grid)
    model.beta, model.P_gtd, model.kappa_gtd = beta, P, kappa
    return beta, P, kappa
