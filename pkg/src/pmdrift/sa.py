"""Stochastic approximation theta_{n+1} = theta_n + alpha_n F(theta_n, Y_n) over a finite chain.

Ensembles are simulated as one vectorised batch: every step advances all
seeds at once.  Randomness is counter based: seed ``s`` owns a Philox stream
keyed by ``s`` and its ``n``-th uniform drives the move to ``Y_n``, so a
seed's trajectory does not depend on which other seeds share the batch.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import ConfigurationError, DivergenceError, InputError
from .markov import affine_poisson
from .norms import Norm

DIVERGENCE_GUARD = 1e12
_CHUNK = 4096
THREADS_ENV = "PMDRIFT_THREADS"


@dataclass(frozen=True)
class LearningRateSchedule:
    alpha: float
    eta: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise InputError(f"alpha must be finite and nonnegative, got {self.alpha}")
        if not 0.0 < self.eta <= 1.0:
            raise InputError(f"eta must lie in (0, 1], got {self.eta}")

    def __call__(self, n):
        return self.alpha / (np.asarray(n, dtype=float) + 1.0) ** self.eta

    def r(self, n):
        """alpha_n^2 + |alpha_{n+1} - alpha_n|."""
        a = self(n)
        return a**2 + np.abs(self(np.asarray(n) + 1) - a)


def learning_rate(schedule, n):
    if np.any(np.asarray(n) < 0):
        raise InputError("step index must be nonnegative")
    return schedule(n)


class SAProblem:
    """Update field F over a finite chain with known root and contraction data.

    Subclasses supply ``F(theta, y)`` for batches ``theta`` (k, d) and window
    indices ``y`` (k,), plus a Poisson solution exposing ``H`` and ``PH``.
    """

    chain = None
    theta_star = None
    norm = None
    kappa = None

    @property
    def dim(self):
        return self.theta_star.shape[0]

    def F(self, theta, y):
        raise NotImplementedError

    def mean_field(self, theta):
        theta = np.asarray(theta, dtype=float)
        pi = self.chain.pi
        ys = np.flatnonzero(pi > 0)
        vals = np.stack([self.F(np.broadcast_to(theta, (1, self.dim)), np.array([y]))[0] for y in ys])
        return pi[ys] @ vals

    @property
    def poisson(self):
        raise NotImplementedError

    def lipschitz_constants(self):
        raise NotImplementedError


class AffineSAProblem(SAProblem):
    """F(theta, y) = A[y] theta - b[y].

    ``norm`` defaults to Euclidean and ``kappa`` to the induced norm of
    ``I + A_bar``; ``theta_star`` defaults to the root of the mean field.
    """

    def __init__(self, chain, A, b, theta_star=None, norm=None, kappa=None, beta=None):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 3 or A.shape[0] != chain.n or A.shape[1] != A.shape[2] or b.shape != A.shape[:2]:
            raise InputError(f"inconsistent shapes A{A.shape}, b{b.shape} for a {chain.n}-state chain")
        self.chain, self.A, self.b = chain, A, b
        self.beta = beta
        self.A_bar = np.tensordot(chain.pi, A, axes=(0, 0))
        self.b_bar = chain.pi @ b
        d = A.shape[1]
        if theta_star is None:
            try:
                theta_star = np.linalg.solve(self.A_bar, self.b_bar)
            except np.linalg.LinAlgError as exc:
                raise ConfigurationError("mean matrix is singular") from exc
        self.theta_star = np.asarray(theta_star, dtype=float)
        self.norm = Norm.euclidean(d) if norm is None else norm
        if kappa is None:
            kappa = float(self.norm.operator_norm(np.eye(d) + self.A_bar))
        self.kappa = float(kappa)

    def F(self, theta, y):
        return np.einsum("...ij,...j->...i", self.A[y], np.asarray(theta, dtype=float)) - self.b[y]

    def mean_field(self, theta):
        return np.asarray(theta, dtype=float) @ self.A_bar.T - self.b_bar

    @cached_property
    def poisson(self):
        return affine_poisson(self.chain, self.A, self.b)

    def lipschitz_constants(self):
        """``(L_F, L_H)`` as maxima over recurrent windows (transient ones are never visited)."""
        rec = self.chain.recurrent
        norm, ts = self.norm, self.theta_star
        opA = norm.operator_norm(self.A[rec])
        F_star = norm(np.einsum("kij,j->ki", self.A[rec], ts) - self.b[rec])
        L_F = float(max(np.max(opA), np.max(F_star)))
        sol = self.poisson
        opG = norm.operator_norm(sol.G[rec])
        H_star = norm(np.einsum("kij,j->ki", sol.G[rec], ts) - sol.h[rec])
        L_H = float(max(np.max(opG), np.max(H_star)))
        return L_F, L_H


@dataclass(frozen=True)
class _UserPoisson:
    H_fn: object
    PH_fn: object

    def H(self, theta, y):
        return self.H_fn(theta, y)

    def PH(self, theta, y):
        return self.PH_fn(theta, y)


class CallableSAProblem(SAProblem):
    """User-supplied (possibly nonlinear) F with a user-supplied Poisson solution.

    ``F``, ``H`` and ``PH`` take batched ``(theta, y)``; ``L_F`` and ``L_H`` must
    be valid constants for the given norm.
    """

    def __init__(self, chain, F, H, PH, theta_star, norm, kappa, L_F, L_H):
        self.chain = chain
        self._F = F
        self.theta_star = np.asarray(theta_star, dtype=float)
        self.norm, self.kappa = norm, float(kappa)
        self._poisson = _UserPoisson(H, PH)
        self._L = (float(L_F), float(L_H))

    def F(self, theta, y):
        return self._F(theta, y)

    @property
    def poisson(self):
        return self._poisson

    def lipschitz_constants(self):
        return self._L


@dataclass
class Trajectory:
    seed: int
    n: np.ndarray
    theta: np.ndarray
    window: np.ndarray
    alpha: np.ndarray
    errors: dict = field(default_factory=dict)

    def __len__(self):
        return self.n.size

    def error(self, norm_choice="gtd"):
        return self.errors[norm_choice]


def checkpoint_grid(n_steps, dense_prefix=100, factor=1.1):
    """0..dense_prefix, every ceil(factor^k) and power of ten up to n_steps, and n_steps itself."""
    if n_steps < 0:
        raise InputError("n_steps must be nonnegative")
    pts = set(range(min(dense_prefix, n_steps) + 1))
    if n_steps > 0:
        kmax = int(np.ceil(np.log(n_steps) / np.log(factor))) + 1
        geo = np.ceil(factor ** np.arange(kmax + 1)).astype(np.int64)
        pts.update(int(v) for v in geo if v <= n_steps)
        pts.update(10**k for k in range(int(np.log10(n_steps)) + 1) if 10**k <= n_steps)
        pts.add(int(n_steps))
    return np.array(sorted(pts), dtype=np.int64)


def _cumulative(P):
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    return cum


def _sample_initial(init, u):
    cum = np.cumsum(init)
    cum[-1] = 1.0
    return np.searchsorted(cum, u, side="right")


def _simulate(problem, schedule, theta0, n_steps, seeds, checkpoints, init_dist):
    k = len(seeds)
    d = problem.dim
    chain = problem.chain
    cum = _cumulative(chain.P)
    init = chain.pi if init_dist is None else chain.initial_from(init_dist)
    gens = [np.random.Generator(np.random.Philox(key=int(s))) for s in seeds]
    affine = isinstance(problem, AffineSAProblem)

    cps = np.asarray(checkpoints, dtype=np.int64)
    K = cps.size
    rec_theta = np.empty((k, K, d))
    rec_y = np.empty((k, K), dtype=np.int64)
    mask = np.zeros(n_steps + 1, dtype=bool)
    mask[cps] = True
    slot = np.full(n_steps + 1, -1, dtype=np.int64)
    slot[cps] = np.arange(K)

    theta = np.tile(np.asarray(theta0, dtype=float), (k, 1))
    pos = 0  # next unread uniform in every stream
    buf = np.stack([g.random(_CHUNK) for g in gens])
    y = _sample_initial(init, buf[:, 0])
    pos = 1
    guard = DIVERGENCE_GUARD**2
    for n in range(n_steps + 1):
        if mask[n]:
            j = slot[n]
            rec_theta[:, j] = theta
            rec_y[:, j] = y
        if n == n_steps:
            break
        a_n = schedule.alpha / (n + 1.0) ** schedule.eta
        if affine:
            step = np.einsum("kij,kj->ki", problem.A[y], theta) - problem.b[y]
        else:
            step = problem.F(theta, y)
        theta = theta + a_n * step
        sq = np.einsum("ki,ki->k", theta, theta)
        if not np.all(sq <= guard):
            bad = int(np.flatnonzero(~(sq <= guard))[0])
            raise DivergenceError(
                f"divergence at step {n + 1} for seed {seeds[bad]}", step=n + 1, seed=seeds[bad]
            )
        if pos == _CHUNK:
            buf = np.stack([g.random(_CHUNK) for g in gens])
            pos = 0
        u = buf[:, pos]
        pos += 1
        y = (cum[y] <= u[:, None]).sum(axis=1)
    alpha = schedule(cps)
    return [
        (seeds[i], cps.copy(), rec_theta[i], rec_y[i], alpha.copy())
        for i in range(k)
    ]


def _attach_errors(traj, problem, env):
    e = traj.theta - problem.theta_star
    traj.errors["gtd"] = problem.norm(e)
    traj.errors["euclid"] = np.linalg.norm(e, axis=-1)
    if env is not None:
        from .moreau import m_norm

        traj.errors["mnorm"] = m_norm(env, e)
    return traj


def _thread_count():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_ensemble(problem, schedule, theta0, n_steps, seeds, checkpoints=None, init_dist=None, env=None):
    """Independent runs, one per seed, returned in seed order.

    With ``PMDRIFT_THREADS > 1`` the seeds are split into contiguous blocks
    simulated on a thread pool; results are identical either way.
    """
    seeds = [int(s) for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise InputError("seeds must be distinct")
    if not seeds:
        return []
    n_steps = int(n_steps)
    if n_steps < 0:
        raise InputError("n_steps must be nonnegative")
    theta0 = np.zeros(problem.dim) if theta0 is None else np.asarray(theta0, dtype=float)
    if theta0.shape != (problem.dim,):
        raise InputError(f"theta0 must have dimension {problem.dim}")
    if checkpoints is None:
        checkpoints = checkpoint_grid(n_steps)
    checkpoints = np.unique(np.asarray(checkpoints, dtype=np.int64))
    if checkpoints.size and (checkpoints[0] < 0 or checkpoints[-1] > n_steps):
        raise InputError("checkpoints must lie in [0, n_steps]")

    workers = min(_thread_count(), len(seeds))
    blocks = np.array_split(np.arange(len(seeds)), workers)

    def work(idx):
        return _simulate(problem, schedule, theta0, n_steps, [seeds[i] for i in idx], checkpoints, init_dist)

    if workers == 1:
        raw = work(blocks[0])
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = [r for part in pool.map(work, blocks) for r in part]
    return [_attach_errors(Trajectory(*r), problem, env) for r in raw]


def run(problem, schedule, theta0, n_steps, seed, checkpoints=None, init_dist=None, env=None):
    return run_ensemble(problem, schedule, theta0, n_steps, [seed], checkpoints, init_dist, env)[0]


def sample_windows(chain, n_steps, seed, init_dist=None):
    """Window path Y_0..Y_n alone, from the same stream layout as :func:`run`."""
    cum = _cumulative(chain.P)
    init = chain.pi if init_dist is None else chain.initial_from(init_dist)
    u = np.random.Generator(np.random.Philox(key=int(seed))).random(n_steps + 1)
    path = np.empty(n_steps + 1, dtype=np.int64)
    path[0] = _sample_initial(init, u[0])
    rows = [list(r) for r in cum]
    from bisect import bisect_right

    y = int(path[0])
    for n in range(1, n_steps + 1):
        y = bisect_right(rows[y], u[n])
        path[n] = y
    return path


CSV_COLUMNS = ("n", "alpha_n", "err_gtd", "err_euclid", "err_mnorm", "V_xi")


def write_trajectory_csv(path, traj, V=None, config_hash=None):
    cols = list(CSV_COLUMNS if V is not None else CSV_COLUMNS[:-1])
    mn = traj.errors.get("mnorm")
    with open(path, "w", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash} seed={traj.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for j in range(len(traj)):
            row = [int(traj.n[j]), repr(float(traj.alpha[j])), repr(float(traj.errors["gtd"][j])),
                   repr(float(traj.errors["euclid"][j])), repr(float(mn[j])) if mn is not None else "nan"]
            if V is not None:
                row.append(repr(float(V[j])))
            w.writerow(row)


def read_trajectory_csv(path):
    """Columns of a trajectory CSV as float arrays keyed by header name."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {h: data[:, i] for i, h in enumerate(header)}
