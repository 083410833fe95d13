"""Finite Markov chains: stationarity, Poisson equation, Lyapunov contraction.

The Poisson solver uses the fundamental matrix Z = (I - P + 1 pi^T)^{-1} and
returns the pi-centred representative h of

    h - P h = g - pi(g),    pi(h) = 0,

which coincides with the series sum_t P^t (g - pi(g)) on aperiodic chains.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, reduce
from math import gcd

import numpy as np
import scipy.linalg as sla
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .exceptions import ConfigurationError, InputError, NumericalError, StructureError

MAX_STATES = 20_000
HURWITZ_TOL = 1e-10


class FiniteMarkovChain:
    """Row-stochastic transition matrix over enumerated states.

    The chain must have exactly one closed communicating class; states outside
    it are transient and carry zero stationary mass.  ``pi`` and the
    fundamental-matrix factorisation are computed on first use and cached.
    """

    def __init__(self, P, states=None, max_states=MAX_STATES):
        P = np.array(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise InputError(f"transition matrix must be square and non-empty, got {P.shape}")
        n = P.shape[0]
        if n > max_states:
            raise InputError(f"{n} states exceeds the cap of {max_states}")
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise InputError("transition probabilities must be finite and nonnegative")
        rows = P.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > 1e-12:
            raise InputError(f"rows must sum to one (max deviation {np.max(np.abs(rows - 1.0)):.2e})")
        P /= rows[:, None]
        P.setflags(write=False)
        self.P = P
        self.states = list(range(n)) if states is None else list(states)
        if len(self.states) != n:
            raise InputError("state labels do not match the matrix size")
        self._classify()

    @property
    def n(self):
        return self.P.shape[0]

    def _classify(self):
        graph = csr_matrix(self.P > 0)
        ncomp, labels = connected_components(graph, directed=True, connection="strong")
        closed = []
        for c in range(ncomp):
            members = np.flatnonzero(labels == c)
            out = self.P[np.ix_(members, np.flatnonzero(labels != c))]
            if out.size == 0 or not np.any(out > 0):
                closed.append(members)
        if len(closed) != 1:
            raise StructureError(f"chain has {len(closed)} closed communicating classes; exactly one is required")
        self.recurrent = np.zeros(self.n, dtype=bool)
        self.recurrent[closed[0]] = True
        self.period = _period(self.P, closed[0])

    @property
    def is_aperiodic(self):
        return self.period == 1

    def require_aperiodic(self):
        if not self.is_aperiodic:
            raise StructureError(f"chain is periodic with period {self.period}")

    @cached_property
    def pi(self):
        idx = np.flatnonzero(self.recurrent)
        Q = self.P[np.ix_(idx, idx)]
        m = idx.size
        M = Q.T - np.eye(m)
        M[-1, :] = 1.0
        rhs = np.zeros(m)
        rhs[-1] = 1.0
        sub = np.linalg.solve(M, rhs)
        sub = np.clip(sub, 0.0, None)
        sub /= sub.sum()
        pi = np.zeros(self.n)
        pi[idx] = sub
        if np.max(np.abs(pi @ self.P - pi)) > 1e-10:
            raise NumericalError("stationary distribution failed the invariance check")
        pi.setflags(write=False)
        return pi

    @cached_property
    def _fundamental_lu(self):
        M = np.eye(self.n) - self.P + np.outer(np.ones(self.n), self.pi)
        lu = sla.lu_factor(M)
        if np.min(np.abs(np.diag(lu[0]))) < 1e-14:
            raise NumericalError("I - P + 1 pi^T is numerically singular")
        return lu

    def fundamental_matrix(self):
        return sla.lu_solve(self._fundamental_lu, np.eye(self.n))

    def apply_fundamental(self, g):
        return sla.lu_solve(self._fundamental_lu, g)

    def initial_from(self, dist):
        dist = np.asarray(dist, dtype=float)
        if dist.shape != (self.n,) or np.any(dist < 0) or not np.isclose(dist.sum(), 1.0):
            raise InputError("initial distribution must be a probability vector over the chain states")
        return dist / dist.sum()


def _period(P, members):
    """Period of the closed class via BFS levels: gcd of level[u] + 1 - level[v] over edges."""
    sub = P[np.ix_(members, members)] > 0
    graph = csr_matrix(sub)
    order, pred = breadth_first_order(graph, 0, directed=True, return_predecessors=True)
    level = np.full(len(members), -1)
    level[0] = 0
    for v in order[1:]:
        level[v] = level[pred[v]] + 1
    us, vs = np.nonzero(sub)
    diffs = np.abs(level[us] + 1 - level[vs])
    return int(reduce(gcd, diffs.tolist(), 0)) or 1


def stationary_distribution(chain):
    return chain.pi


def poisson_solve(chain, g):
    """Centred solution h of h - P h = g - pi(g) for g of shape (n,) or (n, k)."""
    g = np.asarray(g, dtype=float)
    if g.shape[0] != chain.n:
        raise InputError(f"g has {g.shape[0]} rows but the chain has {chain.n} states")
    flat = g.reshape(chain.n, -1)
    centred = flat - chain.pi @ flat
    h = chain.apply_fundamental(centred)
    return h.reshape(g.shape)


@dataclass(frozen=True, eq=False)
class AffinePoissonSolution:
    """Poisson solution H_theta(y) = G[y] theta - h[y] of an affine update.

    ``PG`` and ``Ph`` hold the one-step conditional means (P G)(y), (P h)(y)
    so that (P H_theta)(y) = PG[y] theta - Ph[y].
    """

    G: np.ndarray
    h: np.ndarray
    PG: np.ndarray
    Ph: np.ndarray

    def H(self, theta, y):
        theta = np.asarray(theta, dtype=float)
        return np.einsum("...ij,...j->...i", self.G[y], theta) - self.h[y]

    def PH(self, theta, y):
        theta = np.asarray(theta, dtype=float)
        return np.einsum("...ij,...j->...i", self.PG[y], theta) - self.Ph[y]


def affine_poisson(chain, A, b):
    """Poisson solution for F(theta, y) = A[y] theta - b[y]."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = chain.n
    if A.ndim != 3 or A.shape[0] != n or A.shape[1] != A.shape[2]:
        raise InputError(f"A must have shape ({n}, d, d), got {A.shape}")
    d = A.shape[1]
    if b.shape != (n, d):
        raise InputError(f"b must have shape ({n}, {d}), got {b.shape}")
    G = poisson_solve(chain, A.reshape(n, d * d)).reshape(n, d, d)
    h = poisson_solve(chain, b)
    PG = np.tensordot(chain.P, G, axes=(1, 0))
    Ph = chain.P @ h
    return AffinePoissonSolution(G=G, h=h, PG=PG, Ph=Ph)


def is_hurwitz(A, tol=HURWITZ_TOL):
    """``(hurwitz, spectral abscissa)``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"expected a square matrix, got {A.shape}")
    abscissa = float(np.max(np.linalg.eigvals(A).real))
    return abscissa < -tol, abscissa


def solve_lyapunov(A):
    """SPD solution P of A^T P + P A = -I for Hurwitz A."""
    A = np.asarray(A, dtype=float)
    ok, abscissa = is_hurwitz(A)
    if not ok:
        raise ConfigurationError(f"matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")
    d = A.shape[0]
    P = sla.solve_continuous_lyapunov(A.T, -np.eye(d))
    P = 0.5 * (P + P.T)
    resid = np.max(np.abs(A.T @ P + P @ A + np.eye(d)))
    if resid > 1e-8 * max(1.0, np.abs(P).max()):
        raise NumericalError(f"Lyapunov residual {resid:.2e} too large")
    return P


def p_norm_operator_norm(M, P):
    """sqrt of lambda_max(P^{-1/2} M^T P M P^{-1/2})."""
    lam, vec = np.linalg.eigh(P)
    R = (vec * np.sqrt(lam)) @ vec.T
    Ri = (vec / np.sqrt(lam)) @ vec.T
    return float(np.linalg.norm(R @ M @ Ri, ord=2))


def default_beta_grid(A_bar, n=32):
    hi = 1.0 / np.linalg.norm(A_bar, ord=2)
    lo = min(1e-3, hi / 10.0)
    return np.geomspace(lo, hi, n)


def contraction_setup(A_bar, beta_grid=None):
    """``(beta, P, kappa)``: grid beta minimising the P-norm of I + beta A_bar."""
    A_bar = np.asarray(A_bar, dtype=float)
    P = solve_lyapunov(A_bar)
    grid = default_beta_grid(A_bar) if beta_grid is None else np.atleast_1d(np.asarray(beta_grid, dtype=float))
    if np.any(grid <= 0):
        raise InputError("beta grid must be positive")
    I = np.eye(A_bar.shape[0])
    kappas = np.array([p_norm_operator_norm(I + beta * A_bar, P) for beta in grid])
    best = int(np.argmin(kappas))
    if not kappas[best] < 1.0:
        raise ConfigurationError(f"no beta on the grid gives a contraction (best kappa {kappas[best]:.6f})")
    return float(grid[best]), P, float(kappas[best])
