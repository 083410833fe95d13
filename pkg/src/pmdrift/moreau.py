"""Moreau envelope of ``x -> 0.5 |x|^2`` for the norms in :mod:`pmdrift.norms`.

For ``xi > 0`` the envelope is

    M(x) = min_u  0.5 |u|^2 + |x - u|_2^2 / (2 xi),

with gradient ``(x - u*) / xi`` where ``u*`` is the minimiser.  ``sqrt(2 M)``
is itself a norm (the "m-norm"), and

    ell_xi * m_norm(x) <= |x| <= u_xi * m_norm(x),
    ell_xi = sqrt(1 + xi ell^2),  u_xi = sqrt(1 + xi u^2).

All functions accept a single vector or a batch of row vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import ConfigurationError, InputError
from .norms import Norm

DEFAULT_XI = 1.0
DEFAULT_MARGIN = 0.5


@dataclass(frozen=True, eq=False)
class MoreauEnvelope:
    base_norm: Norm
    xi: float

    def __post_init__(self):
        if not (np.isfinite(self.xi) and self.xi > 0):
            raise InputError(f"xi must be a positive finite number, got {self.xi}")
        object.__setattr__(self, "xi", float(self.xi))

    @cached_property
    def ell_xi(self):
        ell, _ = self.base_norm.equivalence_constants()
        return float(np.sqrt(1.0 + self.xi * ell**2))

    @cached_property
    def u_xi(self):
        _, u = self.base_norm.equivalence_constants()
        return float(np.sqrt(1.0 + self.xi * u**2))

    @property
    def ratio(self):
        return self.u_xi / self.ell_xi

    @cached_property
    def _quadratic_prox(self):
        P = self.base_norm.matrix
        d = P.shape[0]
        # u* = (xi P + I)^{-1} x; the matrix is symmetric, so rows work too
        return np.linalg.solve(self.xi * P + np.eye(d), np.eye(d))

    @property
    def dim(self):
        return self.base_norm.dim


def _weighted_max_prox(x, w, xi):
    """Exact minimiser for the weighted max norm |u| = max_i |u_i| / w_i.

    For a fixed value s of |u| the best u clamps each coordinate to
    [-s w_i, s w_i], leaving the piecewise quadratic
    g(s) = s^2/2 + sum_i (|x_i| - s w_i)_+^2 / (2 xi).
    Its root lies on the piece whose active set is the top-k breakpoints
    |x_i|/w_i, and the correct k is the first one whose candidate root
    clears the next breakpoint.
    """
    ax = np.abs(x)
    t = ax / w
    order = np.argsort(-t, axis=-1, kind="stable")
    t_sorted = np.take_along_axis(t, order, axis=-1)
    w_b = np.broadcast_to(w, x.shape)
    w_sorted = np.take_along_axis(w_b, order, axis=-1)
    ax_sorted = np.take_along_axis(ax, order, axis=-1)
    s1 = np.cumsum(w_sorted * ax_sorted, axis=-1)
    s2 = np.cumsum(w_sorted**2, axis=-1)
    cand = s1 / (xi + s2)
    nxt = np.concatenate([t_sorted[..., 1:], np.zeros(x.shape[:-1] + (1,))], axis=-1)
    ok = cand >= nxt
    k = np.argmax(ok, axis=-1)
    s = np.take_along_axis(cand, k[..., None], axis=-1)
    return np.sign(x) * np.minimum(ax, s * w)


def prox_point(env, x):
    """Minimiser u* of the envelope objective at ``x``."""
    x = env.base_norm._check(x)
    norm = env.base_norm
    if norm.kind == "euclidean":
        return x / (1.0 + env.xi)
    if norm.kind == "quadratic":
        return x @ env._quadratic_prox
    w = np.ones(norm.dim) if norm.kind == "max" else norm.weights
    return _weighted_max_prox(x, w, env.xi)


def _envelope_from_prox(env, x, u):
    return 0.5 * env.base_norm(u) ** 2 + 0.5 / env.xi * np.sum((x - u) ** 2, axis=-1)


def envelope(env, x):
    x = np.asarray(x, dtype=float)
    return _envelope_from_prox(env, x, prox_point(env, x))


def envelope_gradient(env, x):
    x = np.asarray(x, dtype=float)
    return (x - prox_point(env, x)) / env.xi


def envelope_and_gradient(env, x):
    """``(M(x), grad M(x))`` from a single prox evaluation."""
    x = np.asarray(x, dtype=float)
    u = prox_point(env, x)
    return _envelope_from_prox(env, x, u), (x - u) / env.xi


def m_norm(env, x):
    return np.sqrt(2.0 * np.maximum(envelope(env, x), 0.0))


def smoothed_ratio(xi, ell, u):
    return np.sqrt((1.0 + xi * u**2) / (1.0 + xi * ell**2))


def choose_xi(kappa, norm, margin=DEFAULT_MARGIN, default_xi=DEFAULT_XI, grid=None):
    """Largest grid value of xi whose smoothed contraction keeps a relative margin.

    Requires ``kappa * u_xi / ell_xi <= 1 - margin * (1 - kappa)``.  When every
    xi is admissible (``ell == u``, or the unsmoothed ratio already satisfies
    the bound) ``default_xi`` is returned.
    """
    if not 0.0 <= kappa < 1.0:
        raise InputError(f"contraction factor must lie in [0, 1), got {kappa}")
    if not 0.0 < margin < 1.0:
        raise InputError(f"margin must lie in (0, 1), got {margin}")
    ell, u = norm.equivalence_constants()
    target = 1.0 - margin * (1.0 - kappa)
    if np.isclose(ell, u, rtol=1e-12, atol=0.0) or kappa * u / ell <= target:
        return float(default_xi)
    if grid is None:
        grid = np.geomspace(1e-8, 1e4, 12 * 16 + 1)
    grid = np.sort(np.asarray(grid, dtype=float))
    feasible = grid[kappa * smoothed_ratio(grid, ell, u) <= target]
    if feasible.size:
        return float(feasible[-1])
    # extend the geometric grid downwards; feasibility is guaranteed as xi -> 0
    xi = float(grid[0])
    step = grid[1] / grid[0] if grid.size > 1 else 10 ** (1 / 16)
    while kappa * smoothed_ratio(xi, ell, u) > target:
        xi /= step
        if xi < 1e-300:
            raise ConfigurationError("no admissible xi found")
    return xi


def mu_xi(kappa, env):
    """Drift rate ``2 (1 - kappa u_xi / ell_xi)`` of the smoothed energy."""
    r = kappa * env.ratio
    if r >= 1.0:
        raise ConfigurationError(
            f"xi={env.xi:g} is inadmissible: kappa * u_xi / ell_xi = {r:.6g} >= 1"
        )
    return 2.0 * (1.0 - r)
