"""Shifted-energy drift certificates and deterministic oracles for the tail recursions.

The shifted energy along a run is

    V_n = M(e_n) + alpha_n <grad M(e_n), H_{theta_n}(Y_n)> + K alpha_n^2,

with ``M`` the Moreau envelope, ``H`` the Poisson solution of the update
field and ``e_n = theta_n - theta_*``.  On a finite chain its one-step
conditional expectation is an exact finite sum, so the almost-supermartingale
bound

    E_n[V_{n+1}] <= (1 - mu alpha_n + C r_n) V_n + C r_n,
    r_n = alpha_n^2 + |alpha_{n+1} - alpha_n|,

and the coercivity bound ``V_n >= m_norm(e_n)^2 / 4`` can be checked step by
step with every constant computed in closed form.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigurationError, InputError
from .moreau import envelope_and_gradient, mu_xi as _mu_xi
from .sa import LearningRateSchedule, SAProblem

TOL = 1e-9
DEFAULT_WINDOW = 10_000
DECADE_FACTOR = 2.0
SERIES_RATIO = 0.95


def as_problem(model):
    """Accept an :class:`SAProblem` or anything exposing ``sa_problem()``."""
    if isinstance(model, SAProblem):
        return model
    if hasattr(model, "sa_problem"):
        return model.sa_problem()
    raise InputError(f"cannot interpret {type(model).__name__} as an SA problem")


def _poisson(problem):
    sol = getattr(problem, "poisson", None)
    if sol is None or not hasattr(sol, "H") or not hasattr(sol, "PH"):
        raise ConfigurationError("the model has no Poisson solution")
    return sol


# ---------------------------------------------------------------- constants


@dataclass(frozen=True)
class DriftConstants:
    xi: float
    ell: float
    u: float
    ell_xi: float
    u_xi: float
    kappa: float
    mu_xi: float
    L_F: float
    L_H: float
    alpha_bar: float
    K_xi: float
    K: float
    C_xi: float
    C_prime_xi: float
    C_prime_xi_K: float
    C_xi_K: float
    N_tail: int

    def to_dict(self):
        return asdict(self)


def _first_index_below(schedule, threshold):
    """Smallest n with alpha_n <= threshold (alpha_n is nonincreasing)."""
    if schedule.alpha <= threshold:
        return 0
    n = max(0, math.ceil((schedule.alpha / threshold) ** (1.0 / schedule.eta) - 1.0))
    while n > 0 and schedule(n - 1) <= threshold:
        n -= 1
    while schedule(n) > threshold:
        n += 1
    return int(n)


def tail_index(L_H, ell_xi, u_xi, schedule):
    """First n with alpha_n <= 1 and L_H (u_xi + 1) alpha_n / ell_xi <= 1/8."""
    n = _first_index_below(schedule, 1.0)
    g = L_H * (u_xi + 1.0) / ell_xi
    if g > 0:
        n = max(n, _first_index_below(schedule, 0.125 / g))
    return n


def drift_constants(env, kappa, L_F, L_H, schedule, K=None):
    """All tail constants from their closed forms, for given Lipschitz data."""
    ell, u = env.base_norm.equivalence_constants()
    xi, lx, ux = env.xi, env.ell_xi, env.u_xi
    mu = _mu_xi(kappa, env)
    ab = float(schedule.alpha)
    g = (ux + 1.0) / lx
    K_xi = 2.0 * L_H**2 * g**2
    K = K_xi if K is None else float(K)
    if K < K_xi:
        raise ConfigurationError(f"K={K:g} is below the coercivity threshold {K_xi:g}")
    C_xi = L_F**2 * (ux + 1.0) ** 2 / (xi * ell**2) + 2.0 * L_F * L_H * (
        (ux + 1.0) ** 2 / (xi * ell**2) + u * (ux + 1.0) / (lx * ell) * (1.0 + ab * L_F * g)
    )
    C_p = 2.0 * L_H * g * (1.0 + L_F * g) * (2.0 + L_F * g)
    C_pK = 2.0 * L_H * g + K
    C_K = 4.0 * (C_xi + C_p + mu * C_pK)
    return DriftConstants(
        xi=xi, ell=float(ell), u=float(u), ell_xi=lx, u_xi=ux, kappa=float(kappa), mu_xi=mu,
        L_F=float(L_F), L_H=float(L_H), alpha_bar=ab, K_xi=K_xi, K=K,
        C_xi=C_xi, C_prime_xi=C_p, C_prime_xi_K=C_pK, C_xi_K=C_K,
        N_tail=tail_index(L_H, lx, ux, schedule),
    )


def compute_constants(model, env, schedule, K=None):
    problem = as_problem(model)
    if problem.kappa is None:
        raise ConfigurationError("the model carries no contraction factor")
    L_F, L_H = problem.lipschitz_constants()
    return drift_constants(env, problem.kappa, L_F, L_H, schedule, K)


# ---------------------------------------------------------------- energies


def _energy(problem, env, K, alpha, theta, corr):
    e = theta - problem.theta_star
    M, g = envelope_and_gradient(env, e)
    return M + alpha * np.einsum("...i,...i->...", g, corr) + K * alpha**2


def shifted_energy(model, env, K, n, theta_n, y_n, schedule):
    """V_n at (theta_n, y_n); batched over leading axes of ``theta_n``/``n``/``y_n``."""
    problem = as_problem(model)
    sol = _poisson(problem)
    theta = np.asarray(theta_n, dtype=float)
    alpha = np.asarray(schedule(n), dtype=float)
    return _energy(problem, env, K, alpha, theta, sol.H(theta, y_n))


def next_iterate(problem, n, theta_n, y_n, schedule):
    theta = np.asarray(theta_n, dtype=float)
    alpha = np.asarray(schedule(n), dtype=float)[..., None]
    return theta + alpha * problem.F(theta, y_n)


def exact_conditional_expectation(model, env, K, n, theta_n, y_n, schedule):
    """E[V_{n+1} | theta_n, Y_n = y_n] as a finite sum over successor windows.

    ``theta_{n+1}`` is determined by the current state; only the successor
    window is random, and the average of ``H_{theta_{n+1}}`` over it is the
    one-step mean ``PH`` of the Poisson solution.
    """
    problem = as_problem(model)
    sol = _poisson(problem)
    nxt = next_iterate(problem, n, theta_n, y_n, schedule)
    alpha = np.asarray(schedule(np.asarray(n) + 1), dtype=float)
    return _energy(problem, env, K, alpha, nxt, sol.PH(nxt, y_n))


# ---------------------------------------------------------------- certificate


@dataclass
class DriftCertificate:
    constants: DriftConstants
    mu_used: float
    C_used: float
    n: np.ndarray
    V: np.ndarray
    EV_next: np.ndarray
    rhs: np.ndarray
    slack: np.ndarray
    coercivity_margin: np.ndarray
    alpha: np.ndarray = None
    r: np.ndarray = None
    tol: float = TOL
    step_identity_max: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def drift_ok(self):
        return self.slack >= -self.tol

    @property
    def coercivity_ok(self):
        return self.coercivity_margin >= -self.tol

    @property
    def step_ok(self):
        return self.drift_ok & self.coercivity_ok

    @property
    def passed(self):
        return bool(np.all(self.step_ok))

    @property
    def min_slack(self):
        return float(np.min(self.slack)) if self.slack.size else float("inf")

    @property
    def n_failures(self):
        return int(np.count_nonzero(~self.step_ok))

    @property
    def C_required(self):
        """Smallest remainder constant for which the drift bound holds at every step, given mu_used."""
        if not self.n.size:
            return 0.0
        alpha = self.alpha
        need = (self.EV_next - (1.0 - self.mu_used * alpha) * self.V) / (self.r * (self.V + 1.0))
        return float(max(0.0, np.max(need)))

    @property
    def earliest_passing_index(self):
        """Smallest recorded n from which every later step passes (None if the last fails)."""
        bad = np.flatnonzero(~self.step_ok)
        if bad.size == 0:
            return int(self.n[0]) if self.n.size else None
        if bad[-1] == self.n.size - 1:
            return None
        return int(self.n[bad[-1] + 1])

    def summary(self):
        c = self.constants
        return {
            "passed": self.passed,
            "n_steps": int(self.n.size),
            "window": [int(self.n[0]), int(self.n[-1])] if self.n.size else None,
            "min_slack": self.min_slack,
            "min_coercivity_margin": float(np.min(self.coercivity_margin)) if self.n.size else None,
            "n_failures": self.n_failures,
            "earliest_passing_index": self.earliest_passing_index,
            "mu_used": self.mu_used,
            "C_used": self.C_used,
            "C_required": self.C_required,
            "tol": self.tol,
            "step_identity_max": self.step_identity_max,
            "constants": c.to_dict(),
            "notes": list(self.notes),
        }

    def rows(self):
        for j in range(self.n.size):
            yield {
                "n": int(self.n[j]),
                "V": float(self.V[j]),
                "EV_next": float(self.EV_next[j]),
                "rhs": float(self.rhs[j]),
                "slack": float(self.slack[j]),
                "coercivity_ok": bool(self.coercivity_ok[j]),
            }


def certify_drift(trajectory, model, env, K=None, schedule=None, *, constants=None,
                  window=None, mu=None, C=None, tol=TOL):
    """Check coercivity and the drift bound at every step of a dense window.

    ``window=(start, stop)`` defaults to ``[N_tail, N_tail + 10^4]``.  The
    trajectory must contain every index of the window and the one after it
    is not needed: the conditional expectation is computed, not observed.
    ``mu`` and ``C`` override the contraction rate and the remainder
    constant (used by mutation tests).
    """
    if schedule is None:
        raise InputError("a learning-rate schedule is required")
    problem = as_problem(model)
    if constants is None:
        constants = compute_constants(problem, env, schedule, K)
    K = constants.K
    mu = constants.mu_xi if mu is None else float(mu)
    C = constants.C_xi_K if C is None else float(C)
    if window is None:
        window = (constants.N_tail, constants.N_tail + DEFAULT_WINDOW)
    start, stop = int(window[0]), int(window[1])
    if start < constants.N_tail:
        raise InputError(f"window starts at {start}, before the tail index {constants.N_tail}")
    if stop < start:
        raise InputError("empty certification window")

    n_rec = np.asarray(trajectory.n)
    idx = np.searchsorted(n_rec, np.arange(start, stop + 1))
    if idx.size == 0 or idx[-1] >= n_rec.size or not np.array_equal(n_rec[idx], np.arange(start, stop + 1)):
        raise InputError(f"trajectory is not dense on [{start}, {stop}]")
    n = n_rec[idx]
    theta = np.asarray(trajectory.theta)[idx]
    y = np.asarray(trajectory.window)[idx]

    V = shifted_energy(problem, env, K, n, theta, y, schedule)
    EV = exact_conditional_expectation(problem, env, K, n, theta, y, schedule)
    alpha = schedule(n)
    r = schedule.r(n)
    rhs = (1.0 - mu * alpha + C * r) * V + C * r
    slack = rhs - EV
    M, _ = envelope_and_gradient(env, theta - problem.theta_star)
    # m_norm^2 / 4 = M / 2
    coer = V - 0.5 * M

    # the recorded successor must be the deterministic update of the current state
    step_max = 0.0
    if n.size > 1:
        pred = next_iterate(problem, n[:-1], theta[:-1], y[:-1], schedule)
        step_max = float(np.max(np.abs(pred - theta[1:])))

    cert = DriftCertificate(constants, mu, C, n, V, EV, rhs, slack, coer, alpha, r, tol, step_max)
    if mu != constants.mu_xi or C != constants.C_xi_K:
        cert.notes.append("constants overridden")
    return cert


# ---------------------------------------------------------------- scalar oracles


@dataclass(frozen=True)
class OracleResult:
    passes: bool
    tail_max: float
    previous_max: float
    outside_theory: bool

    def __iter__(self):
        return iter((self.passes, self.tail_max))

    @property
    def ratio(self):
        if self.previous_max == 0:
            return 0.0 if self.tail_max == 0 else math.inf
        return self.tail_max / self.previous_max


def zeta_admissible(eta, zeta, c0alpha=None):
    if eta <= 0.5:
        return False
    if eta < 1.0:
        return 0.0 <= zeta < 2.0 * eta - 1.0
    return 0.0 <= zeta < min(1.0, c0alpha)


def _linear_recurrence(a, b, x0):
    """x_{k+1} = a_k x_k + b_k for k < len(a); returns x_0..x_len(a).

    Factors are expected positive after a short prefix; the prefix (and any
    factor <= 0) is handled by a scalar loop, the rest in log space by chunks.
    """
    m = a.size
    x = np.empty(m + 1)
    x[0] = x0
    nonpos = np.flatnonzero(a <= 0)
    k0 = int(nonpos[-1]) + 1 if nonpos.size else 0
    for k in range(k0):
        x[k + 1] = a[k] * x[k] + b[k]
    chunk = 1 << 16
    k = k0
    while k < m:
        j = min(m, k + chunk)
        la = np.log(a[k:j])
        cum = np.cumsum(la)  # log prod a_k..a_i
        lim = np.flatnonzero(cum < -600.0)
        if lim.size:  # keep exp(-cum) representable
            j = k + max(1, int(lim[0]))
            la, cum = la[: j - k], cum[: j - k]
        # x_{i+1} = P_i (x_k + sum_{t<=i} b_t / P_t),  P_i = prod_{t=k..i} a_t
        acc = np.cumsum(b[k:j] * np.exp(-cum))
        x[k + 1 : j + 1] = np.exp(cum) * (x[k] + acc)
        k = j
    return x


def scalar_recursion_oracle(c0, C0, schedule, zeta, x0, n_steps, factor=DECADE_FACTOR):
    """Iterate x_{n+1} = (1 - c0 alpha_n + C0 r_n) x_n + C0 r_n and test decay.

    Passes iff the maximum of (n+1)^zeta x_n over the last decade of steps is
    at least ``factor`` times smaller than over the decade before it.
    """
    if c0 <= 0:
        raise InputError("c0 must be positive")
    n_steps = int(n_steps)
    if n_steps < 100:
        raise InputError("at least 100 steps are needed for two decades")
    k = np.arange(n_steps)
    alpha = schedule(k)
    r = schedule.r(k)
    a = 1.0 - c0 * alpha + C0 * r
    b = C0 * r
    x = _linear_recurrence(a, b, float(x0))
    n = np.arange(n_steps + 1)
    s = (n + 1.0) ** zeta * x
    hi = n_steps
    last = s[hi // 10 : hi + 1]
    prev = s[hi // 100 : hi // 10]
    tail_max = float(np.max(last))
    prev_max = float(np.max(prev))
    passes = bool(tail_max * factor <= prev_max) if prev_max > 0 else bool(tail_max <= 0)
    outside = not zeta_admissible(schedule.eta, zeta, c0 * schedule.alpha)
    return OracleResult(passes, tail_max, prev_max, outside)


@dataclass(frozen=True)
class WeightedRSResult:
    gamma: np.ndarray
    tail_start: int
    bounds_ok: bool
    divergence_ok: bool
    summability_ok: bool
    partial_sum: float
    min_coefficient: float
    gamma_decade_ratio: float
    series_decade_ratio: float
    series_tail_estimate: float
    cauchy_tail: float

    @property
    def conditions_ok(self):
        return self.bounds_ok and self.divergence_ok and self.summability_ok

    def __iter__(self):
        return iter((self.gamma, self.conditions_ok))


def _decade_sums(v, N):
    return float(np.sum(v[N // 10 : N])), float(np.sum(v[N // 100 : N // 10]))


def weighted_rs_check(beta_seq, b_seq, q_seq, N, ratio=SERIES_RATIO):
    """Finite-horizon witnesses for the weighted Robbins-Siegmund conditions.

    ``beta_seq`` and ``b_seq`` need N entries, ``q_seq`` N + 1.  With
    gamma_n = 1 - q_{n+1} (1 - beta_n) / q_n:

    * bounds: 0 <= gamma_n <= 1 from some tail start within the first tenth;
    * divergence: sum gamma_n >= log(N) * min over the tail of (n+1) gamma_n,
      with that minimum positive, and the last-decade mass of gamma at least
      ``ratio`` times the previous decade's (a summable gamma loses mass);
    * summability of q_{n+1} b_n: per-decade partial sums shrink by at least
      ``ratio``; the geometric extrapolation of the remaining tail and the
      plain last-decade sum are reported alongside.
    """
    N = int(N)
    if N < 1000:
        raise InputError("N must be at least 1000 for decade witnesses")
    beta = np.asarray(beta_seq, dtype=float)[:N]
    b = np.asarray(b_seq, dtype=float)[:N]
    q = np.asarray(q_seq, dtype=float)[: N + 1]
    if beta.size < N or b.size < N or q.size < N + 1:
        raise InputError("sequences are shorter than the horizon")
    if np.any(q <= 0) or np.any(b < 0) or np.any(beta < 0):
        raise InputError("q must be positive and beta, b nonnegative")
    gamma = 1.0 - q[1:] / q[:-1] * (1.0 - beta)
    inside = (gamma >= 0) & (gamma <= 1)
    outside = np.flatnonzero(~inside)
    tail_start = int(outside[-1]) + 1 if outside.size else 0
    bounds_ok = tail_start <= N // 10
    n = np.arange(N)
    tail = slice(min(tail_start, N - 1), N)
    coef = float(np.min((n[tail] + 1.0) * gamma[tail]))
    S = float(np.sum(gamma))
    g_last, g_prev = _decade_sums(gamma, N)
    g_ratio = g_last / g_prev if g_prev > 0 else 0.0
    divergence_ok = bool(bounds_ok and coef > 0 and S >= math.log(N) * coef and g_ratio >= ratio)
    w = q[1:] * b
    s_last, s_prev = _decade_sums(w, N)
    if s_prev > 0:
        s_ratio = s_last / s_prev
    else:
        s_ratio = 0.0 if s_last == 0 else math.inf
    summability_ok = bool(s_ratio <= ratio)
    est = s_last * s_ratio / (1.0 - s_ratio) if s_ratio < 1 else math.inf
    return WeightedRSResult(
        gamma=gamma, tail_start=tail_start, bounds_ok=bool(bounds_ok), divergence_ok=divergence_ok,
        summability_ok=summability_ok, partial_sum=S, min_coefficient=coef,
        gamma_decade_ratio=g_ratio, series_decade_ratio=s_ratio, series_tail_estimate=est,
        cauchy_tail=s_last,
    )
