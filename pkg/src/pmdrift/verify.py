"""Property suites behind ``pmdrift verify``.

Each check returns a :class:`Check` with the worst violation found; a check
passes when that violation is at most zero after the stated tolerance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .markov import is_hurwitz, solve_lyapunov
from .moreau import envelope_and_gradient, mu_xi

TOL = 1e-8
POISSON_TOL = 1e-9


@dataclass
class Check:
    name: str
    passed: bool
    worst: float
    tol: float
    detail: str = ""

    def to_dict(self):
        return asdict(self)


def _check(name, violations, tol, detail=""):
    v = np.asarray(violations, dtype=float)
    worst = float(np.max(v)) if v.size else -np.inf
    return Check(name, bool(worst <= tol), worst, tol, detail)


def sample_points(rng, n, d, scales=(1e-2, 10.0)):
    """Random directions with log-uniform radii, so small and large inputs both appear."""
    x = rng.standard_normal((n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    r = np.exp(rng.uniform(np.log(scales[0]), np.log(scales[1]), n))
    return x * r[:, None]


def envelope_checks(env, rng, n_points=1000, tol=TOL):
    """Smoothness, norm equivalence and both gradient inequalities of the envelope."""
    d = env.dim
    x = sample_points(rng, n_points, d)
    y = sample_points(rng, n_points, d)
    Mx, gx = envelope_and_gradient(env, x)
    My, gy = envelope_and_gradient(env, y)
    mx, my = np.sqrt(2 * Mx), np.sqrt(2 * My)
    nx = env.base_norm(x)
    smooth = np.linalg.norm(gx - gy, axis=1) - np.linalg.norm(x - y, axis=1) / env.xi
    equiv = np.maximum(env.ell_xi * mx - nx, nx - env.u_xi * mx)
    cs = np.abs(np.sum(gx * y, axis=1)) - mx * my
    inner = mx**2 - np.sum(gx * x, axis=1)
    return [
        _check("envelope_smoothness", smooth, tol),
        _check("envelope_norm_equivalence", equiv, tol),
        _check("envelope_gradient_cauchy_schwarz", cs, tol),
        _check("envelope_gradient_inner_product", inner, tol),
    ]


def xi_admissibility(kappa, env):
    r = kappa * env.ratio
    return Check("xi_admissibility", bool(r < 1.0), float(r - 1.0), 0.0,
                 f"kappa * u_xi / ell_xi = {r:.6g} must be < 1")


def poisson_residual(problem, rng, n_theta=100, tol=POISSON_TOL):
    """max over windows and random theta of |H - PH - (F - f)|."""
    sol = problem.poisson
    W, d = problem.chain.n, problem.dim
    scale = max(1.0, float(np.linalg.norm(problem.theta_star)))
    worst = 0.0
    ys = np.arange(W)
    for _ in range(n_theta):
        th = problem.theta_star + scale * rng.standard_normal(d)
        T = np.broadcast_to(th, (W, d))
        lhs = sol.H(T, ys) - sol.PH(T, ys)
        rhs = problem.F(np.ascontiguousarray(T), ys) - problem.mean_field(th)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return Check("poisson_residual", worst <= tol, worst, tol)


def contraction_checks(problem, rng, n_pairs=1000, tol=TOL):
    out = []
    A_bar = problem.A_bar
    ok, absc = is_hurwitz(A_bar)
    out.append(Check("mean_matrix_hurwitz", ok, absc, 0.0, "spectral abscissa"))
    if ok:
        P = solve_lyapunov(A_bar)
        res = float(np.max(np.abs(A_bar.T @ P + P @ A_bar + np.eye(A_bar.shape[0]))))
        out.append(Check("lyapunov_residual", res <= tol, res, tol))
    kappa = problem.kappa
    out.append(Check("kappa_below_one", bool(kappa < 1.0), float(kappa - 1.0), 0.0, f"kappa = {kappa:.6g}"))
    d = problem.dim
    th = sample_points(rng, n_pairs, d)
    th2 = sample_points(rng, n_pairs, d)
    T1 = th + problem.mean_field(th)
    T2 = th2 + problem.mean_field(th2)
    nrm = problem.norm
    viol = nrm(T1 - T2) - kappa * nrm(th - th2)
    out.append(_check("mean_map_contraction", viol, tol * max(1.0, float(np.max(nrm(th - th2))))))
    return out


def drift_probes(problem, env, rng, n_points=1000, tol=TOL):
    """<grad M(theta - theta*), f(theta)> <= -mu_xi M(theta - theta*) at random theta."""
    mu = mu_xi(problem.kappa, env)
    e = sample_points(rng, n_points, problem.dim)
    M, g = envelope_and_gradient(env, e)
    f = problem.mean_field(problem.theta_star + e)
    viol = np.sum(g * f, axis=1) + mu * M
    return _check("contraction_drift", viol, tol)


def gtd_identity(model, rng, n_probes=100, tol=1e-10):
    from .gtd import td_increment

    W = model.window_chain.n
    worst = 0.0
    for _ in range(n_probes):
        w = rng.standard_normal(model.dim)
        y = int(rng.integers(W))
        direct = td_increment(model, w, y)
        worst = max(worst, float(np.max(np.abs(direct - (model.A_y[y] @ w - model.b_y[y])))))
    return Check("gtd_affine_identity", worst <= tol, worst, tol)


def run_suites(exp):
    """All configured suites for an :class:`~pmdrift.config.Experiment`."""
    v = exp.config["verify"]
    rng = np.random.default_rng(v["seed"])
    n = v["points"]
    problem, env = exp.problem, exp.env
    checks = []
    adm = xi_admissibility(problem.kappa, env)
    checks.append(adm)
    if v["envelope"]:
        checks += envelope_checks(env, rng, n)
    if v["poisson"]:
        checks.append(poisson_residual(problem, rng))
    if v["contraction"]:
        checks += contraction_checks(problem, rng, n)
        if exp.model is not None:
            checks.append(gtd_identity(exp.model, rng))
    if v["drift_probes"]:
        if adm.passed:
            checks.append(drift_probes(problem, env, rng, n))
        else:
            checks.append(Check("contraction_drift", False, float("nan"), TOL, "skipped: xi inadmissible"))
    return checks
