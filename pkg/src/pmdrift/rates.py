"""Pathwise and mean-square rate statistics from trajectory ensembles.

Pathwise: s_n = (n+1)^zeta |e_n|^2 should decay along each path; the
finite-horizon witness compares the maximum of s_n over the last decade of
checkpoints with the maximum over the decade before it.

Mean square: log-log weighted least squares of the sample mean of |e_n|^2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError
from .moreau import mu_xi as _mu_xi

BURN_IN = 100
PATHWISE_THRESHOLD = 0.7
MIN_FIT_POINTS = 20
L2_TOLERANCE = {False: 0.1, True: 0.15}  # keyed by eta == 1


@dataclass(frozen=True)
class RateWindow:
    lo: float
    hi: float
    reason: str = ""

    @property
    def empty(self):
        return not self.hi > self.lo

    def contains(self, zeta):
        return (not self.empty) and self.lo < zeta < self.hi

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "empty": self.empty, "reason": self.reason}


def window_for(eta, kappa=None, alpha_eff=None):
    if eta <= 0.5:
        return RateWindow(0.0, 0.0, "eta <= 1/2: no pathwise rate, mean-square only")
    if eta < 1.0:
        return RateWindow(0.0, 2.0 * eta - 1.0, "eta < 1")
    if kappa is None or alpha_eff is None:
        raise InputError("eta = 1 needs the contraction factor and the effective step")
    return RateWindow(0.0, min(1.0, 2.0 * (1.0 - kappa) * alpha_eff), "eta = 1")


def rate_window(model, env=None, schedule=None):
    """Admissible pathwise exponents for the model's schedule.

    For GTD models the simulated field is ``beta (A w - b)`` so the schedule's
    ``alpha`` already is the effective step ``a / beta``.
    """
    if schedule is None:
        raise InputError("a schedule is required")
    problem = model.sa_problem() if hasattr(model, "sa_problem") else model
    return window_for(schedule.eta, problem.kappa, schedule.alpha)


def l2_target(schedule, kappa=None, env=None):
    """Exponent target and whether the log-corrected fit applies."""
    if schedule.eta < 1.0:
        return -schedule.eta, False
    mu = _mu_xi(kappa, env)
    ma = mu * schedule.alpha
    return -min(ma, 1.0), bool(math.isclose(ma, 1.0, rel_tol=1e-9))


def l2_bound_only(schedule, kappa=None, env=None):
    """True when the target exponent is only an upper bound on the decay (eta = 1, mu alpha < 1).

    The drift argument gives O(n^-(mu alpha)) there, but the true decay can be
    faster, so only slopes above target + tolerance count as failures.
    """
    if schedule.eta < 1.0:
        return False
    ma = _mu_xi(kappa, env) * schedule.alpha
    return ma < 1.0 and not math.isclose(ma, 1.0, rel_tol=1e-9)


# ---------------------------------------------------------------- pathwise


@dataclass
class PathwiseStats:
    seed: int
    zeta: float
    decades: list
    decade_max: list
    decade_factors: list
    tail_max: float
    previous_max: float
    ratio: float
    passed: bool
    outside_theory: bool
    threshold: float = PATHWISE_THRESHOLD

    def to_dict(self):
        return {
            "seed": self.seed, "zeta": self.zeta, "tail_max": self.tail_max,
            "previous_max": self.previous_max, "ratio": self.ratio, "passed": self.passed,
            "outside_theory": self.outside_theory, "decade_factors": list(self.decade_factors),
        }


def _decade_edges(burn_in, n_max):
    edges = [int(burn_in)]
    while edges[-1] * 10 <= n_max:
        edges.append(edges[-1] * 10)
    return edges


def pathwise_rate(trajectory, zeta, norm_choice="gtd", *, burn_in=BURN_IN,
                  threshold=PATHWISE_THRESHOLD, window=None):
    """Decade decay witness for (n+1)^zeta |e_n|^2 on one trajectory.

    Decades start at ``burn_in`` (100, 1000, ...).  Both neighbouring decades
    include their shared boundary, which makes the verdict monotone in zeta.
    ``window`` (a :class:`RateWindow`) tags exponents outside the theory.
    """
    n = np.asarray(trajectory.n, dtype=float)
    err = np.asarray(trajectory.error(norm_choice), dtype=float)
    edges = _decade_edges(burn_in, n.max() if n.size else 0)
    if len(edges) < 4:
        raise InputError(
            f"checkpoints must span 3 decades past burn-in {burn_in}: need n >= {burn_in * 1000}"
        )
    s = (n + 1.0) ** zeta * err**2
    maxima = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (n >= lo) & (n <= hi)
        if not np.any(sel):
            raise InputError(f"no checkpoints in decade [{lo}, {hi}]")
        maxima.append(float(np.max(s[sel])))
    factors = [b / a if a > 0 else (0.0 if b == 0 else math.inf) for a, b in zip(maxima[:-1], maxima[1:])]
    ratio = factors[-1]
    outside = window is not None and not window.contains(zeta)
    return PathwiseStats(
        seed=int(trajectory.seed), zeta=float(zeta),
        decades=[[lo, hi] for lo, hi in zip(edges[:-1], edges[1:])],
        decade_max=maxima, decade_factors=factors, tail_max=maxima[-1],
        previous_max=maxima[-2], ratio=ratio, passed=bool(ratio <= threshold),
        outside_theory=bool(outside), threshold=threshold,
    )


# ---------------------------------------------------------------- mean square


@dataclass
class RateReport:
    mode: str
    claim: float
    slope: float
    stderr: float
    target: float
    n_lo: int
    n_hi: int
    n_points: int
    verdict: bool
    tolerance: float = float("nan")
    log_corrected: bool = False
    one_sided: bool = False
    n_seeds: int = 0
    pass_count: int = 0
    outside_theory: bool = False
    per_seed: list = field(default_factory=list)
    checkpoints: np.ndarray | None = None
    means: np.ndarray | None = None
    mean_stderr: np.ndarray | None = None

    def summary(self):
        out = {
            "mode": self.mode, "claim": self.claim, "target": self.target,
            "window": [self.n_lo, self.n_hi], "n_points": self.n_points,
            "n_seeds": self.n_seeds, "verdict": self.verdict,
        }
        if self.mode == "l2":
            out.update(slope=self.slope, stderr=self.stderr, tolerance=self.tolerance,
                       log_corrected=self.log_corrected, one_sided=self.one_sided,
                       within_tolerance=self.within_tolerance)
        else:
            out.update(pass_count=self.pass_count, outside_theory=self.outside_theory,
                       per_seed=[p.to_dict() for p in self.per_seed])
        return out

    @property
    def within_tolerance(self):
        return bool(abs(self.slope - self.target) <= self.tolerance)

    def write_means_csv(self, path, config_hash=None):
        with open(path, "w", newline="") as fh:
            if config_hash is not None:
                fh.write(f"# config_hash={config_hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "mean_sq_err", "stderr", "in_fit"])
            for j in range(self.checkpoints.size):
                n = int(self.checkpoints[j])
                w.writerow([n, repr(float(self.means[j])), repr(float(self.mean_stderr[j])),
                            int(self.n_lo <= n <= self.n_hi)])


def pathwise_report(trajectories, zeta, norm_choice="gtd", *, burn_in=BURN_IN,
                    threshold=PATHWISE_THRESHOLD, window=None, min_fraction=0.95):
    stats = [pathwise_rate(t, zeta, norm_choice, burn_in=burn_in, threshold=threshold, window=window)
             for t in trajectories]
    k = sum(s.passed for s in stats)
    edges = stats[0].decades[-2] if stats else [0, 0]
    return RateReport(
        mode="pathwise", claim=float(zeta), slope=float("nan"), stderr=float("nan"),
        target=float(threshold), n_lo=int(edges[0]), n_hi=int(stats[0].decades[-1][1]) if stats else 0,
        n_points=0, verdict=bool(stats) and k >= math.ceil(min_fraction * len(stats) - 1e-9),
        n_seeds=len(stats), pass_count=k, outside_theory=bool(window is not None and not window.contains(zeta)),
        per_seed=stats,
    )


def _wls(x, y, w):
    W = w / w.sum()
    xm, ym = np.sum(W * x), np.sum(W * y)
    sxx = np.sum(W * (x - xm) ** 2)
    slope = np.sum(W * (x - xm) * (y - ym)) / sxx
    resid = y - ym - slope * (x - xm)
    m = x.size
    s2 = np.sum(W * resid**2) / (m - 2) if m > 2 else 0.0
    return float(slope), float(np.sqrt(s2 / sxx))


def l2_slope(trajectories, norm_choice="gtd", *, n_lo=None, n_hi=None, eta=None,
             target=None, log_corrected=False, tolerance=None, min_seeds=50, burn_in=BURN_IN,
             one_sided=False):
    """Fit log E|e_n|^2 ~ slope * log(n + 1) on [n_lo, n_hi].

    Weights are the inverse delta-method variances of the log sample means
    (equal weights when the ensemble has no spread).  The log-corrected mode
    fits log(mean / log n), the profile of a log(n)/n decay.  With
    ``one_sided`` the target is an upper bound and any faster decay passes.
    """
    trajectories = list(trajectories)
    if len(trajectories) < min_seeds:
        raise InputError(f"need at least {min_seeds} seeds, got {len(trajectories)}")
    n = np.asarray(trajectories[0].n)
    for t in trajectories[1:]:
        if not np.array_equal(np.asarray(t.n), n):
            raise InputError("trajectories must share checkpoints")
    if n_lo is None:
        n_lo = 10 * burn_in
    if n_hi is None:
        n_hi = int(n.max())
    if n_lo < 10 * burn_in:
        raise InputError(f"n_lo must be at least 10 x burn-in = {10 * burn_in}")
    E = np.stack([np.asarray(t.error(norm_choice), dtype=float) ** 2 for t in trajectories])
    k = E.shape[0]
    mean = E.mean(axis=0)
    sem = E.std(axis=0, ddof=1) / np.sqrt(k)
    sel = (n >= n_lo) & (n <= n_hi)
    m = int(np.count_nonzero(sel))
    if m < MIN_FIT_POINTS:
        raise InputError(f"fit window [{n_lo}, {n_hi}] holds {m} checkpoints; need {MIN_FIT_POINTS}")
    if eta is None:
        eta = float("nan")
    if target is None and eta == eta:
        target = -eta
    if tolerance is None:
        tolerance = L2_TOLERANCE[bool(eta == 1.0)]
    base = dict(mode="l2", claim=float(eta), target=float(target) if target is not None else float("nan"),
                n_lo=int(n_lo), n_hi=int(n_hi), n_points=m, tolerance=float(tolerance),
                log_corrected=bool(log_corrected), one_sided=bool(one_sided), n_seeds=k, checkpoints=n, means=mean, mean_stderr=sem)
    ms, ss, ns = mean[sel], sem[sel], n[sel].astype(float)
    if np.any(ms <= 0):
        return RateReport(slope=-math.inf, stderr=0.0, verdict=False, **base)
    x = np.log(ns + 1.0)
    y = np.log(ms)
    if log_corrected:
        y = y - np.log(np.log(ns + 1.0))
    rel = ss / ms
    w = 1.0 / rel**2 if np.all(rel > 0) else np.ones_like(x)
    slope, se = _wls(x, y, w)
    if target is None:
        verdict = False
    elif one_sided:
        verdict = slope <= target + tolerance
    else:
        verdict = abs(slope - target) <= tolerance
    return RateReport(slope=slope, stderr=se, verdict=bool(verdict), **base)
