import math

import numpy as np
import pytest

from pmdrift.exceptions import InputError
from pmdrift.moreau import MoreauEnvelope
from pmdrift.norms import Norm
from pmdrift.rates import (
    RateWindow,
    l2_bound_only,
    l2_slope,
    l2_target,
    pathwise_rate,
    pathwise_report,
    window_for,
)
from pmdrift.sa import LearningRateSchedule, Trajectory, checkpoint_grid


def synthetic(err, seed=0, n_max=10**5):
    n = checkpoint_grid(n_max)
    e = err(n.astype(float)) if callable(err) else np.full(n.size, float(err))
    return Trajectory(seed, n, e[:, None], np.zeros(n.size, dtype=int), np.zeros(n.size),
                      errors={"gtd": e, "euclid": e, "mnorm": e})


def test_constant_error_fails():
    st = pathwise_rate(synthetic(0.3), 0.2)
    assert not st.passed and st.ratio > 1


def test_power_law_ratio():
    eta = 0.8
    for zeta in (0.1, 0.4, 0.6):
        st = pathwise_rate(synthetic(lambda n: (n + 1) ** (-eta / 2)), zeta)
        assert st.ratio == pytest.approx(10 ** (zeta - eta), rel=1e-2)
        assert st.passed == (eta - zeta >= 0.16)


def test_insufficient_span():
    with pytest.raises(InputError, match="100000"):
        pathwise_rate(synthetic(0.3, n_max=5 * 10**4), 0.2)


def test_monotone_in_zeta(rng):
    # noisy decaying paths: passing at a larger zeta implies passing at every smaller one
    zetas = np.linspace(0.05, 0.6, 12)
    for seed in range(30):
        noise = np.exp(rng.standard_normal(checkpoint_grid(10**5).size))
        t = synthetic(lambda n: (n + 1) ** -0.4 * noise, seed)
        verdicts = [pathwise_rate(t, z).passed for z in zetas]
        for i in range(1, len(zetas)):
            assert verdicts[i - 1] or not verdicts[i]


def test_outside_theory_tag():
    w = window_for(0.8)
    rep = pathwise_report([synthetic(lambda n: (n + 1) ** -0.4)], 0.7, window=w)
    assert rep.outside_theory
    assert not pathwise_report([synthetic(lambda n: (n + 1) ** -0.4)], 0.5, window=w).outside_theory


def test_windows():
    assert (window_for(0.8).lo, window_for(0.8).hi) == (0.0, pytest.approx(0.6))
    assert window_for(1.0, 0.5, 2.0).hi == 1.0
    assert window_for(1.0, 0.9, 1.0).hi == pytest.approx(0.2)
    w = window_for(0.4)
    assert w.empty and not w.contains(0.1)
    assert RateWindow(0.0, 0.6).contains(0.5) and not RateWindow(0.0, 0.6).contains(0.6)


def test_l2_exact_power_law():
    trajs = [synthetic(lambda n: (n + 1) ** -0.4, s) for s in range(50)]
    rep = l2_slope(trajs, eta=0.8)
    assert rep.slope == pytest.approx(-0.8, abs=1e-6)
    assert rep.verdict and rep.target == -0.8 and rep.n_points >= 20


def test_l2_constant_ensemble_has_zero_slope():
    trajs = [synthetic(0.7, s) for s in range(50)]
    rep = l2_slope(trajs, eta=0.8)
    assert rep.slope == pytest.approx(0.0, abs=1e-12)
    assert not rep.verdict


def test_l2_zero_means_sentinel():
    rep = l2_slope([synthetic(0.0, s) for s in range(50)], eta=0.8)
    assert rep.slope == -math.inf and not rep.verdict


def test_l2_guards():
    trajs = [synthetic(0.5, s) for s in range(10)]
    with pytest.raises(InputError):
        l2_slope(trajs, eta=0.8)
    trajs = [synthetic(0.5, s) for s in range(50)]
    with pytest.raises(InputError):
        l2_slope(trajs, eta=0.8, n_lo=500)
    with pytest.raises(InputError):
        l2_slope(trajs, eta=0.8, n_lo=1000, n_hi=1200)


def test_l2_one_sided():
    trajs = [synthetic(lambda n: (n + 1) ** -0.6, s) for s in range(50)]
    rep = l2_slope(trajs, eta=1.0, target=-0.7, one_sided=True)
    assert rep.slope == pytest.approx(-1.2, abs=1e-6)
    assert rep.verdict and not rep.within_tolerance
    assert not l2_slope(trajs, eta=1.0, target=-0.7).verdict


def test_l2_stderr_scales_with_seeds(rng):
    def ensemble(k):
        out = []
        for s in range(k):
            n = checkpoint_grid(10**5).astype(float)
            e2 = (n + 1) ** -0.8 * rng.exponential(size=n.size)
            out.append(synthetic(lambda _: np.sqrt(e2), s))
        return out

    se = [np.mean([l2_slope(ensemble(k), eta=0.8, min_seeds=k).stderr for _ in range(5)]) for k in (50, 200)]
    assert 0.5 / 2 <= se[1] / se[0] <= 0.5 * 2


def test_targets():
    env = MoreauEnvelope(Norm.euclidean(2), 1.0)
    assert l2_target(LearningRateSchedule(1.0, 0.8)) == (-0.8, False)
    # Euclidean norm, kappa = 0.5: mu = 1
    assert l2_target(LearningRateSchedule(3.0, 1.0), 0.5, env) == (-1.0, False)
    assert l2_target(LearningRateSchedule(1.0, 1.0), 0.5, env) == (-1.0, True)
    assert l2_target(LearningRateSchedule(0.6, 1.0), 0.5, env) == (pytest.approx(-0.6), False)
    assert l2_bound_only(LearningRateSchedule(0.6, 1.0), 0.5, env)
    assert not l2_bound_only(LearningRateSchedule(3.0, 1.0), 0.5, env)


def test_means_csv(tmp_path):
    rep = l2_slope([synthetic(lambda n: (n + 1) ** -0.4, s) for s in range(50)], eta=0.8)
    p = tmp_path / "m.csv"
    rep.write_means_csv(p, "h")
    lines = p.read_text().splitlines()
    assert lines[0] == "# config_hash=h" and lines[1] == "n,mean_sq_err,stderr,in_fit"
    assert len(lines) == 2 + rep.checkpoints.size
