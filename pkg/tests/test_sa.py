import numpy as np
import pytest

from pmdrift.exceptions import DivergenceError, InputError
from pmdrift.gtd import FactorSpec, FiniteMDP, GeneralizedTDModel, PolicyPair, random_mdp
from pmdrift.markov import FiniteMarkovChain
from pmdrift.sa import (
    AffineSAProblem,
    LearningRateSchedule,
    checkpoint_grid,
    learning_rate,
    read_trajectory_csv,
    run,
    run_ensemble,
    sample_windows,
    write_trajectory_csv,
)


@pytest.fixture(scope="module")
def td0():
    mdp = random_mdp(3, 2, gamma=0.5, seed=0)
    return GeneralizedTDModel(mdp, PolicyPair.on_policy(np.full((3, 2), 0.5)), FactorSpec()).sa_problem()


def test_learning_rate_examples():
    assert learning_rate(LearningRateSchedule(1, 1), 0) == 1
    assert learning_rate(LearningRateSchedule(1, 1), 3) == 0.25
    assert learning_rate(LearningRateSchedule(2, 0.75), 15) == pytest.approx(0.25)
    with pytest.raises(InputError):
        LearningRateSchedule(1.0, 1.5)
    with pytest.raises(InputError):
        learning_rate(LearningRateSchedule(1, 1), -1)


def test_remainder_sequence():
    s = LearningRateSchedule(2.0, 0.8)
    n = np.arange(10)
    np.testing.assert_allclose(s.r(n), s(n) ** 2 + s(n) - s(n + 1))


def test_checkpoint_grid():
    g = checkpoint_grid(10_000)
    assert g[0] == 0 and g[-1] == 10_000
    assert set(range(101)) <= set(g.tolist())
    assert np.all(np.diff(g) > 0)
    assert checkpoint_grid(0).tolist() == [0]


def test_zero_step_keeps_theta(td0):
    th0 = np.arange(6.0)
    trajs = run_ensemble(td0, LearningRateSchedule(0.0, 1.0), th0, 500, [0, 1, 2])
    for t in trajs:
        np.testing.assert_array_equal(t.theta, np.broadcast_to(th0, t.theta.shape))


def test_one_state_closed_form():
    gamma, r = 0.6, 1.5
    mdp = FiniteMDP(np.ones((1, 1, 1)), np.array([[r]]), gamma)
    m = GeneralizedTDModel(mdp, PolicyPair.on_policy(np.ones((1, 1))), FactorSpec())
    prob = m.sa_problem()
    sched = LearningRateSchedule(1.3 / m.beta, 1.0)
    n = 2000
    t = run(prob, sched, np.array([5.0]), n, seed=0, checkpoints=np.arange(n + 1))
    ws = r / (1 - gamma)
    k = np.arange(n)
    factors = 1 - sched(k) * m.beta * (1 - gamma)
    expect = np.concatenate([[1.0], np.cumprod(factors)]) * (5.0 - ws) + ws
    np.testing.assert_allclose(t.theta[:, 0], expect, atol=1e-10)


def test_determinism_and_batch_independence(td0):
    sched = LearningRateSchedule(0.5, 0.8)
    a = run(td0, sched, None, 3000, seed=7)
    b = run(td0, sched, None, 3000, seed=7)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.window, b.window)
    ens = run_ensemble(td0, sched, None, 3000, [3, 7, 11])
    np.testing.assert_array_equal(ens[1].theta, a.theta)
    assert [t.seed for t in ens] == [3, 7, 11]


def test_threads_give_identical_results(td0, monkeypatch):
    sched = LearningRateSchedule(0.5, 0.8)
    one = run_ensemble(td0, sched, None, 2000, list(range(6)))
    monkeypatch.setenv("PMDRIFT_THREADS", "3")
    three = run_ensemble(td0, sched, None, 2000, list(range(6)))
    for x, y in zip(one, three):
        np.testing.assert_array_equal(x.theta, y.theta)


def test_window_path_matches_sampler(td0):
    n = 2000
    t = run(td0, LearningRateSchedule(0.5, 0.8), None, n, seed=5, checkpoints=np.arange(n + 1))
    np.testing.assert_array_equal(t.window, sample_windows(td0.chain, n, seed=5))


def test_ensemble_mean_error_decreases(td0):
    sched = LearningRateSchedule(1.0 / td0.beta, 0.8)
    trajs = run_ensemble(td0, sched, None, 20000, list(range(100)))
    n = trajs[0].n
    mean = np.mean([t.error("gtd") ** 2 for t in trajs], axis=0)
    sel = n >= 100
    m = mean[sel]
    # monotone trend: each value below the mean of the previous decade of checkpoints
    assert m[-1] < 0.1 * m[0]
    logs = np.log(m)
    slope = np.polyfit(np.log(n[sel]), logs, 1)[0]
    assert slope < 0


def test_divergence_reports_seed_and_step():
    chain = FiniteMarkovChain([[0.5, 0.5], [0.5, 0.5]])
    prob = AffineSAProblem(chain, np.tile(np.eye(1), (2, 1, 1)), np.zeros((2, 1)), theta_star=np.zeros(1))
    with pytest.raises(DivergenceError) as info:
        run_ensemble(prob, LearningRateSchedule(10.0, 1.0), np.ones(1), 10**4, [4, 9])
    assert info.value.seed == 4 and info.value.step > 0


def test_bad_inputs(td0):
    with pytest.raises(InputError):
        run_ensemble(td0, LearningRateSchedule(1, 1), np.zeros(2), 10, [0])
    with pytest.raises(InputError):
        run_ensemble(td0, LearningRateSchedule(1, 1), None, 10, [0, 0])
    with pytest.raises(InputError):
        run_ensemble(td0, LearningRateSchedule(1, 1), None, 10, [0], checkpoints=[0, 11])


def test_csv_roundtrip(td0, tmp_path):
    t = run(td0, LearningRateSchedule(0.5, 0.8), None, 500, seed=0)
    V = np.linspace(0, 1, len(t))
    path = tmp_path / "t.csv"
    write_trajectory_csv(path, t, V=V, config_hash="abc")
    assert path.read_text().startswith("# config_hash=abc seed=0\n")
    data = read_trajectory_csv(path)
    np.testing.assert_array_equal(data["n"], t.n)
    np.testing.assert_array_equal(data["err_gtd"], t.error("gtd"))
    np.testing.assert_array_equal(data["V_xi"], V)
