import numpy as np
import pytest
import yaml

from pmdrift.config import DEFAULTS, DEFAULTS_YAML, ExperimentConfig, build_experiment, parse_seeds, parse_zeta
from pmdrift.exceptions import ConfigurationError


def test_defaults_document_every_key():
    assert yaml.safe_load(DEFAULTS_YAML) == DEFAULTS
    cfg = ExperimentConfig.from_dict({})
    assert cfg.seeds == list(range(100))
    assert cfg.zetas == [0.5]


def test_seed_and_zeta_parsing():
    assert parse_seeds("3..5") == [3, 4, 5]
    assert parse_seeds([1, 4]) == [1, 4]
    assert parse_seeds(7) == [7]
    for bad in ("5..3", "a..b", [1, 1], [-1]):
        with pytest.raises(ConfigurationError):
            parse_seeds(bad)
    assert parse_zeta("0.2,0.4") == [0.2, 0.4]
    assert parse_zeta(0.3) == [0.3]


@pytest.mark.parametrize("over", [
    {"bogus": 1},
    {"schedule": {"eta": 1.5}},
    {"schedule": {"eta": 0.0}},
    {"schedule": {"alpha": 1.0, "mu_alpha": 1.5}},
    {"model": {"kind": "tabular"}},
    {"model": {"factors": {"preset": "sarsa"}}},
    {"model": {"horizon": 0}},
    {"model": {"mdp": {"gamma": 1.0}}},
    {"envelope": {"xi": -1}},
    {"certify": {"remainder": "loose"}},
    {"rates": {"n_lo": 10}},
    {"rates": {"norm": "l1"}},
    {"run": {"checkpoint_factor": 1.0}},
    {"model": {"kind": "linear"}},
])
def test_validation_rejects(over):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(over)


def test_hash_ignores_output_dir_and_tracks_content():
    a = ExperimentConfig.from_dict({})
    b = a.override(out="/elsewhere")
    c = a.override(steps=1234)
    assert a.hash == b.hash != c.hash
    assert ExperimentConfig.from_dict({"run": {"seeds": "0..99"}}).hash == \
        ExperimentConfig.from_dict({"run": {"seeds": list(range(100))}}).hash


def test_load_roundtrip(tmp_path):
    cfg = ExperimentConfig.from_dict({"schedule": {"eta": 1.0, "mu_alpha": 1.5}})
    p = tmp_path / "c.yaml"
    p.write_text(cfg.to_yaml())
    assert ExperimentConfig.load(p).hash == cfg.hash
    (tmp_path / "bad.yaml").write_text("[1, 2")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(tmp_path / "bad.yaml")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(tmp_path / "missing.yaml")


def test_step_rules():
    e = build_experiment(ExperimentConfig.from_dict({"schedule": {"a": 2.0}}))
    assert e.schedule.alpha == pytest.approx(2.0 / e.beta)
    e = build_experiment(ExperimentConfig.from_dict({"schedule": {"alpha": 0.3}}))
    assert e.schedule.alpha == 0.3
    from pmdrift.moreau import mu_xi
    e = build_experiment(ExperimentConfig.from_dict({"schedule": {"eta": 1.0, "mu_alpha": 1.5}}))
    assert mu_xi(e.problem.kappa, e.env) * e.schedule.alpha == pytest.approx(1.5)


def test_linear_model():
    cfg = ExperimentConfig.from_dict({"model": {"kind": "linear", "linear": {
        "P": [[0.5, 0.5], [0.3, 0.7]], "A": [[-0.5, 0.0], [0.0, -0.5]], "b": [1.0, 2.0]}}})
    e = build_experiment(cfg)
    assert e.model is None
    np.testing.assert_allclose(e.problem.theta_star, [-2.0, -4.0])
    assert e.problem.kappa == pytest.approx(0.5)


def test_policy_choices():
    e = build_experiment(ExperimentConfig.from_dict({"model": {
        "policies": {"target": "random"}, "factors": {"preset": "retrace"}}}))
    assert not np.allclose(e.model.policies.target, e.model.policies.behavior)
    with pytest.raises(ConfigurationError):
        build_experiment(ExperimentConfig.from_dict({"model": {"policies": {"behavior": "greedy"}}}))
