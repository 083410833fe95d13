import json

import numpy as np
import pytest
import yaml

from pmdrift.cli import main
from pmdrift.config import DEFAULTS
from pmdrift.sa import read_trajectory_csv


def write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def linear(A, b, P=None, norm=None, **extra):
    P = [[0.5, 0.5], [0.5, 0.5]] if P is None else P
    d = {"model": {"kind": "linear", "linear": {"P": P, "A": A, "b": b, "norm": norm or {"kind": "euclidean"}}}}
    d.update(extra)
    return d


def only_dir(root):
    dirs = [p for p in root.iterdir() if p.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


def test_print_defaults(capsys):
    assert main(["config", "--print-defaults"]) == 0
    assert yaml.safe_load(capsys.readouterr().out) == DEFAULTS


def test_verify_euclidean_toy(tmp_path):
    cfg = write(tmp_path, linear([[-0.5, 0.1], [0.0, -0.5]], [1.0, -1.0]))
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((only_dir(tmp_path / "o") / "verify_report.json").read_text())
    assert rep["passed"] and len(rep["config_hash"]) == 64


def test_verify_names_inadmissible_xi(tmp_path, capsys):
    A = (-0.2 * np.eye(4)).tolist()
    cfg = write(tmp_path, linear(A, [1.0, 0.0, 0.0, 0.0], norm={"kind": "max"}, envelope={"xi": 100.0}))
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "verify failed: xi_admissibility" in capsys.readouterr().out


def test_verify_default_config(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == 0


def test_run_zero_steps(tmp_path):
    assert main(["run", "--steps", "0", "--seeds", "0..1", "--out", str(tmp_path)]) == 0
    tdir = only_dir(tmp_path) / "trajectories"
    manifest = json.loads((tdir / "manifest.json").read_text())
    assert manifest["steps"] == 0 and manifest["status"] == "ok"
    data = read_trajectory_csv(tdir / "seed_0000.csv")
    assert data["n"].tolist() == [0.0]


def test_run_is_byte_identical_and_counts_files(tmp_path):
    args = ["run", "--steps", "2000"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    da, db = only_dir(tmp_path / "a"), only_dir(tmp_path / "b")
    assert da.name == db.name
    files = sorted(p.relative_to(da) for p in da.rglob("*") if p.is_file())
    assert len([f for f in files if f.suffix == ".csv"]) == 100
    for f in files:
        assert (da / f).read_bytes() == (db / f).read_bytes()
    head = (da / "trajectories" / "seed_0042.csv").read_text().splitlines()[:2]
    assert head[0].startswith("# config_hash=") and head[1].endswith("V_xi")


def test_altered_config_gets_new_directory(tmp_path):
    main(["run", "--steps", "100", "--seeds", "0..0", "--out", str(tmp_path)])
    main(["run", "--steps", "101", "--seeds", "0..0", "--out", str(tmp_path)])
    assert len([p for p in tmp_path.iterdir() if p.is_dir()]) == 2


def test_run_divergence(tmp_path):
    # the mean map contracts, but a huge initial step overshoots past the guard
    cfg = write(tmp_path, linear([[-0.5]], [0.0], P=[[1.0]], schedule={"alpha": 1000.0, "eta": 1.0},
                                 run={"theta0": [1.0], "steps": 5000, "seeds": "3..5"}))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    m = json.loads((only_dir(tmp_path / "o") / "trajectories" / "manifest.json").read_text())
    assert m["status"] == "diverged" and m["offending_seed"] == 3 and m["step"] > 0


def test_unknown_key_is_config_error(tmp_path):
    assert main(["verify", "--config", write(tmp_path, {"modle": {}}), "--out", str(tmp_path)]) == 2


def test_certify_noiseless_toy(tmp_path):
    cfg = write(tmp_path, {**linear([[-0.5, 0.0], [0.0, -0.5]], [0.5, 0.5]), "run": {"steps": 20000}})
    assert main(["certify", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


def test_certify_default(tmp_path):
    assert main(["certify", "--out", str(tmp_path)]) == 0
    cert = json.loads((only_dir(tmp_path) / "certificate.json").read_text())
    s = cert["summary"]
    assert s["passed"] and s["min_slack"] >= 0 and s["n_steps"] == 10001
    assert {"C_xi_K", "K_xi", "N_tail", "mu_xi", "L_F", "L_H"} <= set(s["constants"])
    assert len(cert["steps"]) == 10001


def test_certify_mutated_mu_fails(tmp_path):
    data = yaml.safe_load(open("scripts/configs/mutated_mu.yaml"))
    assert main(["certify", "--config", write(tmp_path, data), "--out", str(tmp_path / "o")]) == 1
    data["certify"]["mu_factor"] = 1.0
    assert main(["certify", "--config", write(tmp_path, data), "--out", str(tmp_path / "p")]) == 0


def test_certify_tight_remainder_mutation_fails(tmp_path):
    cfg = write(tmp_path, {"certify": {"mu_factor": 10.0, "remainder": "tight"}})
    assert main(["certify", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_certify_window_beyond_horizon(tmp_path, capsys):
    assert main(["certify", "--steps", "5000", "--out", str(tmp_path)]) == 2
    assert "need run.steps >=" in capsys.readouterr().err


def test_rates_default_pathwise(tmp_path, capsys):
    assert main(["rates", "--zeta", "0.5,0.7", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS pathwise zeta=0.5" in out and "outside-theory pathwise zeta=0.7" in out
    d = only_dir(tmp_path)
    summary = json.loads((d / "rates_summary.json").read_text())
    assert summary["window"]["hi"] == pytest.approx(0.6)
    assert (d / "rates_means.csv").read_text().startswith(f"# config_hash={summary['config_hash']}")


def test_rates_low_eta_is_l2_only(tmp_path, capsys):
    cfg = write(tmp_path, {"schedule": {"eta": 0.4}})
    code = main(["rates", "--config", cfg, "--steps", "20000", "--seeds", "0..59", "--out", str(tmp_path / "o")])
    assert code in (0, 1)
    assert "pathwise window empty" in capsys.readouterr().out
    summary = json.loads((only_dir(tmp_path / "o") / "rates_summary.json").read_text())
    assert summary["window"]["empty"] and summary["pathwise"] == []
    assert summary["l2"]["target"] == pytest.approx(-0.4)


def test_rates_insufficient_horizon(tmp_path, capsys):
    assert main(["rates", "--steps", "20000", "--seeds", "0..49", "--out", str(tmp_path)]) == 2
    assert "run.steps >= 100000" in capsys.readouterr().err
