import json
import os

import numpy as np
import pandas as pd
import pytest

import run
import store
from ssmc.mechmodel import build_oscillator_chain, chain_default_forcing, save_model


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run.main(["chain-demo"]) == 0
    return tmp_path


def _out(workdir, name):
    return os.path.join(str(workdir), "out", name)


def _read(path):
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def test_chain_demo_writes_model_and_config(workdir):
    assert os.path.exists(workdir / "models" / "chain10.json")
    with open(workdir / "configs" / "chain.json", encoding="utf-8") as f:
        cfg = json.load(f)
    assert cfg["master_pairs"] == [1]
    assert cfg["horizon"]["boundaries"] == [20.0]


def test_eig_prints_slowest_pair(workdir, capsys):
    assert run.main(["eig", "--out", "out"]) == 0
    text = capsys.readouterr().out
    assert "λ_1 = -0.0041 ± 0.2846i" in text
    assert os.path.exists(_out(workdir, store.SPECTRUM_CSV))


def test_eig_is_deterministic(workdir):
    assert run.main(["eig", "--out", "out"]) == 0
    first = _read(_out(workdir, store.SPECTRUM_CSV))
    assert run.main(["eig", "--out", "out"]) == 0
    assert _read(_out(workdir, store.SPECTRUM_CSV)) == first


def test_ssm_then_select(workdir, capsys):
    assert run.main(["ssm", "--out", "out"]) == 0
    raw = store.read_json(_out(workdir, store.SSM_JSON))
    assert raw["order"] == 3
    assert raw["model_hash"] == store.file_hash(str(workdir / "models" / "chain10.json"))

    assert run.main(["select", "--out", "out"]) == 0
    sums = {
        line.split()[0]: float(line.split(":")[1])
        for line in capsys.readouterr().out.splitlines()
        if "(первые 5)" in line
    }
    assert sums["DCgain"] == pytest.approx(0.907, abs=5e-3)
    assert sums["MHSV"] == pytest.approx(0.978, abs=5e-3)
    first = _read(_out(workdir, store.RANKING_CSV))
    assert run.main(["select", "--out", "out"]) == 0
    assert _read(_out(workdir, store.RANKING_CSV)) == first

    sel = store.read_json(_out(workdir, store.SELECTION_JSON))
    assert sel["metric"] == "mhsv"
    assert sel["sums"]["mhsv"] >= 0.95


def test_select_metric_override(workdir):
    assert run.main(["select", "--out", "out", "--metric", "dcgain", "--threshold", "0.5"]) == 0
    sel = store.read_json(_out(workdir, store.SELECTION_JSON))
    assert sel["metric"] == "dcgain"
    assert sel["threshold"] == 0.5


def test_bad_threshold_exit_code(workdir):
    assert run.main(["select", "--out", "out", "--threshold", "1.5"]) == 2


def test_missing_config_exit_code(workdir):
    assert run.main(["eig", "--config", "configs/nope.json"]) == 2


def test_bad_boundaries_exit_code(workdir):
    # boundary outside the horizon
    assert run.main(["control", "--out", "out", "--boundaries", "150"]) == 2


def test_control_requires_earlier_stages(workdir):
    assert run.main(["control", "--out", "out", "--no-validate"]) == 2


def test_validate_requires_control_artifacts(workdir):
    assert run.main(["ssm", "--out", "out"]) == 0
    assert run.main(["validate", "--out", "out"]) == 2


def test_stale_artifacts_refused(workdir):
    assert run.main(["ssm", "--out", "out"]) == 0
    assert run.main(["select", "--out", "out"]) == 0
    # same chain with stiffer cubic springs
    actuators = [1, 5]
    changed = build_oscillator_chain(
        10, 1.0, 1.0, 0.1, 0.7, actuators,
        forcing=chain_default_forcing(10, actuators), epsilon=0.001,
    )
    save_model(changed, str(workdir / "models" / "chain10.json"))
    assert run.main(["control", "--out", "out", "--no-validate"]) == 2


def test_control_short_horizon_without_validation(workdir, capsys):
    path = workdir / "configs" / "chain.json"
    cfg = json.loads(path.read_text(encoding="utf-8"))
    cfg["horizon"] = {"t0": 0.0, "t1": 10.0, "boundaries": [5.0]}
    cfg["grids"] = {"design_step": 0.05}
    path.write_text(json.dumps(cfg), encoding="utf-8")

    assert run.main(["control", "--out", "out", "--fresh", "--no-validate"]) == 0
    assert "R_hat" not in capsys.readouterr().out
    u = pd.read_csv(_out(workdir, store.U_CSV))
    assert list(u.columns) == ["t", "u1", "u2"]
    assert u["t"].iloc[0] == 0.0 and u["t"].iloc[-1] == 10.0
    assert np.isfinite(u[["u1", "u2"]].to_numpy()).all()
    summary = store.read_json(_out(workdir, store.SUMMARY_JSON))
    assert summary["segment_boundaries"] == [0.0, 5.0, 10.0]
    assert summary["initial_amplitude"] == pytest.approx(2.0217, abs=2e-3)


@pytest.mark.slow
def test_chain_control_end_to_end(workdir):
    assert run.main(["control", "--out", "out", "--fresh"]) == 0
    summary = store.read_json(_out(workdir, store.SUMMARY_JSON))
    assert summary["segment_boundaries"] == [0.0, 20.0, 100.0]
    assert summary["suppression_ratio"] <= 0.10
    assert summary["prediction_rms_relative"] <= 0.05
    assert summary["max_state_jump"] == 0.0
    for name in (store.U_CSV, store.RESPONSE_CSV, store.UNCONTROLLED_CSV, store.REDUCED_CSV):
        assert os.path.exists(_out(workdir, name))

    assert run.main(["validate", "--out", "out"]) == 0
