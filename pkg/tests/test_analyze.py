import numpy as np
import pandas as pd
import pytest

import analyze
import store
from ssmc.errors import ConfigError, InvariantError


def _write_run(out_dir, decay: float, pred_offset: float = 0.0):
    """Two segments on [0, 20] and [20, 100] with a duplicated boundary node."""
    t1 = np.linspace(0.0, 20.0, 21)
    t2 = np.linspace(20.0, 100.0, 81)
    t = np.concatenate([t1, t2])
    x = 2.0 * np.exp(-decay * t) * np.cos(t)
    r_df = pd.DataFrame({"t": t, "x5_pred": x + pred_offset, "x5_full": x})
    store.write_csv(r_df, store.artifact(out_dir, store.RESPONSE_CSV))
    tu = np.linspace(0.0, 100.0, 101)
    u_df = pd.DataFrame({"t": tu, "x5": 2.0 * np.cos(tu), "x5_linear": 2.1 * np.cos(tu)})
    store.write_csv(u_df, store.artifact(out_dir, store.UNCONTROLLED_CSV))


def test_segment_starts():
    t = np.array([0.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0])
    assert analyze.segment_starts(t) == [0, 3, 5]


def test_summary_and_passing_checks(tmp_path):
    out = str(tmp_path)
    _write_run(out, decay=0.2)
    summary = analyze.report(out)
    assert summary["segment_boundaries"] == [0.0, 20.0, 100.0]
    assert summary["dof"] == 5
    assert summary["suppression_ratio"] < 1e-3
    assert summary["max_state_jump"] == 0.0
    assert summary["peak_uncontrolled_linear"] == pytest.approx(2.1)
    assert summary["checks"] == {"suppression": True, "prediction": True}
    assert store.read_json(store.artifact(out, store.SUMMARY_JSON))["dof"] == 5


def test_failing_suppression_raises(tmp_path):
    out = str(tmp_path)
    _write_run(out, decay=0.0)
    with pytest.raises(InvariantError, match="suppression"):
        analyze.report(out)
    assert analyze.main(["--out", out]) == 4


def test_prediction_error_relative_to_initial_amplitude(tmp_path):
    out = str(tmp_path)
    _write_run(out, decay=0.2, pred_offset=0.2)
    summary = analyze.build_summary(out)
    checks = analyze.check_acceptance(summary)
    assert summary["prediction_rms_relative"] == pytest.approx(0.2 / 2.2)
    assert not checks["prediction"]


def test_missing_response_exit_code(tmp_path):
    assert analyze.main(["--out", str(tmp_path)]) == 2


def test_stale_hash_refused(tmp_path):
    path = store.artifact(str(tmp_path), store.SELECTION_JSON)
    store.save_selection(path, "aaa", "mhsv", 0.95, [1, 2], {"mhsv": 0.96, "dcgain": 0.9})
    assert store.load_selection(path, "aaa")["pairs"] == [1, 2]
    with pytest.raises(ConfigError, match="--fresh"):
        store.load_selection(path, "bbb")
