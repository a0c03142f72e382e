# analyze.py
"""
Отчёт по прогону управления.
Читает артефакты из out/ (response.csv, uncontrolled.csv, selection.json, ssm.json),
проверяет критерии приёмки и сохраняет out/summary.json.

Использование:
    python analyze.py [--out DIR] [--dof 5]

Код выхода 4, если хотя бы один критерий не выполнен.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

import store
from ssmc import config
from ssmc.errors import InvariantError, SSMCError

log = logging.getLogger(__name__)

# -------------------------------------------------------
# Пороги приёмки
# -------------------------------------------------------
SUPPRESSION_MAX = 0.10       # пик |x| на второй половине горизонта: управляемый / неуправляемый
PREDICTION_RMS_MAX = 0.05    # RMS(z_full − z_pred) на последнем сегменте / начальная амплитуда
CORRECTION_RATIO_WARN = 1.0


# -------------------------------------------------------
# Метрики
# -------------------------------------------------------
def segment_starts(t: np.ndarray) -> List[int]:
    """Индексы начала сегментов: узел на границе повторяется в начале следующего."""
    return [0] + [i for i in range(1, t.size) if t[i] <= t[i - 1]]


def window_peak(t: np.ndarray, x: np.ndarray, t_from: float, t_to: float) -> float:
    mask = (t >= t_from) & (t <= t_to)
    if not mask.any():
        raise ValueError(f"empty window [{t_from}, {t_to}]")
    return float(np.abs(x[mask]).max())


def suppression_ratio(response: pd.DataFrame, uncontrolled: pd.DataFrame, dof: int,
                      t_from: float, t_to: float) -> float:
    ctrl = window_peak(response["t"].to_numpy(), response[f"x{dof}_full"].to_numpy(), t_from, t_to)
    free = window_peak(uncontrolled["t"].to_numpy(), uncontrolled[f"x{dof}"].to_numpy(), t_from, t_to)
    return ctrl / free if free > 0 else float("inf")


def last_segment_rms(response: pd.DataFrame, dof: int) -> float:
    t = response["t"].to_numpy()
    start = segment_starts(t)[-1]
    diff = response[f"x{dof}_full"].to_numpy()[start:] - response[f"x{dof}_pred"].to_numpy()[start:]
    return float(np.sqrt(np.mean(diff ** 2)))


def max_state_jump(response: pd.DataFrame, dof: int) -> float:
    """Скачок z_full на границах сегментов (должен быть нулевым)."""
    t = response["t"].to_numpy()
    x = response[f"x{dof}_full"].to_numpy()
    jumps = [abs(x[i] - x[i - 1]) for i in segment_starts(t)[1:]]
    return float(max(jumps, default=0.0))


# -------------------------------------------------------
# Сводка и проверки
# -------------------------------------------------------
def build_summary(out_dir: str, dof: Optional[int] = None,
                  metrics: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    response = pd.read_csv(store.artifact(out_dir, store.RESPONSE_CSV))
    dofs = sorted({int(c[1:].split("_")[0]) for c in response.columns if c.startswith("x")})
    dof = dof or dofs[-1]
    t = response["t"].to_numpy()
    t0, t1 = float(t[0]), float(t[-1])

    summary: Dict[str, Any] = {
        "horizon": [t0, t1],
        "segment_boundaries": [float(t[i]) for i in segment_starts(t)] + [t1],
        "observed_dofs": dofs,
        "dof": dof,
        "initial_amplitude": float(abs(response[f"x{dof}_pred"].iloc[0])),
        "peak_controlled_predicted": float(np.abs(response[f"x{dof}_pred"]).max()),
    }

    sel_path = store.artifact(out_dir, store.SELECTION_JSON)
    if os.path.exists(sel_path):
        sel = store.read_json(sel_path)
        summary["selection"] = {"pairs": sel["pairs"], "metric": sel["metric"], "sums": sel["sums"]}

    ssm_path = store.artifact(out_dir, store.SSM_JSON)
    if os.path.exists(ssm_path):
        raw = store.read_json(ssm_path)
        summary["ssm"] = {"order": raw["order"], "residual_slope": raw.get("residual_slope")}

    has_full = f"x{dof}_full" in response.columns
    unc_path = store.artifact(out_dir, store.UNCONTROLLED_CSV)
    if has_full:
        summary["peak_controlled_full"] = float(np.abs(response[f"x{dof}_full"]).max())
        summary["prediction_rms_last_segment"] = last_segment_rms(response, dof)
        summary["max_state_jump"] = max_state_jump(response, dof)
        if os.path.exists(unc_path):
            unc = pd.read_csv(unc_path)
            mid = t0 + 0.5 * (t1 - t0)
            summary["suppression_window"] = [mid, t1]
            summary["suppression_ratio"] = suppression_ratio(response, unc, dof, mid, t1)
            summary["peak_uncontrolled"] = float(np.abs(unc[f"x{dof}"]).max())
            if f"x{dof}_linear" in unc.columns:
                summary["peak_uncontrolled_linear"] = float(np.abs(unc[f"x{dof}_linear"]).max())

    if metrics:
        summary["metrics"] = {k: v for k, v in metrics.items() if k != "segments"}
    return summary


def check_acceptance(summary: Dict[str, Any]) -> Dict[str, bool]:
    checks: Dict[str, bool] = {}
    if "suppression_ratio" in summary:
        checks["suppression"] = summary["suppression_ratio"] <= SUPPRESSION_MAX
    if "prediction_rms_last_segment" in summary and summary["initial_amplitude"] > 0:
        rel = summary["prediction_rms_last_segment"] / summary["initial_amplitude"]
        summary["prediction_rms_relative"] = rel
        checks["prediction"] = rel <= PREDICTION_RMS_MAX
    ratio = summary.get("metrics", {}).get("correction_ratio")
    if ratio is not None and ratio > CORRECTION_RATIO_WARN:
        log.warning(f"[RUN] correction ratio {ratio:.3f}: εV̂q dominates W(p)")
    summary["checks"] = checks
    return checks


def write_summary(out_dir: str, summary: Dict[str, Any]) -> str:
    path = store.artifact(out_dir, store.SUMMARY_JSON)
    store.write_json(summary, path)
    return path


def report(out_dir: str, dof: Optional[int] = None, metrics: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Сводка + проверки; InvariantError при провале любого критерия."""
    summary = build_summary(out_dir, dof, metrics)
    checks = check_acceptance(summary)
    write_summary(out_dir, summary)
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        raise InvariantError(f"acceptance checks failed: {', '.join(failed)}")
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Отчёт по прогону управления")
    parser.add_argument("--out", default=config.OUT_DIR)
    parser.add_argument("--dof", type=int, default=None)
    args = parser.parse_args(argv)
    logging.basicConfig(level=config.LOG_LEVEL, format="%(asctime)s | %(levelname)s | %(message)s")

    try:
        summary = report(args.out, args.dof)
    except InvariantError as e:
        print(f"[FAIL] {e}")
        return 4
    except (SSMCError, FileNotFoundError) as e:
        print(f"[ERROR] {e}")
        return 2

    print(f"\n{'=' * 55}")
    for k, ok in summary["checks"].items():
        print(f"  {k:<20} {'OK' if ok else 'FAIL'}")
    print(f"  Отчёт: {store.artifact(args.out, store.SUMMARY_JSON)}")
    print(f"{'=' * 55}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
