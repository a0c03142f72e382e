# store.py
"""
Все операции с артефактами прогона (каталог OUT_DIR).
Каждый артефакт несёт sha256 файла модели, устаревшие файлы не смешиваются.
"""

import hashlib
import json
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from ssmc.errors import ConfigError

FLOAT_FORMAT = "%.17g"

SPECTRUM_CSV  = "spectrum.csv"
SSM_JSON      = "ssm.json"
RESIDUAL_CSV  = "ssm_residual.csv"
RANKING_CSV   = "ranking.csv"
SELECTION_JSON = "selection.json"
REDUCED_CSV   = "reduced.csv"
U_CSV         = "u.csv"
RESPONSE_CSV  = "response.csv"
SUMMARY_JSON  = "summary.json"
UNCONTROLLED_CSV = "uncontrolled.csv"


# ───────────────────────────────────────────────
# Пути и хэши
# ───────────────────────────────────────────────

def ensure_dir(out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def artifact(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, name)


def file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def check_hash(raw: Dict[str, Any], model_hash: str, path: str) -> None:
    """Артефакт должен быть построен по той же модели."""
    got = raw.get("model_hash")
    if got != model_hash:
        raise ConfigError(
            f"{path}: built for another model (hash {str(got)[:12]}…), rerun with --fresh"
        )


# ───────────────────────────────────────────────
# JSON / CSV
# ───────────────────────────────────────────────

def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def write_json(data: Dict[str, Any], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, default=_jsonable)


def read_json(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ConfigError(f"artifact not found: {path} (run the previous stage or pass --fresh)")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)


# ───────────────────────────────────────────────
# Выбор базиса
# ───────────────────────────────────────────────

def save_selection(path: str, model_hash: str, metric: str, threshold: float,
                   pairs: List[int], sums: Dict[str, float]) -> None:
    write_json({
        "model_hash": model_hash,
        "metric": metric,
        "threshold": threshold,
        "pairs": list(pairs),
        "sums": sums,
    }, path)


def load_selection(path: str, model_hash: Optional[str] = None) -> Dict[str, Any]:
    raw = read_json(path)
    if model_hash is not None:
        check_hash(raw, model_hash, path)
    return raw


# ───────────────────────────────────────────────
# Отчёт по управлению
# ───────────────────────────────────────────────

def control_frames(grid: np.ndarray, u: np.ndarray, z_pred: Optional[np.ndarray],
                   z_full: Optional[np.ndarray], dofs: List[int]) -> tuple:
    """u.csv: t, u1..uq;  response.csv: t, x{d}_pred, x{d}_full по наблюдаемым DOF."""
    u_df = pd.DataFrame({"t": grid})
    for j in range(u.shape[1]):
        u_df[f"u{j + 1}"] = u[:, j]

    r_df = pd.DataFrame({"t": grid})
    for d in dofs:
        if z_pred is not None:
            r_df[f"x{d}_pred"] = z_pred[:, d - 1]
        if z_full is not None:
            r_df[f"x{d}_full"] = z_full[:, d - 1]
    return u_df, r_df
