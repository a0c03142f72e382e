# ssmc/config.py
"""
Run configuration.

Environment (.env is picked up automatically):
    SSMC_OUT_DIR          artifact directory            (out)
    SSMC_LOG_LEVEL        logging level                 (INFO)
    SSMC_DENSE_THRESHOLD  N above which sparse eigen/LU (2000)
    SSMC_GRID_NODES       design grid nodes per segment (2000)
    SSMC_MAX_WORKERS      thread pool size              (4)
    SSMC_RTOL / SSMC_ATOL integrator tolerances         (1e-8 / 1e-10)

The run itself is described by a JSON file parsed into ``RunConfig``.
"""

from __future__ import annotations

import json
import os
from typing import List, Literal, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from ssmc.errors import ConfigError

load_dotenv()

OUT_DIR = os.getenv("SSMC_OUT_DIR", "out")
LOG_LEVEL = os.getenv("SSMC_LOG_LEVEL", "INFO")
DENSE_THRESHOLD = int(os.getenv("SSMC_DENSE_THRESHOLD", "2000"))
GRID_NODES = int(os.getenv("SSMC_GRID_NODES", "2000"))
MAX_WORKERS = int(os.getenv("SSMC_MAX_WORKERS", "4"))
RTOL = float(os.getenv("SSMC_RTOL", "1e-8"))
ATOL = float(os.getenv("SSMC_ATOL", "1e-10"))

# Selection defaults per metric
DEFAULT_THRESHOLDS = {"dcgain": 0.9, "mhsv": 0.95}
DEFAULT_M_HAT = 50
DEFAULT_RES_TOL = 0.05


# ──────────────────────────────────────────────────────────────────────────────
# CONFIG MODELS
# ──────────────────────────────────────────────────────────────────────────────

class SelectionConfig(BaseModel):
    metric: Literal["dcgain", "mhsv"] = "mhsv"
    threshold: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    m_hat: Optional[int] = Field(default=None, ge=1)
    forced_pairs: List[int] = []
    observed_dofs: Optional[List[int]] = None  # 1-based; default = actuator DOFs

    def resolved_threshold(self) -> float:
        if self.threshold is None:
            return DEFAULT_THRESHOLDS[self.metric]
        return self.threshold


class WeightSpec(BaseModel):
    """diag(displacement_scale·I_n, velocity_scale·I_n), or a dense matrix file."""
    displacement_scale: float = 0.0
    velocity_scale: float = 0.0
    file: Optional[str] = None

    def expand(self, n: int, base_dir: str = ".") -> np.ndarray:
        if self.file:
            path = self.file if os.path.isabs(self.file) else os.path.join(base_dir, self.file)
            mat = np.load(path) if path.endswith(".npy") else np.loadtxt(path, delimiter=",")
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
            if mat.shape != (2 * n, 2 * n):
                raise ConfigError(f"weight file {self.file}: expected {(2 * n, 2 * n)}, got {mat.shape}")
            return mat
        return np.diag(np.concatenate([
            np.full(n, self.displacement_scale), np.full(n, self.velocity_scale)
        ]))


class WeightsConfig(BaseModel):
    Q: WeightSpec = WeightSpec()
    R: List[float] = [1.0]  # diagonal of R̂; a single entry is broadcast
    M: WeightSpec = WeightSpec()

    def R_matrix(self, q: int) -> np.ndarray:
        diag = self.R * q if len(self.R) == 1 else self.R
        if len(diag) != q:
            raise ConfigError(f"weights.R: expected {q} entries, got {len(self.R)}")
        return np.diag(np.asarray(diag, dtype=float))


class HorizonConfig(BaseModel):
    t0: float = 0.0
    t1: float = 100.0
    boundaries: List[float] = []

    @model_validator(mode="after")
    def _check(self) -> "HorizonConfig":
        if self.t1 <= self.t0:
            raise ValueError("t1 must be greater than t0")
        pts = [self.t0] + list(self.boundaries) + [self.t1]
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("boundaries must be strictly increasing inside (t0, t1)")
        return self

    def segments(self) -> List[float]:
        return [self.t0] + list(self.boundaries) + [self.t1]


class GridConfig(BaseModel):
    design_step: Optional[float] = Field(default=None, gt=0.0)
    output_step: Optional[float] = Field(default=None, gt=0.0)


class InitialConfig(BaseModel):
    """Start either from z0 directly or on the SSM at p0 = (q1, q̄1, ...)."""
    p0: List[float] = [0.0]       # real parts of q_i
    p0_imag: Optional[List[float]] = None
    z0: Optional[List[float]] = None

    def p0_vector(self, m: int) -> np.ndarray:
        re = list(self.p0) + [0.0] * (m - len(self.p0))
        im = list(self.p0_imag or []) + [0.0] * (m - len(self.p0_imag or []))
        out = np.zeros(2 * m, dtype=complex)
        for i in range(m):
            out[2 * i] = re[i] + 1j * im[i]
            out[2 * i + 1] = re[i] - 1j * im[i]
        return out


class RunConfig(BaseModel):
    model_path: str
    master_pairs: List[int] = [1]  # 1-based pair numbers
    ssm_order: Optional[int] = Field(default=None, ge=1)  # None: 3, or 5 with internal resonance
    resonance_tol: float = Field(default=DEFAULT_RES_TOL, gt=0.0)
    resonance_max_order: Optional[int] = None
    ordering: Literal["real", "frequency"] = "real"
    selection: SelectionConfig = SelectionConfig()
    weights: WeightsConfig = WeightsConfig()
    epsilon: Optional[float] = Field(default=None, gt=0.0)
    horizon: HorizonConfig = HorizonConfig()
    grids: GridConfig = GridConfig()
    initial: InitialConfig = InitialConfig()
    seed: int = 0
    validate_full: bool = True
    feedback: bool = False
    seed_from_full: bool = True  # receding horizon: re-anchor on the full-model state

    base_dir: str = "."  # set by load(); relative paths resolve against it

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path}: invalid JSON ({e})")
        raw.setdefault("base_dir", os.path.dirname(os.path.abspath(path)))
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            first = e.errors()[0]
            loc = ".".join(str(x) for x in first["loc"])
            raise ConfigError(f"{loc}: {first['msg']}")

    def resolve(self, rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.join(self.base_dir, rel)

    def design_nodes(self, t0: float, t1: float) -> int:
        if self.grids.design_step:
            return max(int(round((t1 - t0) / self.grids.design_step)) + 1, 3)
        return GRID_NODES

    def output_nodes(self, t0: float, t1: float) -> int:
        """Grid of the uncontrolled reference run; falls back to the design grid."""
        if self.grids.output_step:
            return max(int(round((t1 - t0) / self.grids.output_step)) + 1, 3)
        return self.design_nodes(t0, t1)

    def dump(self, path: str) -> None:
        data = self.model_dump(exclude={"base_dir"})
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2)
