# engine.py
"""
ControlEngine: staged pipeline over one model file.

    модель → спектр → SSM → ранжирование/выбор базиса → ELQR → проверка на полной модели

Each stage persists its artifact in out_dir; later stages reuse them unless
``fresh`` is set. Artifacts carry the model-file hash so stale files from
another model are refused instead of being mixed in.
"""

import logging
import os
import time
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

import store
from ssmc import config
from ssmc.config import RunConfig
from ssmc.elqr import ControlSolution, FullRun, LQWeights, receding_horizon, validate_full
from ssmc.errors import ConfigError
from ssmc.linred import (
    ModalRanking,
    ReducedLinearModel,
    actuated_dofs,
    build_reduced_linear,
    observation_matrix,
    rank_modes,
    ranking_frame,
    realify,
    select_basis,
)
from ssmc.mechmodel import FirstOrderSystem, PolynomialMap, SecondOrderSystem, load_model, to_first_order
from ssmc.spectral import EigenPair, master_subspace, spectrum_table, solve_modes
from ssmc.ssm import (
    SSMModel,
    compute_autonomous_ssm,
    default_order,
    eval_parameterization,
    invariance_residual,
    load_ssm,
    residual_slope,
    save_ssm,
    simulate_reduced,
    trajectory_frame,
)

log = logging.getLogger(__name__)

RESIDUAL_AMPLITUDES = np.logspace(-2, -1, 5)


class ControlEngine:
    def __init__(self, cfg: RunConfig, out_dir: str = config.OUT_DIR, fresh: bool = False):
        self.cfg = cfg
        self.out_dir = store.ensure_dir(out_dir)
        self.fresh = fresh

        self.model_path = cfg.resolve(cfg.model_path)
        sys = load_model(self.model_path)
        if cfg.epsilon is not None:
            sys = replace(sys, epsilon=cfg.epsilon)
        self.sys: SecondOrderSystem = sys
        self.fo: FirstOrderSystem = to_first_order(sys)
        self.model_hash = store.file_hash(self.model_path)

        self.dofs: List[int] = cfg.selection.observed_dofs or actuated_dofs(sys.D)
        self.C_obs = observation_matrix(sys.n, self.dofs)
        self.m_hat = min(cfg.selection.m_hat or config.DEFAULT_M_HAT, self.fo.N // 2)

        self._pairs: Optional[List[EigenPair]] = None
        self._ssm: Optional[SSMModel] = None
        self._selection: Optional[List[int]] = None

        self.timings: Dict[str, float] = {}

    def _path(self, name: str) -> str:
        return store.artifact(self.out_dir, name)

    @property
    def epsilon(self) -> float:
        return self.sys.epsilon

    # ───────────────────────────────────────────
    # Спектр
    # ───────────────────────────────────────────

    def spectrum(self) -> List[EigenPair]:
        if self._pairs is None:
            t0 = time.time()
            count = max(self.m_hat, max(self.cfg.master_pairs), max(self.cfg.selection.forced_pairs, default=1))
            self._pairs = solve_modes(self.fo, min(count, self.fo.N // 2), self.cfg.ordering, seed=self.cfg.seed)
            self.timings["eig"] = time.time() - t0
            store.write_csv(spectrum_table(self._pairs), self._path(store.SPECTRUM_CSV))
        return self._pairs

    # ───────────────────────────────────────────
    # SSM
    # ───────────────────────────────────────────

    def _ssm_order(self, master) -> int:
        return self.cfg.ssm_order or default_order(master, self.cfg.resonance_tol)

    def compute_ssm(self) -> Tuple[SSMModel, pd.DataFrame]:
        t0 = time.time()
        master = master_subspace(self.spectrum(), self.cfg.master_pairs, self.fo.B)
        order = self._ssm_order(master)
        ssm = compute_autonomous_ssm(
            self.fo, master, order, self.cfg.resonance_tol, self.cfg.resonance_max_order,
        )
        table = invariance_residual(ssm, self.fo, RESIDUAL_AMPLITUDES)
        slope = residual_slope(table) if not ssm.is_linear() else float("nan")
        res_df = pd.DataFrame(table, columns=["amplitude", "residual"])
        store.write_csv(res_df, self._path(store.RESIDUAL_CSV))
        save_ssm(ssm, self._path(store.SSM_JSON), {"model_hash": self.model_hash, "residual_slope": slope})
        self.timings["ssm"] = time.time() - t0
        self._ssm = ssm
        return ssm, res_df

    def ssm(self, allow_compute: bool = True) -> SSMModel:
        if self._ssm is not None:
            return self._ssm
        path = self._path(store.SSM_JSON)
        if not self.fresh and os.path.exists(path):
            ssm, raw = load_ssm(path)
            store.check_hash(raw, self.model_hash, path)
            wanted = [p.index for p in ssm.master.pairs]
            if wanted != sorted(self.cfg.master_pairs) or (self.cfg.ssm_order and ssm.order != self.cfg.ssm_order):
                raise ConfigError(f"{path}: master pairs/order differ from config, rerun with --fresh")
            log.info(f"[SSM] reusing {path} (order {ssm.order})")
            self._ssm = ssm
            return ssm
        if not allow_compute:
            raise ConfigError(f"no SSM artifact in {self.out_dir}; run `ssm` first or pass --fresh")
        return self.compute_ssm()[0]

    # ───────────────────────────────────────────
    # Ранжирование и выбор базиса
    # ───────────────────────────────────────────

    def rank(self, metric: Optional[str] = None, threshold: Optional[float] = None
             ) -> Tuple[List[ModalRanking], List[int]]:
        t0 = time.time()
        sel = self.cfg.selection
        metric = metric or sel.metric
        if threshold is None:
            threshold = sel.threshold if sel.threshold is not None else config.DEFAULT_THRESHOLDS[metric]
        pairs = self.spectrum()
        rankings = rank_modes(pairs, self.fo.Bext, self.C_obs, self.m_hat)
        chosen = select_basis(rankings, metric, threshold, sel.forced_pairs)
        sums = {
            "dcgain": float(sum(r.normalized_dcgain for r in rankings if r.pair_index in chosen)),
            "mhsv": float(sum(r.normalized_mhsv for r in rankings if r.pair_index in chosen)),
        }
        store.write_csv(ranking_frame(rankings, chosen), self._path(store.RANKING_CSV))
        store.save_selection(self._path(store.SELECTION_JSON), self.model_hash, metric, threshold, chosen, sums)
        self.timings["select"] = time.time() - t0
        self._selection = chosen
        return rankings, chosen

    def selection(self, allow_compute: bool = True) -> List[int]:
        if self._selection is not None:
            return self._selection
        path = self._path(store.SELECTION_JSON)
        if not self.fresh and os.path.exists(path):
            raw = store.load_selection(path, self.model_hash)
            self._selection = [int(i) for i in raw["pairs"]]
            return self._selection
        if not allow_compute:
            raise ConfigError(f"no selection artifact in {self.out_dir}; run `select` first or pass --fresh")
        return self.rank()[1]

    def reduced_model(self) -> ReducedLinearModel:
        pairs = self.spectrum()
        chosen = self.selection()
        missing = [i for i in chosen if i > len(pairs)]
        if missing:
            raise ConfigError(f"selected pairs {missing} beyond computed spectrum ({len(pairs)} pairs)")
        model = build_reduced_linear(pairs, chosen, self.fo.Bext, self.fo.Fext, self.C_obs, self.fo.B)
        return realify(model)

    # ───────────────────────────────────────────
    # Управление
    # ───────────────────────────────────────────

    def weights(self) -> LQWeights:
        w = self.cfg.weights
        n = self.sys.n
        return LQWeights(
            Q=w.Q.expand(n, self.cfg.base_dir),
            R_hat=w.R_matrix(self.sys.q),
            M_hat=w.M.expand(n, self.cfg.base_dir),
        )

    def initial_state(self, ssm: SSMModel) -> Tuple[Optional[np.ndarray], np.ndarray]:
        """(p0, z0): a given z0 wins; otherwise z0 = W(p0)."""
        init = self.cfg.initial
        if init.z0 is not None:
            z0 = np.asarray(init.z0, dtype=float)
            if z0.shape != (self.fo.N,):
                raise ConfigError(f"initial.z0: expected {self.fo.N} entries, got {z0.size}")
            return None, z0
        p0 = init.p0_vector(ssm.m)
        return p0, eval_parameterization(ssm, p0)

    def control(self, validate: Optional[bool] = None, boundaries: Optional[List[float]] = None
                ) -> Tuple[ControlSolution, Optional[FullRun]]:
        cfg = self.cfg
        validate = cfg.validate_full if validate is None else validate
        ssm = self.ssm(allow_compute=self.fresh)
        if self.fresh:
            self.rank()
        self.selection(allow_compute=False)
        model = self.reduced_model()
        weights = self.weights()
        p0, z0 = self.initial_state(ssm)

        h = cfg.horizon
        pts = [h.t0] + list(boundaries if boundaries is not None else h.boundaries) + [h.t1]

        t0 = time.time()
        sol = receding_horizon(
            self.fo, ssm, model, weights, z0, pts, self.epsilon, p0=p0,
            nodes=cfg.design_nodes, validate=validate,
            seed_from_full=cfg.seed_from_full, feedback=cfg.feedback,
        )
        self.timings["control"] = time.time() - t0

        reference = None
        if validate:
            t_ref = time.time()
            grid = np.linspace(h.t0, h.t1, cfg.output_nodes(h.t0, h.t1))
            reference = validate_full(self.fo, None, z0, h.t0, h.t1, grid)
            # same start, nonlinearity switched off
            linear = validate_full(replace(self.fo, F=PolynomialMap(self.fo.N, self.fo.N)),
                                   None, z0, h.t0, h.t1, grid)
            self.timings["reference"] = time.time() - t_ref
            ref_df = pd.DataFrame({"t": reference.times})
            for d in self.dofs:
                ref_df[f"x{d}"] = reference.z[:, d - 1]
                ref_df[f"x{d}_linear"] = linear.z[:, d - 1]
            store.write_csv(ref_df, self._path(store.UNCONTROLLED_CSV))

        if p0 is not None:
            traj = simulate_reduced(ssm, p0, h.t0, h.t1, cfg.design_nodes(h.t0, h.t1))
            store.write_csv(trajectory_frame(traj), self._path(store.REDUCED_CSV))

        u_df, r_df = store.control_frames(sol.grid, sol.u, sol.z_pred, sol.z_full, self.dofs)
        store.write_csv(u_df, self._path(store.U_CSV))
        store.write_csv(r_df, self._path(store.RESPONSE_CSV))
        return sol, reference

    # ───────────────────────────────────────────
    # Повторная проверка по сохранённому u.csv
    # ───────────────────────────────────────────

    def replay(self) -> Tuple[FullRun, float]:
        """Open-loop replay of u.csv on the full model; RMS error vs response.csv predictions."""
        u_path, r_path = self._path(store.U_CSV), self._path(store.RESPONSE_CSV)
        for p in (u_path, r_path):
            if not os.path.exists(p):
                raise ConfigError(f"artifact not found: {p} (run `control` first)")
        u_df = pd.read_csv(u_path)
        r_df = pd.read_csv(r_path)
        ssm = self.ssm(allow_compute=False)
        _, z = self.initial_state(ssm)

        t = u_df["t"].to_numpy()
        u = u_df.drop(columns="t").to_numpy()
        cuts = [0] + [i for i in range(1, t.size) if t[i] <= t[i - 1]] + [t.size]

        times, states = [], []
        for a, b in zip(cuts, cuts[1:]):
            seg_t = t[a:b]
            run = validate_full(self.fo, (seg_t, u[a:b]), z, seg_t[0], seg_t[-1], seg_t)
            times.append(run.times)
            states.append(run.z)
            z = run.z[-1]
        full = FullRun(np.concatenate(times), np.concatenate(states))

        errs = []
        for d in self.dofs:
            col = f"x{d}_pred"
            if col in r_df:
                errs.append(full.z[:, d - 1] - r_df[col].to_numpy())
        rms = float(np.sqrt(np.mean(np.square(errs)))) if errs else float("nan")
        full.metrics["rms_prediction_error"] = rms
        full.metrics["peak_amplitude"] = float(np.abs(full.z[:, : self.sys.n]).max())
        return full, rms
