# ssmc/elqr.py
"""
Extended LQ control on the realified reduced model.

    J̃ = ∫ (b_Qᵀq + qᵀQ₂q + uᵀR̂u) dt + b_Mᵀq(t1) + qᵀ(t1)M₂q(t1)
    q̇ = Λ̂q + B̂u + b(t)

With μ̄ = −2Pq + s:

    Ṗ = −PΛ̂ − Λ̂ᵀP − Q₂ + PB̂R̂⁻¹B̂ᵀP,          P(t1) = M₂
    ṡ = (PB̂R̂⁻¹B̂ᵀ − Λ̂ᵀ)s + b_Q + 2Pb,         s(t1) = −b_M(t1)
    u = −R̂⁻¹B̂ᵀPq + ½R̂⁻¹B̂ᵀs

Both sweeps run backward with solve_ivp and are resampled on the uniform
design grid; P, s, b_Q and b are interpolated piecewise linearly in between.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp, trapezoid
from scipy.interpolate import interp1d

from ssmc import config
from ssmc.errors import NumericalError
from ssmc.linred import ReducedLinearModel, reduced_initial_condition
from ssmc.mechmodel import FirstOrderSystem, eval_polynomial
from ssmc.ssm import (
    ReducedTrajectory,
    SSMModel,
    eval_parameterization,
    project_to_master,
    simulate_reduced,
)

log = logging.getLogger(__name__)

_ESCAPE = 1e12


def _interpolant(grid: np.ndarray, samples: np.ndarray, kind: str = "linear"):
    return interp1d(grid, samples, axis=0, kind=kind, assume_sorted=True, copy=False)


def _check_t(grid: np.ndarray, t: float) -> float:
    span = grid[-1] - grid[0]
    if t < grid[0] - 1e-9 * span or t > grid[-1] + 1e-9 * span:
        raise ValueError(f"t={t} outside design grid [{grid[0]}, {grid[-1]}]")
    return float(np.clip(t, grid[0], grid[-1]))


# ──────────────────────────────────────────────────────────────────────────────
# TYPES
# ──────────────────────────────────────────────────────────────────────────────

def _is_psd(M: np.ndarray, strict: bool = False) -> bool:
    w = la.eigvalsh(M)
    if w.size == 0:
        return True
    tol = 1e-10 * max(np.abs(w).max(), 1.0)
    return bool(w.min() > tol) if strict else bool(w.min() >= -tol)


@dataclass(frozen=True)
class LQWeights:
    Q: np.ndarray
    R_hat: np.ndarray
    M_hat: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R_hat", "M_hat"):
            mat = getattr(self, name)
            if sp.issparse(mat):
                continue
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
            object.__setattr__(self, name, mat)
            if not np.allclose(mat, mat.T, rtol=0, atol=1e-12 * max(np.abs(mat).max(initial=0.0), 1.0)):
                raise ValueError(f"{name} must be symmetric")
            if mat.shape[0] <= config.DENSE_THRESHOLD and not _is_psd(mat, strict=(name == "R_hat")):
                raise ValueError(f"{name} must be positive {'definite' if name == 'R_hat' else 'semidefinite'}")


@dataclass(frozen=True)
class LQData:
    grid: np.ndarray
    Q2: np.ndarray
    R_hat: np.ndarray
    M2: np.ndarray
    bQ: np.ndarray                 # (T, d)
    bM: np.ndarray                 # (d,)
    b: np.ndarray                  # (T, d)
    a: np.ndarray                  # (T,), reporting only
    aM: float = 0.0
    Wp: Optional[np.ndarray] = None  # (T, N) sampled W(p(t))
    epsilon: float = 1.0

    @property
    def dim(self) -> int:
        return self.Q2.shape[0]

    @cached_property
    def _bQ_fn(self):
        return _interpolant(self.grid, self.bQ)

    @cached_property
    def _b_fn(self):
        return _interpolant(self.grid, self.b)

    def bQ_at(self, t: float) -> np.ndarray:
        return self._bQ_fn(t)

    def b_at(self, t: float) -> np.ndarray:
        return self._b_fn(t)


@dataclass(frozen=True)
class RiccatiSolution:
    grid: np.ndarray
    P: np.ndarray                  # (T, d, d)
    gain: np.ndarray               # R̂⁻¹B̂ᵀ, (q, d)
    s: Optional[np.ndarray] = None  # (T, d)
    kind: str = "linear"

    @cached_property
    def _P_fn(self):
        return _interpolant(self.grid, self.P, self.kind)

    @cached_property
    def _s_fn(self):
        return _interpolant(self.grid, self.s, self.kind)

    def P_at(self, t: float) -> np.ndarray:
        return self._P_fn(_check_t(self.grid, t))

    def s_at(self, t: float) -> np.ndarray:
        t = _check_t(self.grid, t)
        if self.s is None:
            return np.zeros(self.P.shape[1])
        return self._s_fn(t)


@dataclass
class ControlSolution:
    grid: np.ndarray
    u: np.ndarray                           # (T, q)
    q: np.ndarray                           # (T, d)
    z_pred: Optional[np.ndarray] = None     # (T, N)
    z_full: Optional[np.ndarray] = None     # (T, N)
    segment_boundaries: List[float] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


@dataclass
class FullRun:
    times: np.ndarray
    z: np.ndarray                           # (T, N)
    metrics: dict = field(default_factory=dict)


# ──────────────────────────────────────────────────────────────────────────────
# ASSEMBLY
# ──────────────────────────────────────────────────────────────────────────────

def assemble_lq(weights: LQWeights, model: ReducedLinearModel, ssm: SSMModel,
                p_traj: ReducedTrajectory, epsilon: float, grid: np.ndarray) -> LQData:
    if not model.realified:
        raise ValueError("LQ data is assembled on the realified reduced model")
    grid = np.asarray(grid, dtype=float)
    lo, hi = p_traj.times[0], p_traj.times[-1]
    tol = 1e-9 * (hi - lo)
    if grid[0] < lo - tol or grid[-1] > hi + tol:
        raise ValueError("design grid outside the reduced trajectory span")

    Wp = eval_parameterization(ssm, p_traj.at(grid))        # (T, N)
    V = model.V_hat
    QV = weights.Q @ V
    MV = weights.M_hat @ V
    W1 = Wp[-1]
    lq = LQData(
        grid=grid,
        Q2=epsilon ** 2 * (V.T @ QV),
        R_hat=np.asarray(weights.R_hat, dtype=float),
        M2=epsilon ** 2 * (V.T @ MV),
        bQ=2.0 * epsilon * (Wp @ QV),
        bM=2.0 * epsilon * (MV.T @ W1),
        b=model.b_samples(grid).real,
        a=np.einsum("ti,ti->t", np.asarray((weights.Q @ Wp.T).T), Wp),
        aM=float(W1 @ (weights.M_hat @ W1)),
        Wp=Wp,
        epsilon=epsilon,
    )
    lq = replace(lq, Q2=0.5 * (lq.Q2 + lq.Q2.T), M2=0.5 * (lq.M2 + lq.M2.T))
    log.debug(f"[LQR] assembled d={lq.dim}, T={grid.size}, |bQ|max={np.abs(lq.bQ).max(initial=0):.3e}")
    return lq


# ──────────────────────────────────────────────────────────────────────────────
# SWEEPS
# ──────────────────────────────────────────────────────────────────────────────

def _gain(model: ReducedLinearModel, R_hat: np.ndarray) -> np.ndarray:
    return la.solve(R_hat, np.asarray(model.B_hat).T, assume_a="pos")


def solve_riccati(model: ReducedLinearModel, lq: LQData,
                  rtol: float = config.RTOL, atol: float = config.ATOL,
                  kind: str = "linear") -> RiccatiSolution:
    """Backward sweep of the Riccati equation from P(t1) = M₂ over lq.grid."""
    grid = lq.grid
    d = lq.dim
    L = np.asarray(model.Lambda_hat, dtype=float)
    B = np.asarray(model.B_hat, dtype=float)
    G = _gain(model, lq.R_hat)
    S = B @ G
    Q2 = lq.Q2

    def rhs(t, y):
        P = y.reshape(d, d)
        P = 0.5 * (P + P.T)
        dP = -P @ L - L.T @ P - Q2 + P @ S @ P
        return dP.ravel()

    def escape(t, y):
        return _ESCAPE - np.abs(y).max()
    escape.terminal = True

    t0 = time.time()
    sol = solve_ivp(rhs, (grid[-1], grid[0]), lq.M2.ravel(), method="RK45",
                    t_eval=grid[::-1], rtol=rtol, atol=atol, events=escape)
    if sol.status == 1:
        raise NumericalError("Riccati solution escapes to infinity", time=float(sol.t_events[0][0]))
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        raise NumericalError(f"Riccati sweep failed: {sol.message}", time=float(sol.t[-1]))

    P = sol.y.T[::-1].reshape(-1, d, d)
    P = 0.5 * (P + P.transpose(0, 2, 1))
    P[-1] = lq.M2
    log.info(f"[LQR] Riccati d={d} on {grid.size} nodes, nfev={sol.nfev}, {time.time() - t0:.2f}s")
    return RiccatiSolution(grid, P, G, None, kind)


def solve_compensation(model: ReducedLinearModel, lq: LQData, riccati: RiccatiSolution,
                       rtol: float = config.RTOL, atol: float = config.ATOL) -> RiccatiSolution:
    """Backward sweep for s from s(t1) = −b_M(t1)."""
    if riccati.grid.shape != lq.grid.shape or not np.allclose(riccati.grid, lq.grid):
        raise ValueError("Riccati grid does not match the LQ design grid")
    grid = lq.grid
    L = np.asarray(model.Lambda_hat, dtype=float)
    S = np.asarray(model.B_hat, dtype=float) @ riccati.gain

    def rhs(t, s):
        P = riccati.P_at(t)
        return (P @ S - L.T) @ s + lq.bQ_at(t) + 2.0 * P @ lq.b_at(t)

    sol = solve_ivp(rhs, (grid[-1], grid[0]), -lq.bM, method="RK45",
                    t_eval=grid[::-1], rtol=rtol, atol=atol)
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        raise NumericalError(f"compensation sweep failed: {sol.message}", time=float(sol.t[-1]))
    s = sol.y.T[::-1].copy()
    s[-1] = -lq.bM
    return replace(riccati, s=s)


# ──────────────────────────────────────────────────────────────────────────────
# CONTROL LAW
# ──────────────────────────────────────────────────────────────────────────────

def control_input(model: ReducedLinearModel, riccati: RiccatiSolution, q: np.ndarray, t: float) -> np.ndarray:
    """u = −R̂⁻¹B̂ᵀP(t)q + ½R̂⁻¹B̂ᵀs(t)."""
    P = riccati.P_at(t)
    return riccati.gain @ (-P @ np.asarray(q) + 0.5 * riccati.s_at(t))


def feedback_from_state(model: ReducedLinearModel, riccati: RiccatiSolution, ssm: SSMModel,
                        p_traj: ReducedTrajectory, z: np.ndarray, t: float,
                        epsilon: float, B) -> np.ndarray:
    """Physical-coordinate law: q = Û*B(z − W(p(t)))/ε, then the reduced law."""
    Wp = eval_parameterization(ssm, p_traj.at(t))
    q = reduced_initial_condition(model, B, z, Wp, epsilon)
    return control_input(model, riccati, q, t)


def closed_loop_simulate(model: ReducedLinearModel, riccati: RiccatiSolution, lq: LQData,
                         q0: np.ndarray, t0: Optional[float] = None, t1: Optional[float] = None,
                         rtol: float = config.RTOL, atol: float = config.ATOL) -> ControlSolution:
    grid = lq.grid
    t0 = grid[0] if t0 is None else t0
    t1 = grid[-1] if t1 is None else t1
    if not np.isclose(t0, grid[0]) or not np.isclose(t1, grid[-1]):
        raise ValueError("closed-loop span must match the design grid")
    L = np.asarray(model.Lambda_hat, dtype=float)
    B = np.asarray(model.B_hat, dtype=float)

    def rhs(t, q):
        return L @ q + B @ control_input(model, riccati, q, t) + lq.b_at(t)

    sol = solve_ivp(rhs, (grid[0], grid[-1]), np.asarray(q0, dtype=float), method="RK45",
                    t_eval=grid, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise NumericalError(f"closed-loop integration failed: {sol.message}", time=float(sol.t[-1]))
    q = sol.y.T
    s = riccati.s if riccati.s is not None else np.zeros_like(q)
    u = np.einsum("ij,tj->ti", riccati.gain, -np.einsum("tij,tj->ti", riccati.P, q) + 0.5 * s)
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite control input")

    z_pred = None
    if lq.Wp is not None:
        z_pred = lq.Wp + lq.epsilon * q @ np.asarray(model.V_hat).T
    out = ControlSolution(grid, u, q, z_pred, segment_boundaries=[float(grid[0]), float(grid[-1])])
    jt, j = objective(lq, out)
    out.metrics.update({"objective_reduced": jt, "objective_value": j})
    return out


def objective(lq: LQData, sol: ControlSolution) -> Tuple[float, float]:
    """(J̃, J): trapezoidal quadrature; J adds back the a(t) terms."""
    q, u, grid = sol.q, sol.u, lq.grid
    running = (
        np.einsum("ti,ti->t", lq.bQ, q)
        + np.einsum("ti,ij,tj->t", q, lq.Q2, q)
        + np.einsum("ti,ij,tj->t", u, lq.R_hat, u)
    )
    terminal = lq.bM @ q[-1] + q[-1] @ lq.M2 @ q[-1]
    jt = float(trapezoid(running, grid) + terminal)
    return jt, float(jt + trapezoid(lq.a, grid) + lq.aM)


# ──────────────────────────────────────────────────────────────────────────────
# FULL MODEL
# ──────────────────────────────────────────────────────────────────────────────

USignal = Union[Tuple[np.ndarray, np.ndarray], Callable[[float], np.ndarray], None]


def _mass_solver(B):
    if sp.issparse(B):
        lu = spla.splu(sp.csc_array(B))
        return lu.solve
    lu = la.lu_factor(np.asarray(B, dtype=float))
    return lambda rhs: la.lu_solve(lu, rhs)


def validate_full(full: FirstOrderSystem, u_signal: USignal, z0: np.ndarray, t0: float, t1: float,
                  grid: Optional[np.ndarray] = None,
                  feedback: Optional[Callable[[float, np.ndarray], np.ndarray]] = None,
                  z_pred: Optional[np.ndarray] = None,
                  rtol: float = config.RTOL, atol: float = config.ATOL) -> FullRun:
    """
    B ż = Az + F(z) + ε(F_ext(t) + B_ext u). ``u_signal`` is replayed open loop
    (samples are interpolated linearly); ``feedback(t, z)`` closes the loop.
    """
    if t1 <= t0:
        raise ValueError("t1 must be greater than t0")
    grid = np.linspace(t0, t1, config.GRID_NODES) if grid is None else np.asarray(grid, dtype=float)
    solve_B = _mass_solver(full.B)
    eps = full.epsilon
    q = full.Bext.shape[1]

    if isinstance(u_signal, tuple):
        ug, us = u_signal
        if ug[0] > t0 + 1e-9 * (t1 - t0) or ug[-1] < t1 - 1e-9 * (t1 - t0):
            raise ValueError("control samples do not cover [t0, t1]")
        u_fn = _interpolant(np.asarray(ug), np.asarray(us))
        u_of = lambda t, z: u_fn(np.clip(t, ug[0], ug[-1]))
    elif callable(u_signal):
        u_of = lambda t, z: u_signal(t)
    else:
        u_of = lambda t, z: np.zeros(q)
    if feedback is not None:
        u_of = feedback

    def rhs(t, z):
        force = full.A @ z + eval_polynomial(full.F, z)
        force = force + eps * (full.Fext.evaluate(t) + full.Bext @ u_of(t, z))
        return solve_B(force)

    t_start = time.time()
    sol = solve_ivp(rhs, (t0, t1), np.asarray(z0, dtype=float), method="RK45",
                    t_eval=grid, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise NumericalError(f"full-model integration failed: {sol.message}", time=float(sol.t[-1]))
    z = sol.y.T
    n = full.n
    metrics = {"peak_amplitude": float(np.abs(z[:, :n]).max())}
    if z_pred is not None:
        metrics["rms_prediction_error"] = float(np.sqrt(np.mean(np.sum((z - z_pred) ** 2, axis=1))))
    log.info(f"[RUN] full model [{t0:g}, {t1:g}] N={full.N}, nfev={sol.nfev}, {time.time() - t_start:.1f}s")
    return FullRun(grid, z, metrics)


# ──────────────────────────────────────────────────────────────────────────────
# RECEDING HORIZON
# ──────────────────────────────────────────────────────────────────────────────

def receding_horizon(full: FirstOrderSystem, ssm: SSMModel, model: ReducedLinearModel,
                     weights: LQWeights, z0: Optional[np.ndarray], boundaries: Sequence[float],
                     epsilon: float, p0: Optional[np.ndarray] = None,
                     nodes: Optional[Callable[[float, float], int]] = None,
                     validate: bool = True, seed_from_full: bool = True,
                     feedback: bool = False) -> ControlSolution:
    """
    ``boundaries`` = [t0, …, t1]. Each segment re-anchors on the state reached
    by the previous one: the full-model state in validation mode, the
    predicted state otherwise. A known p0 is used as-is on the first segment.
    """
    pts = [float(b) for b in boundaries]
    if len(pts) < 2 or any(b <= a for a, b in zip(pts, pts[1:])):
        raise ValueError("boundaries must be strictly increasing and span [t0, t1]")
    if z0 is None:
        if p0 is None:
            raise ValueError("either z0 or p0 is required")
        z0 = eval_parameterization(ssm, p0)
    z_seed = np.asarray(z0, dtype=float)
    use_full = validate and seed_from_full

    parts: List[ControlSolution] = []
    for seg, (ta, tb) in enumerate(zip(pts, pts[1:])):
        t_seg = time.time()
        p_start = p0 if (seg == 0 and p0 is not None) else project_to_master(ssm.master, full.B, z_seed)
        n_nodes = nodes(ta, tb) if nodes else config.GRID_NODES
        p_traj = simulate_reduced(ssm, p_start, ta, tb, n_nodes)
        lq = assemble_lq(weights, model, ssm, p_traj, epsilon, p_traj.times)
        ric = solve_compensation(model, lq, solve_riccati(model, lq))
        q0 = reduced_initial_condition(model, full.B, z_seed, lq.Wp[0], epsilon)
        part = closed_loop_simulate(model, ric, lq, q0)

        if validate:
            fb = None
            if feedback:
                fb = lambda t, z, _r=ric, _p=p_traj: feedback_from_state(model, _r, ssm, _p, z, t, epsilon, full.B)
            run = validate_full(full, (lq.grid, part.u), z_seed, ta, tb, lq.grid, feedback=fb, z_pred=part.z_pred)
            part.z_full = run.z
            part.metrics.update(run.metrics)
        z_seed = part.z_full[-1] if use_full else part.z_pred[-1]
        correction = np.abs(epsilon * part.q @ np.asarray(model.V_hat).T).max()
        part.metrics["correction_ratio"] = float(correction / max(np.abs(lq.Wp).max(), 1e-300))
        log.info(f"[RUN] segment {seg + 1} [{ta:g}, {tb:g}] J={part.metrics['objective_value']:.6g} "
                 f"({time.time() - t_seg:.1f}s)")
        parts.append(part)

    return _concat(parts, pts)


def _concat(parts: List[ControlSolution], pts: List[float]) -> ControlSolution:
    def cat(attr):
        vals = [getattr(p, attr) for p in parts]
        return None if any(v is None for v in vals) else np.concatenate(vals)

    out = ControlSolution(
        grid=np.concatenate([p.grid for p in parts]),
        u=cat("u"), q=cat("q"), z_pred=cat("z_pred"), z_full=cat("z_full"),
        segment_boundaries=pts,
    )
    out.metrics = {
        "objective_value": float(sum(p.metrics["objective_value"] for p in parts)),
        "objective_reduced": float(sum(p.metrics["objective_reduced"] for p in parts)),
        "correction_ratio": float(max(p.metrics["correction_ratio"] for p in parts)),
        "segments": [dict(p.metrics) for p in parts],
    }
    ref = out.z_full if out.z_full is not None else out.z_pred
    if ref is not None:
        n = ref.shape[1] // 2
        out.metrics["peak_controlled_amplitude"] = float(np.abs(ref[:, :n]).max())
    if out.z_full is not None and out.z_pred is not None:
        diff = out.z_full - out.z_pred
        out.metrics["rms_prediction_error"] = float(np.sqrt(np.mean(np.sum(diff ** 2, axis=1))))
    return out
