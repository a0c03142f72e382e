# ssmc/ssm.py
"""
Autonomous spectral submanifold z = W(p), ṗ = R(p) by the parameterization
method in normal-form style.

For every multi-index k with |k| = κ ≥ 2 the invariance equation
B·DW·R = A·W + F(W) gives

    (A − (k·λ)B) W_k = B V_E R_k + B C_k − [F∘W]_k

where C_k collects the products of lower-order W and R terms. R_k is kept
only for resonant (j, k); those are found from the bordered system with the
condition U_J* B W_k = 0.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from ssmc import config
from ssmc.errors import InvariantError, ModelError, NumericalError
from ssmc.mechmodel import FirstOrderSystem, eval_polynomial
from ssmc.series import MultiIndex, MultiIndexSet, compose_polynomial
from ssmc.spectral import EigenPair, MasterSubspace, ResonanceSet, detect_inner_resonances, stack_pairs

log = logging.getLogger(__name__)

_SINGULAR_TOL = 1e-8
_REAL_TOL = 1e-9


@dataclass(frozen=True)
class SSMModel:
    order: int
    master: MasterSubspace
    mis: MultiIndexSet
    W: np.ndarray          # (len(mis), N)
    R: np.ndarray          # (len(mis), 2m)
    resonances: ResonanceSet

    @property
    def m(self) -> int:
        return self.master.m

    @property
    def N(self) -> int:
        return self.W.shape[1]

    @property
    def W_coeffs(self) -> Dict[MultiIndex, np.ndarray]:
        return {k: self.W[r] for r, k in enumerate(self.mis.indices)}

    @property
    def R_coeffs(self) -> Dict[MultiIndex, np.ndarray]:
        return {k: self.R[r] for r, k in enumerate(self.mis.indices) if np.any(self.R[r])}

    def is_linear(self) -> bool:
        nonlin = self.mis.degrees >= 2
        return not np.any(self.W[nonlin]) and not np.any(self.R[nonlin])


@dataclass
class ReducedTrajectory:
    times: np.ndarray
    p: np.ndarray  # (T, 2m), conjugate-adjacent columns

    def __post_init__(self):
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(self.times, self.p, axis=0)

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        lo, hi = self.times[0], self.times[-1]
        span = hi - lo
        if np.any(t < lo - 1e-9 * span) or np.any(t > hi + 1e-9 * span):
            raise ValueError(f"t outside trajectory span [{lo}, {hi}]")
        return self._spline(np.clip(t, lo, hi))


# ──────────────────────────────────────────────────────────────────────────────
# COHOMOLOGICAL SOLVES
# ──────────────────────────────────────────────────────────────────────────────

def _solve_dense(fo: FirstOrderSystem, s: complex, h: np.ndarray,
                 BV: np.ndarray, UB: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    A = fo.A.toarray() if sp.issparse(fo.A) else fo.A
    B = fo.B.toarray() if sp.issparse(fo.B) else fo.B
    N, r = A.shape[0], BV.shape[1]
    L = np.zeros((N + r, N + r), dtype=complex)
    L[:N, :N] = A - s * B
    L[:N, N:] = -BV
    L[N:, :N] = UB
    rhs = np.concatenate([h, np.zeros(r, dtype=complex)])
    x = la.lu_solve(la.lu_factor(L, check_finite=False), rhs, check_finite=False)
    return x[:N], x[N:]


def _solve_sparse(fo: FirstOrderSystem, s: complex, h: np.ndarray,
                  BV: np.ndarray, UB: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    N, r = fo.N, BV.shape[1]
    L = sp.csc_array(fo.A - s * fo.B, dtype=complex)
    if r:
        L = sp.block_array([[L, sp.csc_array(-BV)], [sp.csc_array(UB), None]], format="csc")
    rhs = np.concatenate([h, np.zeros(r, dtype=complex)])
    x = spla.splu(L).solve(rhs)
    return x[:N], x[N:]


def _solve_term(
    fo: FirstOrderSystem, master: MasterSubspace, k: MultiIndex, h: np.ndarray, targets: List[int]
) -> Tuple[np.ndarray, np.ndarray]:
    lam = master.lambda_E
    s = complex(np.dot(k, lam))
    if not targets:
        gap = np.min(np.abs(s - lam) / np.abs(lam))
        if gap < _SINGULAR_TOL:
            raise NumericalError(
                f"near-singular solve for non-resonant k={k} (k·λ={s:.6g}); "
                f"resonance tolerance is too tight"
            )
    J = list(targets)
    BV = fo.B @ master.V_E[:, J] if J else np.zeros((fo.N, 0), dtype=complex)
    UB = (master.U_E[:, J].conj().T @ fo.B) if J else np.zeros((0, fo.N), dtype=complex)
    if sp.issparse(UB):
        UB = UB.toarray()
    solver = _solve_sparse if fo.is_sparse else _solve_dense
    Wk, RJ = solver(fo, s, h, np.asarray(BV), np.asarray(UB))
    if not (np.all(np.isfinite(Wk)) and np.all(np.isfinite(RJ))):
        raise NumericalError(f"singular cohomological equation at k={k}")
    Rk = np.zeros(master.dim, dtype=complex)
    Rk[J] = RJ
    return Wk, Rk


def _has_internal_resonance(lambda_E: np.ndarray, rel_tol: float) -> bool:
    res = detect_inner_resonances(lambda_E, 3, rel_tol)
    for j, k in res.entries:
        pair_j = j // 2
        if any(kk and i // 2 != pair_j for i, kk in enumerate(k)):
            return True
    return False


def default_order(master: MasterSubspace, rel_tol: float = config.DEFAULT_RES_TOL) -> int:
    """3 for a non-resonant master subspace, 5 with internal resonance."""
    return 5 if master.m > 1 and _has_internal_resonance(master.lambda_E, rel_tol) else 3


def compute_autonomous_ssm(
    fo: FirstOrderSystem,
    master: MasterSubspace,
    order: int,
    res_tol: float = config.DEFAULT_RES_TOL,
    resonance_max_order: Optional[int] = None,
    workers: int = config.MAX_WORKERS,
) -> SSMModel:
    if order < 1:
        raise ValueError("order must be >= 1")
    t_start = time.time()
    dim, N = master.dim, fo.N
    mis = MultiIndexSet(dim, order)
    lam = master.lambda_E
    res = detect_inner_resonances(lam, max(resonance_max_order or order, 2), res_tol)
    res_by_k: Dict[MultiIndex, List[int]] = {}
    for j, k in res.entries:
        res_by_k.setdefault(k, []).append(j)

    W = mis.zeros(N)
    R = mis.zeros(dim)
    for j in range(dim):
        W[mis.unit(j)] = master.V_E[:, j]
        R[mis.unit(j), j] = lam[j]

    perm = master.conj_perm()
    swap = mis.swap_rows(perm)

    for deg in range(2, order + 1):
        t_deg = time.time()
        Fk = compose_polynomial(fo.F, mis, W, degree=deg)
        R_hi = mis.truncate(R, deg - 1)
        R_hi[mis.rows(1)] = 0
        C = mis.zeros(N)
        for j in range(dim):
            dW = mis.derivative(W, j)
            C += mis.mul(dW, R_hi[:, j, None], degree=deg)

        rows = mis.rows(deg)
        reps = [r for r in rows if swap[r] >= r]
        results: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

        def task(r: int):
            k = mis.indices[r]
            h = fo.B @ C[r] - Fk[r]
            return _solve_term(fo, master, k, h, res_by_k.get(k, []))

        if workers > 1 and len(reps) > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                futures = {executor.submit(task, r): r for r in reps}
                for fut in as_completed(futures):
                    results[futures[fut]] = fut.result()
        else:
            for r in reps:
                results[r] = task(r)

        for r in reps:
            Wk, Rk = results[r]
            if swap[r] == r:
                Wk = Wk.real.astype(complex)
            W[r] = Wk
            R[r] = Rk
            if swap[r] != r:
                W[swap[r]] = np.conj(Wk)
                R[swap[r]] = np.conj(Rk)[perm]
        log.info(f"[SSM] degree {deg}: {len(rows)} terms ({len(reps)} solved) in {time.time() - t_deg:.2f}s")

    log.info(f"[SSM] order {order}, m={master.m}, {len(res) - dim} resonant terms, {time.time() - t_start:.2f}s")
    return SSMModel(order, master, mis, W, R, res)


# ──────────────────────────────────────────────────────────────────────────────
# EVALUATION
# ──────────────────────────────────────────────────────────────────────────────

def _check_conjugate(p: np.ndarray, perm: np.ndarray) -> None:
    scale = 1.0 + np.abs(p).max(initial=0.0)
    if np.abs(p[..., perm] - np.conj(p)).max(initial=0.0) > 1e-12 * scale:
        raise ValueError("p is not conjugate-symmetric")


def eval_parameterization(ssm: SSMModel, p: np.ndarray) -> np.ndarray:
    """Real z = Σ W_k p^k. p may be (2m,) or a (T, 2m) batch."""
    p = np.asarray(p, dtype=complex)
    _check_conjugate(p, ssm.master.conj_perm())
    z = ssm.mis.evaluate(ssm.W, p)
    re = np.linalg.norm(z.real)
    if np.linalg.norm(z.imag) > _REAL_TOL * max(re, 1e-300) and np.linalg.norm(z.imag) > 1e-14:
        raise InvariantError(f"parameterization not real: |Im z| = {np.linalg.norm(z.imag):.3e}")
    return z.real


def eval_reduced_field(ssm: SSMModel, p: np.ndarray) -> np.ndarray:
    return ssm.mis.evaluate(ssm.R, np.asarray(p, dtype=complex))


def project_to_master(master: MasterSubspace, B, z0: np.ndarray) -> np.ndarray:
    """p0 = U_E* B z0, symmetrized so paired entries are exact conjugates."""
    z0 = np.asarray(z0)
    if z0.shape != (master.V_E.shape[0],):
        raise ValueError("z0 has wrong length")
    p = master.U_E.conj().T @ (B @ z0)
    perm = master.conj_perm()
    return 0.5 * (p + np.conj(p[perm]))


def _full_from_reps(y: np.ndarray) -> np.ndarray:
    p = np.empty(2 * y.shape[0], dtype=complex)
    p[0::2] = y
    p[1::2] = np.conj(y)
    return p


def simulate_reduced(
    ssm: SSMModel,
    p0: np.ndarray,
    t0: float,
    t1: float,
    n_nodes: Optional[int] = None,
    rtol: float = config.RTOL,
    atol: float = config.ATOL,
) -> ReducedTrajectory:
    """ṗ = R(p); only the representative coordinates are integrated."""
    if t1 <= t0:
        raise ValueError("t1 must be greater than t0")
    p0 = np.asarray(p0, dtype=complex)
    _check_conjugate(p0, ssm.master.conj_perm())
    grid = np.linspace(t0, t1, n_nodes or config.GRID_NODES)

    def rhs(t, y):
        return eval_reduced_field(ssm, _full_from_reps(y))[0::2]

    sol = solve_ivp(rhs, (t0, t1), p0[0::2], method="RK45", t_eval=grid, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise NumericalError(f"reduced integration failed: {sol.message}", time=float(sol.t[-1]))
    p = np.empty((grid.size, ssm.master.dim), dtype=complex)
    p[:, 0::2] = sol.y.T
    p[:, 1::2] = np.conj(sol.y.T)
    log.debug(f"[SSM] reduced run [{t0}, {t1}] nfev={sol.nfev}")
    return ReducedTrajectory(grid, p)


def invariance_residual(ssm: SSMModel, fo: FirstOrderSystem,
                        sample_amplitudes: Sequence[float]) -> List[Tuple[float, float]]:
    """‖B·DW(p)·R(p) − A·W(p) − F(W(p))‖ at p = (a, a, …)."""
    mis = ssm.mis
    out = []
    for a in sample_amplitudes:
        p = np.full(ssm.master.dim, a, dtype=complex)
        mono = mis.monomials(p)
        Wp = mono @ ssm.W
        Rp = mono @ ssm.R
        DWR = np.zeros(ssm.N, dtype=complex)
        for j in range(ssm.master.dim):
            DWj = ssm.W[mis.unit(j)] + mono @ mis.derivative(ssm.W, j)
            DWR += DWj * Rp[j]
        r = fo.B @ DWR - fo.A @ Wp - eval_polynomial(fo.F, Wp)
        out.append((float(a), float(np.linalg.norm(r))))
    return out


def residual_slope(table: Sequence[Tuple[float, float]]) -> float:
    """Least-squares log-log slope of residual vs amplitude."""
    a = np.log([t[0] for t in table])
    r = np.log([max(t[1], 1e-300) for t in table])
    return float(np.polyfit(a, r, 1)[0])


# ──────────────────────────────────────────────────────────────────────────────
# EXPORT
# ──────────────────────────────────────────────────────────────────────────────

def _cplx(x: np.ndarray) -> List[List[float]]:
    return [[float(v) for v in np.real(x)], [float(v) for v in np.imag(x)]]


def _uncplx(pair) -> np.ndarray:
    return np.asarray(pair[0], dtype=float) + 1j * np.asarray(pair[1], dtype=float)


def ssm_to_dict(ssm: SSMModel) -> dict:
    return {
        "order": ssm.order,
        "m": ssm.m,
        "N": ssm.N,
        "lambda_E": _cplx(ssm.master.lambda_E),
        "pairs": [
            {"index": p.index, "lam": [p.lam.real, p.lam.imag], "v": _cplx(p.v), "u": _cplx(p.u)}
            for p in ssm.master.pairs
        ],
        "resonances": [[j, list(k)] for j, k in ssm.resonances.entries],
        "terms": [
            {"k": list(k), "W": _cplx(ssm.W[r]), "R": _cplx(ssm.R[r])}
            for r, k in enumerate(ssm.mis.indices)
        ],
    }


def ssm_from_dict(raw: dict) -> SSMModel:
    try:
        pairs = tuple(
            EigenPair(complex(p["lam"][0], p["lam"][1]), _uncplx(p["v"]), _uncplx(p["u"]), int(p["index"]))
            for p in raw["pairs"]
        )
        lam, V, U = stack_pairs(pairs)
        master = MasterSubspace(pairs, V, U, lam)
        mis = MultiIndexSet(master.dim, int(raw["order"]))
        W = mis.zeros(int(raw["N"]))
        R = mis.zeros(master.dim)
        for term in raw["terms"]:
            r = mis.position[tuple(term["k"])]
            W[r] = _uncplx(term["W"])
            R[r] = _uncplx(term["R"])
        res = ResonanceSet(tuple((int(j), tuple(k)) for j, k in raw["resonances"]))
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise ModelError(f"malformed SSM file: {e}")
    return SSMModel(int(raw["order"]), master, mis, W, R, res)


def save_ssm(ssm: SSMModel, path: str, extra: Optional[dict] = None) -> None:
    data = ssm_to_dict(ssm)
    if extra:
        data.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
    log.info(f"[SSM] saved → {path}")


def load_ssm(path: str) -> Tuple[SSMModel, dict]:
    """Returns the model and the raw document (for hash checks)."""
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return ssm_from_dict(raw), raw


def trajectory_frame(traj: ReducedTrajectory) -> pd.DataFrame:
    data = {"t": traj.times}
    for i in range(traj.p.shape[1] // 2):
        data[f"re_p{i + 1}"] = traj.p[:, 2 * i].real
        data[f"im_p{i + 1}"] = traj.p[:, 2 * i].imag
    return pd.DataFrame(data)
