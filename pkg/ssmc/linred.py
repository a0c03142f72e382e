# ssmc/linred.py
"""
Linear correction basis V̂: modal ranking by DCgain / MHSV, greedy selection,
and the reduced linear controlled dynamics

    q̇ = Λ̂ q + B̂ u + b(t),   B̂ = Û* B_ext,   b(t) = Û* F_ext(t)

Per-pair data: Λ̃ = diag(λ, λ̄), B̃ = Ũ* B_ext, C̃ = C Ṽ. Gramians solve
Λ̃W + WΛ̃* + B̃B̃* = 0 and Λ̃*W + WΛ̃ + C̃*C̃ = 0; the MHSV is the larger square
root of the singular values of W_C·W_O.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as la

from ssmc import config
from ssmc.errors import InvariantError, NumericalError
from ssmc.mechmodel import ForcingSignal
from ssmc.spectral import EigenPair, solve_lyapunov_2x2, stack_pairs

log = logging.getLogger(__name__)

Metric = Literal["dcgain", "mhsv"]


@dataclass(frozen=True)
class ModalRanking:
    pair_index: int
    frequency: float  # Hz
    dcgain: float
    mhsv: float
    normalized_dcgain: float
    normalized_mhsv: float
    stable: bool

    def normalized(self, metric: Metric) -> float:
        return self.normalized_dcgain if metric == "dcgain" else self.normalized_mhsv


@dataclass(frozen=True)
class ReducedLinearModel:
    pair_indices: Tuple[int, ...]
    lam: np.ndarray          # selected eigenvalues, conjugate-adjacent
    Lambda_hat: np.ndarray   # diag(lam), or real block form after realify
    B_hat: np.ndarray
    U_hat: np.ndarray
    V_hat: np.ndarray
    C_obs: np.ndarray
    forcing: ForcingSignal   # b(t) = Û* F_ext(t)
    realified: bool = False

    @property
    def l(self) -> int:
        return len(self.pair_indices)

    @property
    def dim(self) -> int:
        return self.Lambda_hat.shape[0]

    @property
    def q(self) -> int:
        return self.B_hat.shape[1]

    def b(self, t: float) -> np.ndarray:
        return self.forcing.evaluate(t)

    def b_samples(self, times: np.ndarray) -> np.ndarray:
        return self.forcing.sample(times)


# ──────────────────────────────────────────────────────────────────────────────
# OBSERVATION
# ──────────────────────────────────────────────────────────────────────────────

def observation_matrix(n: int, dofs: Sequence[int]) -> np.ndarray:
    """Rows picking the displacements of 1-based DOFs out of z = (x, ẋ)."""
    C = np.zeros((len(dofs), 2 * n))
    for r, d in enumerate(dofs):
        if not 1 <= d <= n:
            raise ValueError(f"observed DOF {d} outside [1, {n}]")
        C[r, d - 1] = 1.0
    return C


def actuated_dofs(D: np.ndarray) -> List[int]:
    """1-based DOF each actuator column acts on most strongly."""
    return [int(np.argmax(np.abs(D[:, j]))) + 1 for j in range(D.shape[1])]


# ──────────────────────────────────────────────────────────────────────────────
# RANKING
# ──────────────────────────────────────────────────────────────────────────────

def _pair_dcgain(pair: EigenPair, Bext: np.ndarray, C_obs: np.ndarray) -> float:
    if pair.lam == 0:
        raise ValueError(f"pair {pair.index}: λ = 0, DCgain undefined")
    lam, V, U = pair.columns()
    G0 = -(C_obs @ V) @ np.diag(1.0 / lam) @ (U.conj().T @ Bext)
    return float(np.linalg.norm(G0.real, 2))


def _pair_mhsv(pair: EigenPair, Bext: np.ndarray, C_obs: np.ndarray) -> float:
    lam, V, U = pair.columns()
    Bt = U.conj().T @ Bext
    Ct = C_obs @ V
    Wc = solve_lyapunov_2x2(lam, Bt @ Bt.conj().T, hermitian=True)
    Wo = solve_lyapunov_2x2(np.conj(lam), Ct.conj().T @ Ct, hermitian=True)
    sv = la.svdvals(Wc @ Wo)
    return float(np.sqrt(sv.max()))


def _per_pair(fn, pairs: Sequence[EigenPair], Bext, C_obs, workers: int) -> List[float]:
    out = [0.0] * len(pairs)
    stable = [i for i, p in enumerate(pairs) if p.stable]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = {i: executor.submit(fn, pairs[i], Bext, C_obs) for i in stable}
        for i, fut in futures.items():
            out[i] = fut.result()
    return out


def _normalize(values: Sequence[float], pairs: Sequence[EigenPair]) -> List[float]:
    total = sum(v for v, p in zip(values, pairs) if p.stable)
    if total <= 0:
        return [0.0] * len(values)
    return [v / total if p.stable else 0.0 for v, p in zip(values, pairs)]


def _check_unstable(pairs: Sequence[EigenPair], force_include: Optional[Iterable[int]]) -> None:
    if force_include is None:
        return
    forced = set(force_include)
    missing = [p.index for p in pairs if not p.stable and p.index not in forced]
    if missing:
        raise ValueError(f"unstable pairs {missing} must be force-included in the basis")


def dcgains(pairs: Sequence[EigenPair], Bext: np.ndarray, C_obs: np.ndarray,
            m_hat: Optional[int] = None, force_include: Optional[Iterable[int]] = None,
            workers: int = config.MAX_WORKERS) -> List[ModalRanking]:
    """DCgain_i = ‖Ĝ_i(0)‖₂ over the first m̂ pairs; unstable pairs score 0."""
    pairs = list(pairs)[: m_hat or len(pairs)]
    _check_unstable(pairs, force_include)
    vals = _per_pair(_pair_dcgain, pairs, Bext, C_obs, workers)
    norm = _normalize(vals, pairs)
    return [
        ModalRanking(p.index, abs(p.lam.imag) / (2 * np.pi), v, 0.0, nv, 0.0, p.stable)
        for p, v, nv in zip(pairs, vals, norm)
    ]


def mhsvs(pairs: Sequence[EigenPair], Bext: np.ndarray, C_obs: np.ndarray,
          m_hat: Optional[int] = None, force_include: Optional[Iterable[int]] = None,
          workers: int = config.MAX_WORKERS) -> List[ModalRanking]:
    pairs = list(pairs)[: m_hat or len(pairs)]
    _check_unstable(pairs, force_include)
    vals = _per_pair(_pair_mhsv, pairs, Bext, C_obs, workers)
    norm = _normalize(vals, pairs)
    return [
        ModalRanking(p.index, abs(p.lam.imag) / (2 * np.pi), 0.0, v, 0.0, nv, p.stable)
        for p, v, nv in zip(pairs, vals, norm)
    ]


def rank_modes(pairs: Sequence[EigenPair], Bext: np.ndarray, C_obs: np.ndarray,
               m_hat: Optional[int] = None) -> List[ModalRanking]:
    """Both metrics merged into one record per pair."""
    dc = dcgains(pairs, Bext, C_obs, m_hat)
    hs = mhsvs(pairs, Bext, C_obs, m_hat)
    merged = [
        replace(a, mhsv=b.mhsv, normalized_mhsv=b.normalized_mhsv) for a, b in zip(dc, hs)
    ]
    log.info(f"[LINRED] ranked {len(merged)} pairs "
             f"({sum(not r.stable for r in merged)} unstable)")
    return merged


def select_basis(rankings: Sequence[ModalRanking], metric: Metric, threshold: float,
                 forced_indices: Sequence[int] = ()) -> List[int]:
    """
    Forced and unstable pairs first, then stable pairs by descending
    normalized metric (ties by pair index) until the cumulative share
    reaches ``threshold``. Returns sorted 1-based pair numbers.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    known = {r.pair_index for r in rankings}
    for i in forced_indices:
        if i not in known:
            raise ValueError(f"forced pair {i} not among ranked pairs")
    selected = set(forced_indices) | {r.pair_index for r in rankings if not r.stable}
    share = {r.pair_index: r.normalized(metric) for r in rankings}
    total = sum(share[i] for i in selected)

    candidates = sorted(
        (r for r in rankings if r.stable and r.pair_index not in selected),
        key=lambda r: (-r.normalized(metric), r.pair_index),
    )
    for r in candidates:
        if total >= threshold - 1e-12:
            break
        selected.add(r.pair_index)
        total += share[r.pair_index]
    if total < threshold - 1e-12:
        raise ValueError(f"threshold {threshold} unreachable (max {total:.4f} with all pairs)")
    log.info(f"[LINRED] {metric} ≥ {threshold}: pairs {sorted(selected)} (share {total:.4f})")
    return sorted(selected)


def ranking_frame(rankings: Sequence[ModalRanking], selection: Sequence[int] = ()) -> pd.DataFrame:
    chosen = set(selection)
    rows = [{
        "pair_index": r.pair_index,
        "frequency": r.frequency,
        "dcgain": r.dcgain,
        "mhsv": r.mhsv,
        "normalized_dcgain": r.normalized_dcgain,
        "normalized_mhsv": r.normalized_mhsv,
        "selected": r.pair_index in chosen,
    } for r in rankings]
    return pd.DataFrame(rows, columns=[
        "pair_index", "frequency", "dcgain", "mhsv",
        "normalized_dcgain", "normalized_mhsv", "selected",
    ])


# ──────────────────────────────────────────────────────────────────────────────
# REDUCED MODEL
# ──────────────────────────────────────────────────────────────────────────────

def build_reduced_linear(pairs: Sequence[EigenPair], selection: Sequence[int], Bext: np.ndarray,
                         Fext: ForcingSignal, C_obs: np.ndarray, B=None) -> ReducedLinearModel:
    if not selection:
        raise ValueError("selection must not be empty")
    by_index = {p.index: p for p in pairs}
    chosen = [by_index[i] for i in sorted(selection)]
    lam, V, U = stack_pairs(chosen)
    if B is not None:
        err = np.abs(U.conj().T @ (B @ V) - np.eye(lam.size)).max()
        if err > 1e-10:
            raise NumericalError(f"reduced basis not biorthonormal (max error {err:.2e})")
    Uh = U.conj().T
    return ReducedLinearModel(
        pair_indices=tuple(p.index for p in chosen),
        lam=lam,
        Lambda_hat=np.diag(lam),
        B_hat=Uh @ Bext,
        U_hat=U,
        V_hat=V,
        C_obs=np.asarray(C_obs, dtype=float),
        forcing=Fext.project(Uh),
    )


def _realify_transform(lam: np.ndarray) -> np.ndarray:
    """Block-diagonal unitary T with q = T q_r, q_r = (√2 Re q, √2 Im q) per pair."""
    n = lam.size
    T = np.zeros((n, n), dtype=complex)
    S = np.array([[1.0, 1.0j], [1.0, -1.0j]]) / np.sqrt(2.0)
    i = 0
    while i < n:
        if lam[i].imag == 0.0:
            T[i, i] = 1.0
            i += 1
        else:
            T[i:i + 2, i:i + 2] = S
            i += 2
    return T


def _real(x: np.ndarray, what: str) -> np.ndarray:
    scale = max(np.abs(x).max(initial=0.0), 1.0)
    if np.abs(x.imag).max(initial=0.0) > 1e-10 * scale:
        raise InvariantError(f"realified {what} has an imaginary part")
    return np.ascontiguousarray(x.real)


def realify(model: ReducedLinearModel) -> ReducedLinearModel:
    """
    Real coordinates per pair. Λ̂ becomes [[Re λ, −Im λ], [Im λ, Re λ]];
    V̂q and the projection Û*B z are unchanged.
    """
    if model.realified:
        return model
    T = _realify_transform(model.lam)
    Th = T.conj().T
    chans = tuple(
        replace(ch, distribution=_real(Th @ ch.distribution, "forcing"))
        for ch in model.forcing.channels
    )
    return replace(
        model,
        Lambda_hat=_real(Th @ model.Lambda_hat @ T, "Λ̂"),
        B_hat=_real(Th @ model.B_hat, "B̂"),
        U_hat=_real(model.U_hat @ T, "Û"),
        V_hat=_real(model.V_hat @ T, "V̂"),
        forcing=ForcingSignal(model.forcing.dim, chans),
        realified=True,
    )


def reduced_initial_condition(model: ReducedLinearModel, B, z0: np.ndarray,
                              W_p0: np.ndarray, epsilon: float) -> np.ndarray:
    """q0 = Û* B (z0 − W(p0)) / ε."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    q0 = model.U_hat.conj().T @ (B @ (np.asarray(z0) - np.asarray(W_p0))) / epsilon
    return q0.real if model.realified else q0


# ──────────────────────────────────────────────────────────────────────────────
# H∞ TRUNCATION BOUND
# ──────────────────────────────────────────────────────────────────────────────

def _modal_response(pairs: Sequence[EigenPair], Bext, C_obs, s: complex) -> np.ndarray:
    G = np.zeros((C_obs.shape[0], Bext.shape[1]), dtype=complex)
    for p in pairs:
        lam, V, U = p.columns()
        G += (C_obs @ V) @ np.diag(1.0 / (s - lam)) @ (U.conj().T @ Bext)
    return G


def hinf_bound_check(pairs: Sequence[EigenPair], selection: Sequence[int], Bext: np.ndarray,
                     C_obs: np.ndarray, freq_grid: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """
    max_ω ‖G(iω) − Ĝ(iω)‖₂ against 4·Σσ^M over the truncated pairs.
    G is the modal sum over all given pairs. Raises InvariantError if violated.
    """
    chosen = set(selection)
    dropped = [p for p in pairs if p.index not in chosen]
    for p in dropped:
        if not p.stable:
            raise ValueError(f"truncated pair {p.index} is unstable")
    if freq_grid is None:
        wmax = max(abs(p.lam) for p in pairs)
        freq_grid = np.logspace(np.log10(wmax) - 4, np.log10(wmax) + 2, 200)
    freq_grid = np.concatenate([[0.0], np.asarray(freq_grid, dtype=float)])

    gap = 0.0
    for w in freq_grid:
        G = _modal_response(dropped, Bext, C_obs, 1j * w)
        gap = max(gap, float(np.linalg.norm(G, 2)))
    bound = 4.0 * sum(_pair_mhsv(p, Bext, C_obs) for p in dropped)
    log.info(f"[LINRED] H∞ gap {gap:.4e} vs bound {bound:.4e}")
    if gap > bound * (1 + 1e-9) + 1e-14:
        raise InvariantError(f"H∞ truncation bound violated: gap {gap:.4e} > {bound:.4e}")
    return gap, bound
