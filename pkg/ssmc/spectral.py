# ssmc/spectral.py
"""
Generalized eigenproblem A v = λ B v of the lifted linear part, with left
eigenvectors u*A = λ u*B.

Normalization: the displacement block v[:n] of each right eigenvector has unit
2-norm and its largest-magnitude entry is real positive; u is then scaled so
that u*Bv = 1. For the lifted pencil v = (φ, λφ), so φ is a unit mode shape.

Dense QZ below config.DENSE_THRESHOLD, shift-invert Arnoldi above it.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import List, Literal, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ssmc import config
from ssmc.errors import NumericalError
from ssmc.mechmodel import FirstOrderSystem
from ssmc.series import MultiIndex, indices_of_degree

log = logging.getLogger(__name__)

Ordering = Literal["real", "frequency"]

_REAL_TOL = 1e-12        # |Im λ| below this·|λ| → real mode
_HYPERBOLIC_TOL = 1e-10  # |Re λ| below this·|λ| → warning


@dataclass(frozen=True)
class EigenPair:
    """One representative of a conjugate pair (Im λ > 0) or a real mode."""
    lam: complex
    v: np.ndarray
    u: np.ndarray
    index: int  # 1-based pair number in the requested ordering

    @property
    def is_real(self) -> bool:
        return self.lam.imag == 0.0

    @property
    def width(self) -> int:
        """Number of columns this pair contributes (2, or 1 for a real mode)."""
        return 1 if self.is_real else 2

    @property
    def stable(self) -> bool:
        return self.lam.real < 0

    def columns(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(λ, V, U) with conjugates adjacent."""
        if self.is_real:
            return np.array([self.lam]), self.v[:, None], self.u[:, None]
        return (
            np.array([self.lam, np.conj(self.lam)]),
            np.column_stack([self.v, np.conj(self.v)]),
            np.column_stack([self.u, np.conj(self.u)]),
        )


def stack_pairs(pairs: Sequence[EigenPair]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    cols = [p.columns() for p in pairs]
    return (
        np.concatenate([c[0] for c in cols]),
        np.hstack([c[1] for c in cols]),
        np.hstack([c[2] for c in cols]),
    )


@dataclass(frozen=True)
class MasterSubspace:
    pairs: Tuple[EigenPair, ...]
    V_E: np.ndarray
    U_E: np.ndarray
    lambda_E: np.ndarray

    @property
    def m(self) -> int:
        return len(self.pairs)

    @property
    def dim(self) -> int:
        return 2 * self.m

    def conj_perm(self) -> np.ndarray:
        """Coordinate permutation swapping each q with its conjugate partner."""
        perm = np.arange(self.dim)
        perm[0::2] += 1
        perm[1::2] -= 1
        return perm


@dataclass(frozen=True)
class ResonanceSet:
    entries: Tuple[Tuple[int, MultiIndex], ...]

    def targets(self, k: MultiIndex) -> List[int]:
        return [j for j, kk in self.entries if kk == k]

    def __contains__(self, item) -> bool:
        return item in self.entries

    def __len__(self) -> int:
        return len(self.entries)


# ──────────────────────────────────────────────────────────────────────────────
# EIGENSOLVER
# ──────────────────────────────────────────────────────────────────────────────

def _normalize(lam: complex, v: np.ndarray, u: np.ndarray, B, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Displacement block v[:n] scaled to unit norm, largest entry real positive; u*Bv = 1."""
    x = v[:n]
    v = v / np.linalg.norm(x)
    i = int(np.argmax(np.abs(x)))
    v = v * (np.conj(v[i]) / abs(v[i]))
    Bv = B @ v
    c = np.vdot(u, Bv)
    if abs(c) < 1e-10 * np.linalg.norm(u) * np.linalg.norm(Bv):
        raise NumericalError(f"defective pencil at λ={lam:.6g} (u*Bv ≈ 0)")
    u = u / np.conj(c)
    return v, u


def _real_vector(x: np.ndarray) -> np.ndarray:
    """Eigenvector of a real eigenvalue, phase removed so it is real."""
    i = int(np.argmax(np.abs(x)))
    x = x * (np.conj(x[i]) / abs(x[i]))
    return x.real.astype(complex)


def _dense_eig(A, B) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    B = B.toarray() if sp.issparse(B) else np.asarray(B)
    try:
        w, vl, vr = la.eig(A, B, left=True, right=True)
    except la.LinAlgError as e:
        raise NumericalError(f"QZ failed: {e}")
    ok = np.isfinite(w)
    return w[ok], vr[:, ok], vl[:, ok]


def _shift_invert(A, B, nev: int, sigma: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    N = A.shape[0]
    try:
        lu = spla.splu(sp.csc_array(A - sigma * B))
    except RuntimeError as e:
        raise NumericalError(f"shift-invert factorization failed (sigma={sigma}): {e}")
    op = spla.LinearOperator((N, N), matvec=lambda x: lu.solve(np.asarray(B @ x)), dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(N)
    ncv = min(N - 1, max(2 * nev + 1, 20))
    for attempt in range(2):
        try:
            theta, vecs = spla.eigs(op, k=nev, which="LM", v0=v0, ncv=ncv, maxiter=N * 10)
            return sigma + 1.0 / theta, vecs
        except spla.ArpackNoConvergence as e:
            log.warning(f"[EIG] ARPACK did not converge (attempt {attempt + 1}): {e}")
            ncv = min(N - 1, 2 * ncv)
    raise NumericalError(f"ARPACK did not converge for {nev} eigenvalues")


def _sparse_eig(A, B, nev: int, sigma: float = 0.0, seed: int = 0):
    A = sp.csc_array(A)
    B = sp.csc_array(B)
    w, vr = _shift_invert(A, B, nev, sigma, seed)
    wl, vl_raw = _shift_invert(A.T.conj(), B.T.conj(), nev, np.conj(sigma), seed)
    vl = np.empty_like(vr)
    for i, lam in enumerate(w):
        j = int(np.argmin(np.abs(np.conj(wl) - lam)))
        if abs(np.conj(wl[j]) - lam) > 1e-6 * abs(lam):
            raise NumericalError(f"no left eigenvector matched λ={lam:.6g}")
        vl[:, i] = vl_raw[:, j]
    return w, vr, vl


def solve_modes(
    fo: FirstOrderSystem,
    count: int,
    ordering: Ordering = "real",
    sigma: float = 0.0,
    seed: int = 0,
) -> List[EigenPair]:
    """
    ``count`` pairs (real modes count as one pair), ordered by real part
    descending or by frequency ascending. Each conjugate pair is computed once.

    Above config.DENSE_THRESHOLD only the 2·count + 2 eigenvalues nearest
    ``sigma`` are computed and then ordered, so with the default sigma = 0 the
    result is the slowest part of the spectrum. For a lightly damped structure
    those are the rightmost pairs; with strong stiffness-proportional damping
    they need not be, and ``sigma`` should be moved towards the pairs wanted.
    """
    N = fo.N
    if count < 1 or count > N // 2:
        raise ValueError(f"count must be in [1, {N // 2}]")
    t0 = time.time()
    dense = N <= config.DENSE_THRESHOLD
    if dense:
        w, vr, vl = _dense_eig(fo.A, fo.B)
        res_tol = 1e-8
    else:
        w, vr, vl = _sparse_eig(fo.A, fo.B, min(2 * count + 2, N - 2), sigma, seed)
        res_tol = 1e-6

    reps = []
    for i, lam in enumerate(w):
        if abs(lam.imag) <= _REAL_TOL * abs(lam):
            reps.append((complex(lam.real, 0.0), _real_vector(vr[:, i]), _real_vector(vl[:, i])))
        elif lam.imag > 0:
            reps.append((complex(lam), vr[:, i], vl[:, i]))

    if ordering == "real":
        reps.sort(key=lambda r: (-r[0].real, r[0].imag))
    elif ordering == "frequency":
        reps.sort(key=lambda r: (r[0].imag, -r[0].real))
    else:
        raise ValueError(f"unknown ordering {ordering!r}")
    if len(reps) < count:
        raise NumericalError(f"only {len(reps)} modes available, {count} requested")

    A_norm = spla.norm(fo.A, 1) if sp.issparse(fo.A) else la.norm(fo.A, 1)
    pairs = []
    for idx, (lam, v, u) in enumerate(reps[:count], start=1):
        v, u = _normalize(lam, v, u, fo.B, fo.n)
        resid = np.linalg.norm(fo.A @ v - lam * (fo.B @ v))
        if resid > res_tol * A_norm:
            raise NumericalError(f"eigen residual {resid:.3e} too large for pair {idx} (λ={lam:.6g})")
        if abs(lam.real) < _HYPERBOLIC_TOL * abs(lam):
            log.warning(f"[EIG] pair {idx}: Re λ ≈ 0 ({lam:.6g}), fixed point not hyperbolic")
        pairs.append(EigenPair(lam, v, u, idx))

    log.info(f"[EIG] {count} pairs ({'dense' if dense else 'shift-invert'}, N={N}) in {time.time() - t0:.2f}s")
    return pairs


def master_subspace(pairs: Sequence[EigenPair], indices: Sequence[int], B=None) -> MasterSubspace:
    """Master subspace from 1-based pair numbers. Only complex pairs qualify."""
    by_index = {p.index: p for p in pairs}
    chosen = []
    for i in indices:
        if i not in by_index:
            raise ValueError(f"master pair {i} not among computed pairs")
        if by_index[i].is_real:
            raise ValueError(f"master pair {i} is a real mode; a complex pair is required")
        chosen.append(by_index[i])
    lam, V, U = stack_pairs(chosen)
    if B is not None:
        gram = U.conj().T @ (B @ V)
        err = np.abs(gram - np.eye(len(lam))).max()
        if err > 1e-8:
            raise NumericalError(f"master basis not biorthonormal (max error {err:.2e})")
    return MasterSubspace(tuple(chosen), V, U, lam)


def spectrum_table(pairs: Sequence[EigenPair]) -> pd.DataFrame:
    rows = []
    for p in pairs:
        mag = abs(p.lam)
        rows.append({
            "index": p.index,
            "re_lambda": p.lam.real,
            "im_lambda": p.lam.imag,
            "damping_ratio": -p.lam.real / mag if mag else 0.0,
            "frequency_hz": abs(p.lam.imag) / (2 * np.pi),
        })
    return pd.DataFrame(rows, columns=["index", "re_lambda", "im_lambda", "damping_ratio", "frequency_hz"])


# ──────────────────────────────────────────────────────────────────────────────
# RESONANCES
# ──────────────────────────────────────────────────────────────────────────────

def detect_inner_resonances(
    lambda_E: np.ndarray, max_order: int, rel_tol: float = config.DEFAULT_RES_TOL
) -> ResonanceSet:
    """
    All (j, k) with 2 ≤ |k| ≤ max_order and |k·λ − λ_j| ≤ rel_tol·|λ_j|,
    plus the linear entries (j, e_j).
    """
    lam = np.asarray(lambda_E, dtype=complex)
    dim = lam.size
    entries: List[Tuple[int, MultiIndex]] = []
    for j in range(dim):
        e = [0] * dim
        e[j] = 1
        entries.append((j, tuple(e)))
    for d in range(2, max_order + 1):
        for k in indices_of_degree(dim, d):
            kl = np.dot(k, lam)
            for j in range(dim):
                if abs(kl - lam[j]) <= rel_tol * abs(lam[j]):
                    entries.append((j, k))
    log.debug(f"[EIG] {len(entries) - dim} nonlinear resonant terms up to order {max_order}")
    return ResonanceSet(tuple(entries))


# ──────────────────────────────────────────────────────────────────────────────
# LYAPUNOV (2x2 DIAGONAL)
# ──────────────────────────────────────────────────────────────────────────────

def solve_lyapunov_2x2(Lambda: np.ndarray, RHS: np.ndarray, hermitian: bool = False) -> np.ndarray:
    """
    Λ W + W Λᵀ + RHS = 0 for diagonal Λ: W_ab = −RHS_ab / (λ_a + λ_b).
    With ``hermitian`` the adjoint form Λ W + W Λ* + RHS = 0 is solved instead
    (λ_b conjugated), which is what the modal Gramian integrals give.
    Also accepts 1x1 blocks (real modes).
    """
    Lambda = np.asarray(Lambda, dtype=complex)
    lam = np.diag(Lambda) if Lambda.ndim == 2 else Lambda
    RHS = np.asarray(RHS, dtype=complex)
    if RHS.shape != (lam.size, lam.size):
        raise ValueError(f"RHS must be {lam.size}x{lam.size}")
    if np.any(lam.real >= 0):
        raise ValueError(f"unstable eigenvalue in Lyapunov solve: {lam}")
    right = np.conj(lam) if hermitian else lam
    den = lam[:, None] + right[None, :]
    if np.any(np.abs(den) < 1e-14 * np.abs(lam).max()):
        raise ValueError("vanishing denominator in Lyapunov solve")
    return -RHS / den
