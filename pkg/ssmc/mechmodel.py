# ssmc/mechmodel.py
"""
Polynomial nonlinear mechanical systems.

    M ẍ + C_d ẋ + K x + f(x, ẋ) = ε (E(t) + D u)

and the first-order lift with z = (x, ẋ):

    B ż = A z + F(z) + ε (F_ext(t) + B_ext u)
    A = [[−K, 0], [0, M]],   B = [[C_d, M], [M, 0]],   F = (−f, 0)

Model files are JSON (schema/model.schema.json); matrices are stored as
0-based triplets.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from math import comb
from typing import Any, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pydantic import BaseModel, Field, ValidationError

from ssmc import config
from ssmc.errors import ModelError

log = logging.getLogger(__name__)

Exponents = Tuple[Tuple[int, int], ...]  # ((var, power), ...) sorted by var
Term = Tuple[int, float, Exponents]       # (output_index, coefficient, exponents)


# ──────────────────────────────────────────────────────────────────────────────
# POLYNOMIAL MAP
# ──────────────────────────────────────────────────────────────────────────────

def _canonical_exps(exps: Iterable[Tuple[int, int]]) -> Exponents:
    acc: dict[int, int] = {}
    for var, power in exps:
        if power < 0:
            raise ValueError(f"negative exponent {power} on variable {var}")
        if power:
            acc[int(var)] = acc.get(int(var), 0) + int(power)
    return tuple(sorted(acc.items()))


@dataclass(frozen=True)
class PolynomialMap:
    """
    Sparse monomial sum. Terms are canonical: exponents sorted by variable,
    duplicates merged, cancelled terms dropped, list sorted by (out, exps).
    """
    dim_in: int
    dim_out: int
    terms: Tuple[Term, ...] = ()
    min_degree: int = 2

    # flattened evaluation tables, built in __post_init__
    _outs: np.ndarray = field(init=False, repr=False, compare=False)
    _coeffs: np.ndarray = field(init=False, repr=False, compare=False)
    _vars: np.ndarray = field(init=False, repr=False, compare=False)
    _powers: np.ndarray = field(init=False, repr=False, compare=False)
    _starts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        merged: dict[Tuple[int, Exponents], float] = {}
        for out, coeff, exps in self.terms:
            if not 0 <= out < self.dim_out:
                raise ValueError(f"output index {out} outside [0, {self.dim_out})")
            key = (int(out), _canonical_exps(exps))
            for var, _ in key[1]:
                if not 0 <= var < self.dim_in:
                    raise ValueError(f"variable {var} outside [0, {self.dim_in})")
            degree = sum(p for _, p in key[1])
            if degree < self.min_degree:
                raise ValueError(f"term degree {degree} below {self.min_degree}")
            merged[key] = merged.get(key, 0.0) + float(coeff)
        terms = tuple(
            (out, c, exps) for (out, exps), c in sorted(merged.items()) if c != 0.0
        )
        object.__setattr__(self, "terms", terms)

        outs, coeffs, vars_, powers, starts = [], [], [], [], []
        for out, c, exps in terms:
            outs.append(out)
            coeffs.append(c)
            starts.append(len(vars_))
            for var, p in exps:
                vars_.append(var)
                powers.append(p)
        object.__setattr__(self, "_outs", np.asarray(outs, dtype=np.intp))
        object.__setattr__(self, "_coeffs", np.asarray(coeffs, dtype=float))
        object.__setattr__(self, "_vars", np.asarray(vars_, dtype=np.intp))
        object.__setattr__(self, "_powers", np.asarray(powers, dtype=np.intp))
        object.__setattr__(self, "_starts", np.asarray(starts, dtype=np.intp))

    @property
    def degree(self) -> int:
        return max((sum(p for _, p in e) for _, _, e in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms


def eval_polynomial(pm: PolynomialMap, z: np.ndarray) -> np.ndarray:
    """Exact monomial sum at z. Complex z gives a complex result."""
    z = np.asarray(z)
    if z.shape != (pm.dim_in,):
        raise ValueError(f"expected vector of length {pm.dim_in}, got shape {z.shape}")
    dtype = np.result_type(z.dtype, float)
    out = np.zeros(pm.dim_out, dtype=dtype)
    if pm.is_zero():
        return out
    factors = z[pm._vars] ** pm._powers
    monomials = np.multiply.reduceat(factors, pm._starts)
    np.add.at(out, pm._outs, pm._coeffs * monomials)
    return out


# ──────────────────────────────────────────────────────────────────────────────
# FORCING
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ForcingChannel:
    distribution: np.ndarray
    amplitude: float = 1.0
    omega: float = 0.0
    phase: float = 0.0
    waveform: Literal["sine", "cosine"] = "sine"

    def scalar(self, t):
        arg = self.omega * np.asarray(t, dtype=float) + self.phase
        wave = np.sin(arg) if self.waveform == "sine" else np.cos(arg)
        return self.amplitude * wave


@dataclass(frozen=True)
class ForcingSignal:
    """Finite sum of sinusoids, each with its own distribution vector."""
    dim: int
    channels: Tuple[ForcingChannel, ...] = ()

    def __post_init__(self):
        for i, ch in enumerate(self.channels):
            if np.shape(ch.distribution) != (self.dim,):
                raise ValueError(f"channel {i}: distribution must have length {self.dim}")

    @property
    def dtype(self):
        return np.result_type(float, *[ch.distribution.dtype for ch in self.channels])

    def evaluate(self, t: float) -> np.ndarray:
        out = np.zeros(self.dim, dtype=self.dtype)
        for ch in self.channels:
            out += ch.scalar(t) * ch.distribution
        return out

    def sample(self, times: np.ndarray) -> np.ndarray:
        """(len(times), dim) table."""
        times = np.asarray(times, dtype=float)
        out = np.zeros((times.size, self.dim), dtype=self.dtype)
        for ch in self.channels:
            out += np.outer(ch.scalar(times), ch.distribution)
        return out

    def lift(self, N: int) -> "ForcingSignal":
        """Zero-pad distributions to length N (first-order F_ext = (E, 0))."""
        chans = []
        for ch in self.channels:
            d = np.zeros(N, dtype=ch.distribution.dtype)
            d[: self.dim] = ch.distribution
            chans.append(ForcingChannel(d, ch.amplitude, ch.omega, ch.phase, ch.waveform))
        return ForcingSignal(N, tuple(chans))

    def project(self, T: np.ndarray) -> "ForcingSignal":
        """Channels mapped through a linear operator T (for reduced forcing b = Û*F_ext)."""
        T = np.asarray(T)
        chans = tuple(
            ForcingChannel(T @ ch.distribution, ch.amplitude, ch.omega, ch.phase, ch.waveform)
            for ch in self.channels
        )
        return ForcingSignal(T.shape[0], chans)

    def is_zero(self) -> bool:
        return all(ch.amplitude == 0.0 or not np.any(ch.distribution) for ch in self.channels)


# ──────────────────────────────────────────────────────────────────────────────
# SYSTEMS
# ──────────────────────────────────────────────────────────────────────────────

Matrix = Any  # np.ndarray or scipy.sparse matrix


def _dense(mat: Matrix) -> np.ndarray:
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)


@dataclass(frozen=True)
class SecondOrderSystem:
    n: int
    M: Matrix
    C_d: Matrix
    K: Matrix
    f: PolynomialMap
    E: ForcingSignal
    D: np.ndarray
    epsilon: float = 1.0

    def __post_init__(self):
        n = self.n
        for name in ("M", "C_d", "K"):
            if getattr(self, name).shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if D.shape[0] != n:
            raise ValueError(f"D must have {n} rows, got {D.shape[0]}")
        object.__setattr__(self, "D", D)
        if self.f.dim_in != 2 * n or self.f.dim_out != n:
            raise ValueError("f must map 2n state variables to n forces")
        if self.E.dim != n:
            raise ValueError("forcing distribution length must equal n")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        _check_spd(self.M)
        if D.shape[1] and np.linalg.matrix_rank(D) < D.shape[1]:
            raise ValueError("actuator matrix D must have full column rank")

    @property
    def q(self) -> int:
        return self.D.shape[1]


def _check_spd(M: Matrix) -> None:
    if sp.issparse(M):
        diff = abs(M - M.T)
        if diff.nnz and diff.max() > 1e-12 * abs(M).max():
            raise ValueError("M must be symmetric")
        if np.any(M.diagonal() <= 0):
            raise ValueError("M must be positive definite")
        if M.shape[0] <= 2:
            M = M.toarray()
        else:
            try:
                w = spla.eigsh(sp.csc_array(M, dtype=float), k=1, which="SA", return_eigenvectors=False)
            except spla.ArpackNoConvergence as e:
                raise ValueError(f"M definiteness check did not converge: {e}")
            if w[0] <= 1e-12 * abs(M).max():
                raise ValueError(f"M must be positive definite (smallest eigenvalue {w[0]:.3e})")
            return
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * np.abs(M).max()):
        raise ValueError("M must be symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ValueError("M must be positive definite (singular M makes B singular)")


@dataclass(frozen=True)
class FirstOrderSystem:
    N: int
    A: Matrix
    B: Matrix
    F: PolynomialMap
    Fext: ForcingSignal
    Bext: np.ndarray
    epsilon: float = 1.0

    @property
    def n(self) -> int:
        return self.N // 2

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.A)


def to_first_order(sys: SecondOrderSystem) -> FirstOrderSystem:
    n = sys.n
    N = 2 * n
    use_sparse = any(sp.issparse(m) for m in (sys.M, sys.C_d, sys.K)) or N > config.DENSE_THRESHOLD
    if use_sparse:
        M, C, K = (sp.csr_array(m) for m in (sys.M, sys.C_d, sys.K))
        A = sp.block_array([[-K, None], [None, M]], format="csc")
        B = sp.block_array([[C, M], [M, None]], format="csc")
    else:
        M, C, K = (_dense(m) for m in (sys.M, sys.C_d, sys.K))
        Z = np.zeros((n, n))
        A = np.block([[-K, Z], [Z, M]])
        B = np.block([[C, M], [M, Z]])

    F = PolynomialMap(N, N, tuple((out, -c, e) for out, c, e in sys.f.terms))
    Bext = np.vstack([sys.D, np.zeros_like(sys.D)])
    log.debug(f"[MODEL] lifted n={n} → N={N} ({'sparse' if use_sparse else 'dense'})")
    return FirstOrderSystem(N, A, B, F, sys.E.lift(N), Bext, sys.epsilon)


def eval_second_order_force(sys: SecondOrderSystem, x: np.ndarray, xdot: np.ndarray) -> np.ndarray:
    return eval_polynomial(sys.f, np.concatenate([x, xdot]))


def mechanical_energy(sys: SecondOrderSystem, z: np.ndarray) -> float:
    """
    ½ẋᵀMẋ + ½xᵀKx + V(x), V(x) = ∫₀¹ f(sx, 0)·x ds (exact per monomial).
    Only displacement-dependent gradient nonlinearities have a potential.
    """
    n = sys.n
    x, xdot = np.asarray(z[:n], dtype=float), np.asarray(z[n:], dtype=float)
    kinetic = 0.5 * xdot @ (sys.M @ xdot)
    elastic = 0.5 * x @ (sys.K @ x)
    potential = 0.0
    for out, c, exps in sys.f.terms:
        if any(var >= n for var, _ in exps):
            raise ValueError("potential undefined for velocity-dependent nonlinearity")
        deg = sum(p for _, p in exps)
        mono = np.prod([x[var] ** p for var, p in exps])
        potential += c * mono * x[out] / (deg + 1)
    return float(kinetic + elastic + potential)


# ──────────────────────────────────────────────────────────────────────────────
# OSCILLATOR CHAIN
# ──────────────────────────────────────────────────────────────────────────────

def _tridiagonal(n: int) -> np.ndarray:
    return 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)


def _cube_of_difference(out: int, i: Optional[int], j: Optional[int], scale: float) -> List[Term]:
    """scale·(x_i − x_j)³ expanded; None stands for the fixed wall (x = 0)."""
    terms: List[Term] = []
    for a in range(4):
        b = 3 - a
        if (i is None and a) or (j is None and b):
            continue
        c = scale * comb(3, a) * (-1) ** b
        exps = tuple(e for e in ((i, a), (j, b)) if e[1])
        terms.append((out, c, exps))
    return terms


def chain_default_forcing(n_masses: int, actuator_indices: Sequence[int]) -> ForcingSignal:
    """E(t) = D·(sin(0.1√2 t), cos(0.1√3 t), …) for the chain benchmark."""
    D = _placement(n_masses, actuator_indices)
    waves = [("sine", 0.1 * np.sqrt(2.0)), ("cosine", 0.1 * np.sqrt(3.0))]
    chans = []
    for col in range(D.shape[1]):
        wf, om = waves[col % 2]
        chans.append(ForcingChannel(D[:, col].copy(), 1.0, om, 0.0, wf))
    return ForcingSignal(n_masses, tuple(chans))


def _placement(n: int, actuator_indices: Sequence[int]) -> np.ndarray:
    D = np.zeros((n, len(actuator_indices)))
    for col, idx in enumerate(actuator_indices):
        if not 1 <= idx <= n:
            raise ValueError(f"actuator index {idx} outside [1, {n}]")
        D[idx - 1, col] = 1.0
    return D


def build_oscillator_chain(
    n_masses: int,
    m: float,
    k: float,
    c: float,
    kappa: float,
    actuator_indices: Sequence[int],
    forcing: Optional[ForcingSignal] = None,
    epsilon: float = 1.0,
) -> SecondOrderSystem:
    """Chain of equal masses between two walls, linked by cubic-hardening springs."""
    if n_masses < 2:
        raise ValueError("n_masses must be at least 2")
    if m <= 0 or k <= 0:
        raise ValueError("m and k must be positive")
    if c < 0 or kappa < 0:
        raise ValueError("c and kappa must be nonnegative")
    n = n_masses
    D = _placement(n, actuator_indices)
    T = _tridiagonal(n)

    terms: List[Term] = []
    if kappa:
        for r in range(n):
            left = r - 1 if r > 0 else None
            right = r + 1 if r < n - 1 else None
            terms += _cube_of_difference(r, r, left, kappa)     # (x_r − x_{r−1})³
            terms += _cube_of_difference(r, right, r, -kappa)   # −(x_{r+1} − x_r)³
    f = PolynomialMap(2 * n, n, tuple(terms))
    E = forcing if forcing is not None else ForcingSignal(n)

    log.info(f"[MODEL] chain n={n} m={m} k={k} c={c} kappa={kappa} actuators={list(actuator_indices)}")
    return SecondOrderSystem(n, m * np.eye(n), c * T, k * T, f, E, D, epsilon)


# ──────────────────────────────────────────────────────────────────────────────
# MODEL FILE
# ──────────────────────────────────────────────────────────────────────────────

class TripletMatrix(BaseModel):
    rows: int = Field(ge=1)
    cols: int = Field(ge=0)
    triplets: List[Tuple[int, int, float]] = []


class ChannelSpec(BaseModel):
    distribution: List[float]
    amplitude: float = 1.0
    omega: float = 0.0
    phase: float = 0.0
    waveform: Literal["sine", "cosine"] = "sine"


class ForcingSpec(BaseModel):
    channels: List[ChannelSpec] = []


class TermSpec(BaseModel):
    out: int = Field(ge=0)
    coeff: float
    exps: List[Tuple[int, int]]


class NonlinearitySpec(BaseModel):
    terms: List[TermSpec] = []


class ModelFile(BaseModel):
    n: int = Field(ge=1)
    M: TripletMatrix
    Cd: TripletMatrix
    K: TripletMatrix
    D: TripletMatrix
    epsilon: float = Field(default=1.0, ge=0.0)
    forcing: ForcingSpec = ForcingSpec()
    nonlinearity: NonlinearitySpec = NonlinearitySpec()


def _to_triplets(mat: Matrix) -> dict:
    coo = sp.coo_array(mat)
    rows, cols = coo.shape
    order = np.lexsort((coo.col, coo.row))
    trips = [[int(coo.row[i]), int(coo.col[i]), float(coo.data[i])] for i in order if coo.data[i] != 0.0]
    return {"rows": int(rows), "cols": int(cols), "triplets": trips}


def _from_triplets(spec: TripletMatrix, name: str, shape: Tuple[int, int], sparse: bool) -> Matrix:
    if (spec.rows, spec.cols) != shape:
        raise ModelError(f"expected shape {shape}, got {(spec.rows, spec.cols)}", field=name)
    if not spec.triplets:
        return sp.csr_array(shape) if sparse else np.zeros(shape)
    arr = np.asarray(spec.triplets, dtype=float)
    r, c = arr[:, 0].astype(int), arr[:, 1].astype(int)
    bad = np.flatnonzero((r < 0) | (r >= shape[0]) | (c < 0) | (c >= shape[1]))
    if bad.size:
        raise ModelError("triplet index out of range", field=f"{name}.triplets.{bad[0]}")
    mat = sp.coo_array((arr[:, 2], (r, c)), shape=shape).tocsr()
    return mat if sparse else mat.toarray()


def model_to_dict(sys: SecondOrderSystem) -> dict:
    return {
        "n": sys.n,
        "M": _to_triplets(sys.M),
        "Cd": _to_triplets(sys.C_d),
        "K": _to_triplets(sys.K),
        "D": _to_triplets(sys.D),
        "epsilon": sys.epsilon,
        "forcing": {"channels": [
            {
                "distribution": [float(v) for v in ch.distribution],
                "amplitude": ch.amplitude,
                "omega": ch.omega,
                "phase": ch.phase,
                "waveform": ch.waveform,
            }
            for ch in sys.E.channels
        ]},
        "nonlinearity": {"terms": [
            {"out": out, "coeff": c, "exps": [[v, p] for v, p in exps]}
            for out, c, exps in sys.f.terms
        ]},
    }


def model_from_dict(raw: dict) -> SecondOrderSystem:
    try:
        spec = ModelFile.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        raise ModelError(first["msg"], field=".".join(str(x) for x in first["loc"]))

    n = spec.n
    sparse = 2 * n > config.DENSE_THRESHOLD
    M = _from_triplets(spec.M, "M", (n, n), sparse)
    Cd = _from_triplets(spec.Cd, "Cd", (n, n), sparse)
    K = _from_triplets(spec.K, "K", (n, n), sparse)
    D = _from_triplets(spec.D, "D", (n, spec.D.cols), False)

    chans = []
    for i, ch in enumerate(spec.forcing.channels):
        if len(ch.distribution) != n:
            raise ModelError(f"expected length {n}", field=f"forcing.channels.{i}.distribution")
        chans.append(ForcingChannel(np.asarray(ch.distribution, dtype=float),
                                    ch.amplitude, ch.omega, ch.phase, ch.waveform))

    terms: List[Term] = []
    for i, t in enumerate(spec.nonlinearity.terms):
        path = f"nonlinearity.terms.{i}"
        if t.out >= n:
            raise ModelError(f"output index {t.out} >= n", field=f"{path}.out")
        if any(not 0 <= v < 2 * n or p < 0 for v, p in t.exps):
            raise ModelError("variable outside [0, 2n) or negative power", field=f"{path}.exps")
        if sum(p for _, p in t.exps) < 2:
            raise ModelError("total degree must be at least 2", field=f"{path}.exps")
        terms.append((t.out, t.coeff, tuple((v, p) for v, p in t.exps)))

    try:
        return SecondOrderSystem(
            n, M, Cd, K, PolynomialMap(2 * n, n, tuple(terms)),
            ForcingSignal(n, tuple(chans)), D, spec.epsilon,
        )
    except ValueError as e:
        raise ModelError(str(e))


def save_model(sys: SecondOrderSystem, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(sys), f, indent=2)
    log.info(f"[MODEL] saved → {path}")


def load_model(path: str) -> SecondOrderSystem:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ModelError(f"model file not found: {path}")
    except json.JSONDecodeError as e:
        raise ModelError(f"invalid JSON ({e})")
    sys = model_from_dict(raw)
    log.info(f"[MODEL] loaded {path}: n={sys.n}, q={sys.q}, {len(sys.f.terms)} nonlinear terms")
    return sys
