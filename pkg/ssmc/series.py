# ssmc/series.py
"""
Truncated multivariate power series over multi-indices k ∈ N₀^dim.

A series is an array whose leading axis runs over the rows of a
``MultiIndexSet`` (degrees 1..order, graded lex); trailing axes hold the
coefficient (scalar or vector). Products and compositions are truncated at
the set's order.
"""

from __future__ import annotations

from itertools import combinations_with_replacement
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ssmc.mechmodel import PolynomialMap

MultiIndex = Tuple[int, ...]


def indices_of_degree(dim: int, degree: int) -> List[MultiIndex]:
    """All k with |k| = degree, lex descending: (2,0), (1,1), (0,2)."""
    out = []
    for combo in combinations_with_replacement(range(dim), degree):
        k = [0] * dim
        for c in combo:
            k[c] += 1
        out.append(tuple(k))
    return sorted(out, reverse=True)


class MultiIndexSet:
    def __init__(self, dim: int, order: int):
        if dim < 1 or order < 1:
            raise ValueError("dim and order must be positive")
        self.dim = dim
        self.order = order
        self.indices: List[MultiIndex] = []
        for d in range(1, order + 1):
            self.indices += indices_of_degree(dim, d)
        self.position: Dict[MultiIndex, int] = {k: r for r, k in enumerate(self.indices)}
        self.array = np.asarray(self.indices, dtype=np.intp)
        self.degrees = self.array.sum(axis=1)
        self._deg_rows = {d: np.flatnonzero(self.degrees == d) for d in range(1, order + 1)}

        # product table grouped by target degree
        pairs: Dict[int, List[Tuple[int, int, int]]] = {d: [] for d in range(2, order + 1)}
        for ra, a in enumerate(self.indices):
            da = self.degrees[ra]
            for rb, b in enumerate(self.indices):
                if da + self.degrees[rb] > order:
                    continue
                c = tuple(x + y for x, y in zip(a, b))
                pairs[da + self.degrees[rb]].append((ra, rb, self.position[c]))
        self._prod = {
            d: tuple(np.asarray(col, dtype=np.intp) for col in zip(*lst)) if lst else None
            for d, lst in pairs.items()
        }

        # ∂/∂p_j: row of a ↦ row of a − e_j with factor a_j (|a| ≥ 2)
        self._deriv = []
        for j in range(dim):
            src, dst, fac = [], [], []
            for r, a in enumerate(self.indices):
                if a[j] and self.degrees[r] >= 2:
                    b = list(a)
                    b[j] -= 1
                    src.append(r)
                    dst.append(self.position[tuple(b)])
                    fac.append(a[j])
            self._deriv.append((np.asarray(src, dtype=np.intp),
                                np.asarray(dst, dtype=np.intp),
                                np.asarray(fac, dtype=float)))

    def __len__(self) -> int:
        return len(self.indices)

    def rows(self, degree: int) -> np.ndarray:
        return self._deg_rows.get(degree, np.empty(0, dtype=np.intp))

    def unit(self, j: int) -> int:
        k = [0] * self.dim
        k[j] = 1
        return self.position[tuple(k)]

    def zeros(self, *trailing: int, dtype=complex) -> np.ndarray:
        return np.zeros((len(self),) + tuple(trailing), dtype=dtype)

    def swap_rows(self, perm: Sequence[int]) -> np.ndarray:
        """Row of k[perm] for every row k (coordinate swap of conjugate pairs)."""
        perm = list(perm)
        return np.asarray([self.position[tuple(k[i] for i in perm)] for k in self.indices], dtype=np.intp)

    # ── arithmetic ────────────────────────────────────────────────────────────

    def mul(self, x: np.ndarray, y: np.ndarray, degree: Optional[int] = None) -> np.ndarray:
        """Truncated product; with ``degree`` only that degree's rows are filled."""
        out = np.zeros(np.broadcast_shapes(x.shape, y.shape), dtype=np.result_type(x, y))
        degs = [degree] if degree is not None else range(2, self.order + 1)
        for d in degs:
            tab = self._prod.get(d)
            if tab is None:
                continue
            ia, ib, ic = tab
            np.add.at(out, ic, x[ia] * y[ib])
        return out

    def power(self, x: np.ndarray, p: int, cache: Optional[dict] = None, key=None) -> np.ndarray:
        if p < 1:
            raise ValueError("power must be >= 1 (series have no constant term)")
        if cache is not None and (key, p) in cache:
            return cache[(key, p)]
        res = x if p == 1 else self.mul(self.power(x, p - 1, cache, key), x)
        if cache is not None:
            cache[(key, p)] = res
        return res

    def derivative(self, x: np.ndarray, j: int) -> np.ndarray:
        """∂x/∂p_j restricted to terms of degree ≥ 2 (linear part drops to a constant)."""
        src, dst, fac = self._deriv[j]
        out = np.zeros_like(x)
        if src.size:
            shape = (-1,) + (1,) * (x.ndim - 1)
            out[dst] = x[src] * fac.reshape(shape)
        return out

    def truncate(self, x: np.ndarray, max_degree: int) -> np.ndarray:
        out = x.copy()
        out[self.degrees > max_degree] = 0
        return out

    # ── evaluation ────────────────────────────────────────────────────────────

    def monomials(self, p: np.ndarray) -> np.ndarray:
        """p^k for every row; p of shape (dim,) or (T, dim)."""
        p = np.asarray(p)
        if p.ndim == 1:
            return np.prod(p[None, :] ** self.array, axis=1)
        return np.prod(p[:, None, :] ** self.array[None, :, :], axis=2)

    def evaluate(self, coeffs: np.ndarray, p: np.ndarray) -> np.ndarray:
        return self.monomials(p) @ coeffs


def compose_polynomial(
    pm: PolynomialMap, mis: MultiIndexSet, W: np.ndarray, degree: Optional[int] = None
) -> np.ndarray:
    """
    Series coefficients of pm(W(p)), W given as a (len(mis), dim_in) series.
    Exact up to mis.order; ``degree`` restricts the work to one degree.
    """
    out = mis.zeros(pm.dim_out, dtype=np.result_type(W, complex))
    if pm.is_zero():
        return out
    cache: dict = {}
    for o, c, exps in pm.terms:
        mono = None
        for var, p in exps:
            factor = mis.power(W[:, var], p, cache, key=var)
            mono = factor if mono is None else mis.mul(mono, factor)
        if degree is not None:
            rows = mis.rows(degree)
            out[rows, o] += c * mono[rows]
        else:
            out[:, o] += c * mono
    return out
