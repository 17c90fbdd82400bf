"""Sparse SPD storage, incomplete Cholesky factorizations and triangular solves.

Matrices are held as the lower triangle in compressed-column form with the
diagonal first in every column.  The factorizations are left-looking: column
``j`` of ``L`` is accumulated in a dense work vector from the earlier columns
that have an entry in row ``j``, which are tracked with per-row linked lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

__all__ = [
    "FactorizationError",
    "SparseSPD",
    "TriangularFactor",
    "assemble_hessian",
    "ichol_zero_fill",
    "ichol_threshold",
    "ichol",
    "solve_factor",
]

SHIFTS = (1e-3, 1e-2, 1e-1)


class FactorizationError(ArithmeticError):
    """Nonpositive pivot that diagonal shifting could not cure."""


class SparseSPD:
    """Lower triangle (CSC, sorted rows, diagonal first) of a symmetric matrix."""

    def __init__(self, indptr, indices, data, n: int):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        self.n = int(n)

    @classmethod
    def from_scipy(cls, A) -> "SparseSPD":
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        n = A.shape[0]
        low = sp.tril(A, format="coo")
        # structural diagonal, kept even where it is zero (sparse addition would drop it)
        diag = np.arange(n)
        low = sp.coo_matrix(
            (np.r_[low.data, np.zeros(n)], (np.r_[low.row, diag], np.r_[low.col, diag])), shape=(n, n)
        ).tocsc()
        low.sum_duplicates()
        low.sort_indices()
        return cls(low.indptr, low.indices, low.data, n)

    def to_scipy(self) -> sp.csc_matrix:
        low = sp.csc_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))
        return (low + sp.tril(low, k=-1).T).tocsc()

    def diagonal(self) -> np.ndarray:
        return self.data[self.indptr[:-1]]

    @property
    def nnz(self) -> int:
        """Nonzeros of the full symmetric matrix."""
        return 2 * self.data.size - self.n

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.data).max(initial=0.0))

    def shifted(self, sigma: float) -> "SparseSPD":
        data = self.data.copy()
        data[self.indptr[:-1]] *= 1.0 + sigma
        return SparseSPD(self.indptr, self.indices, data, self.n)


@dataclass(frozen=True)
class TriangularFactor:
    """Sparse lower-triangular ``L`` (CSC, diagonal first); ``P = L L^T``."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int
    variant: str
    shift: float = 0.0

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    def to_scipy(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))

    def solve(self, g) -> np.ndarray:
        return solve_factor(self, g)


def assemble_hessian(d, reg) -> SparseSPD:
    """``H = diag(d) + reg`` where ``reg`` is an assembled ``beta C^T C``."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("curvatures must be finite and nonnegative")
    reg = sp.csc_matrix(reg)
    if reg.shape != (d.size, d.size):
        raise ValueError(f"regularizer shape {reg.shape} does not match {d.size} curvatures")
    H = reg + sp.diags(d, format="csc")
    if not np.any(H.data):
        raise FactorizationError("Hessian is identically zero")
    return SparseSPD.from_scipy(H)


@numba.njit(cache=True)
def _grow(arr, need):
    if need <= arr.size:
        return arr
    cap = max(need, 2 * arr.size)
    out = np.empty(cap, dtype=arr.dtype)
    out[: arr.size] = arr
    return out


@numba.njit(cache=True)
def _ichol_kernel(Ap, Ai, Ax, n, zero_fill, tau):
    """Left-looking IC.  Returns (Lp, Li, Lx, status); status < 0 flags a bad pivot."""
    cap = max(Ax.size, n) * 2
    Lp = np.zeros(n + 1, dtype=np.int64)
    Li = np.empty(cap, dtype=np.int64)
    Lx = np.empty(cap, dtype=np.float64)
    work = np.zeros(n)
    seen = -np.ones(n, dtype=np.int64)
    in_a = -np.ones(n, dtype=np.int64)
    pattern = np.empty(n, dtype=np.int64)
    head = -np.ones(n, dtype=np.int64)
    link = -np.ones(n, dtype=np.int64)
    nxt = np.zeros(n, dtype=np.int64)
    keep = np.empty(n, dtype=np.int64)
    nnz = 0
    for j in range(n):
        cnt = 0
        for q in range(Ap[j], Ap[j + 1]):
            i = Ai[q]
            if i < j:
                continue
            work[i] = Ax[q]
            seen[i] = j
            in_a[i] = j
            pattern[cnt] = i
            cnt += 1
        if seen[j] != j:
            work[j] = 0.0
            seen[j] = j
            pattern[cnt] = j
            cnt += 1
        k = head[j]
        while k != -1:
            knext = link[k]
            p = nxt[k]
            ljk = Lx[p]
            for q in range(p, Lp[k + 1]):
                i = Li[q]
                if seen[i] != j:
                    seen[i] = j
                    work[i] = 0.0
                    pattern[cnt] = i
                    cnt += 1
                work[i] -= Lx[q] * ljk
            p += 1
            nxt[k] = p
            if p < Lp[k + 1]:
                r = Li[p]
                link[k] = head[r]
                head[r] = k
            k = knext
        pivot = work[j]
        if not (pivot > 0.0) or not np.isfinite(pivot):
            return Lp, Li, Lx, -(j + 1)
        ljj = np.sqrt(pivot)
        nk = 0
        for t in range(cnt):
            i = pattern[t]
            if i == j:
                continue
            v = work[i] / ljj
            if zero_fill:
                if in_a[i] == j:
                    keep[nk] = i
                    nk += 1
            elif tau == 0.0 or abs(v) >= tau:
                keep[nk] = i
                nk += 1
        rows = np.sort(keep[:nk])
        Li = _grow(Li, nnz + nk + 1)
        Lx = _grow(Lx, nnz + nk + 1)
        Li[nnz] = j
        Lx[nnz] = ljj
        for t in range(nk):
            Li[nnz + 1 + t] = rows[t]
            Lx[nnz + 1 + t] = work[rows[t]] / ljj
        Lp[j] = nnz
        nnz += nk + 1
        Lp[j + 1] = nnz
        if nk > 0:
            nxt[j] = Lp[j] + 1
            r = rows[0]
            link[j] = head[r]
            head[r] = j
    return Lp, Li[:nnz].copy(), Lx[:nnz].copy(), 0


def _factor(H: SparseSPD, zero_fill: bool, tau: float, variant: str) -> TriangularFactor:
    for sigma in (0.0,) + SHIFTS:
        A = H if sigma == 0.0 else H.shifted(sigma)
        Lp, Li, Lx, status = _ichol_kernel(A.indptr, A.indices, A.data, A.n, zero_fill, float(tau))
        if status == 0:
            return TriangularFactor(Lp, Li, Lx, H.n, variant, sigma)
    raise FactorizationError(
        f"incomplete Cholesky broke down at column {-status - 1} even with diagonal shift {SHIFTS[-1]}"
    )


def ichol_zero_fill(H: SparseSPD) -> TriangularFactor:
    """IC(0): the factor keeps exactly the lower pattern of ``H``."""
    return _factor(H, True, 0.0, "ic0")


def ichol_threshold(H: SparseSPD, tau: float) -> TriangularFactor:
    """Threshold IC: off-diagonal factor entries with ``|L_ij| < tau`` are dropped.

    ``tau = 0`` keeps every entry and gives the complete Cholesky factor.
    """
    if tau < 0:
        raise ValueError("drop tolerance must be nonnegative")
    return _factor(H, False, tau, "complete" if tau == 0 else f"ict({tau:g})")


def ichol(H: SparseSPD, kind: str = "ict", scale: float = 1e-3) -> TriangularFactor:
    """Dispatch on preconditioner kind: ``ic0``, ``ict`` (tolerance ``scale * H_max``) or ``complete``."""
    if kind == "ic0":
        return ichol_zero_fill(H)
    if kind == "ict":
        if scale <= 0:
            raise ValueError("ict scale must be positive")
        return ichol_threshold(H, scale * H.max_abs)
    if kind == "complete":
        return ichol_threshold(H, 0.0)
    raise ValueError(f"unknown factorization kind {kind!r}")


@numba.njit(cache=True)
def _solve_kernel(Lp, Li, Lx, g):
    n = g.size
    x = g.copy()
    for j in range(n):
        x[j] /= Lx[Lp[j]]
        xj = x[j]
        for q in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[q]] -= Lx[q] * xj
    for j in range(n - 1, -1, -1):
        s = x[j]
        for q in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[q] * x[Li[q]]
        x[j] = s / Lx[Lp[j]]
    return x


def solve_factor(factor: TriangularFactor, g) -> np.ndarray:
    """``(L L^T)^{-1} g`` by forward then backward substitution."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    if g.shape != (factor.n,):
        raise ValueError(f"right-hand side has shape {g.shape}, factor order is {factor.n}")
    diag = factor.data[factor.indptr[:-1]]
    if np.any(diag == 0):
        raise FactorizationError("factor has a zero diagonal entry")
    return _solve_kernel(factor.indptr, factor.indices, factor.data, g)
