"""Sparse Cholesky factorization with a reusable symbolic analysis.

Tapered covariance matrices keep the same sparsity pattern for every
parameter value, so the fill-reducing ordering, elimination tree and the
pattern of the factor are computed once. Each new set of values then only
costs a numeric left-looking factorization.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot):
        self.pivot = int(pivot)
        super().__init__(f"matrix is not positive definite (failing pivot {self.pivot})")


@njit(cache=True)
def _etree(n, Ap, Ai):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@njit(cache=True)
def _symbolic(n, Ap, Ai, parent):
    # Ap/Ai: full symmetric pattern in CSC, permuted. Row i of L is the set of
    # etree nodes reached from the entries A[k, i], k < i.
    flag = np.full(n, -1, dtype=np.int64)
    counts = np.ones(n, dtype=np.int64)
    row_counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        flag[i] = i
        for p in range(Ap[i], Ap[i + 1]):
            k = Ai[p]
            while k < i and flag[k] != i:
                flag[k] = i
                counts[k] += 1
                row_counts[i] += 1
                k = parent[k]
    Lp = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + counts[j]
    Rp = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        Rp[i + 1] = Rp[i] + row_counts[i]
    Li = np.empty(Lp[n], dtype=np.int64)
    Rk = np.empty(Rp[n], dtype=np.int64)
    Rpos = np.empty(Rp[n], dtype=np.int64)
    nxt = Lp[:n].copy()
    for j in range(n):
        Li[nxt[j]] = j
        nxt[j] += 1
    flag[:] = -1
    for i in range(n):
        flag[i] = i
        r = Rp[i]
        for p in range(Ap[i], Ap[i + 1]):
            k = Ai[p]
            while k < i and flag[k] != i:
                flag[k] = i
                Li[nxt[k]] = i
                Rk[r] = k
                Rpos[r] = nxt[k]
                nxt[k] += 1
                r += 1
                k = parent[k]
    return Lp, Li, Rp, Rk, Rpos


@njit(cache=True, nogil=True)
def _numeric(n, Ap, Ai, Ax, Lp, Li, Rp, Rk, Rpos, Lx):
    # Ap/Ai/Ax: lower triangle (rows >= column) of the permuted matrix.
    x = np.zeros(n)
    for j in range(n):
        for p in range(Ap[j], Ap[j + 1]):
            x[Ai[p]] = Ax[p]
        for r in range(Rp[j], Rp[j + 1]):
            k = Rk[r]
            pos = Rpos[r]
            ljk = Lx[pos]
            for p in range(pos, Lp[k + 1]):
                x[Li[p]] -= Lx[p] * ljk
        d = x[j]
        if not d > 0.0:
            return j
        ljj = np.sqrt(d)
        Lx[Lp[j]] = ljj
        x[j] = 0.0
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            Lx[p] = x[i] / ljj
            x[i] = 0.0
    return -1


@njit(cache=True, nogil=True)
def _lsolve(n, Lp, Li, Lx, b):
    # b is (n, m), overwritten with L^{-1} b
    m = b.shape[1]
    for c in range(m):
        for j in range(n):
            v = b[j, c] / Lx[Lp[j]]
            b[j, c] = v
            for p in range(Lp[j] + 1, Lp[j + 1]):
                b[Li[p], c] -= Lx[p] * v


@njit(cache=True, nogil=True)
def _ltsolve(n, Lp, Li, Lx, b):
    m = b.shape[1]
    for c in range(m):
        for j in range(n - 1, -1, -1):
            v = b[j, c]
            for p in range(Lp[j] + 1, Lp[j + 1]):
                v -= Lx[p] * b[Li[p], c]
            b[j, c] = v / Lx[Lp[j]]


def _minimum_degree_order(pattern):
    n = pattern.shape[0]
    # SuperLU's minimum degree on A + A^T; the values only need to keep the
    # pivots away from zero, no row pivoting is requested
    trial = (pattern + sp.identity(n, format="csc") * (pattern.sum() + n)).tocsc()
    lu = splu(
        trial,
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )
    return np.asarray(lu.perm_c, dtype=np.int64)


class SymbolicCholesky:
    """Ordering and factor pattern for a fixed symmetric sparsity pattern.

    Parameters
    ----------
    rows, cols : array_like of int
        Coordinates of all structurally nonzero entries, both triangles and
        the full diagonal.
    n : int
        Matrix dimension.
    ordering : {"auto", "mmd", "rcm", "natural"}
        Fill-reducing permutation. ``"auto"`` picks whichever of the
        minimum-degree and reverse Cuthill-McKee orderings gives the
        sparser factor.
    """

    def __init__(self, rows, cols, n, ordering="auto"):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        self.n = int(n)
        pattern = sp.csc_matrix(
            (np.ones(rows.shape[0]), (rows, cols)), shape=(self.n, self.n)
        )
        pattern.sum_duplicates()
        if ordering == "auto":
            candidates = [_minimum_degree_order(pattern), self._rcm(pattern)]
            analyses = [self._analyse(pattern, perm) for perm in candidates]
            best = int(np.argmin([a[1][-1] for a in analyses]))
            self.perm = candidates[best]
            self._set(analyses[best])
        else:
            if ordering == "mmd":
                perm = _minimum_degree_order(pattern)
            elif ordering == "rcm":
                perm = self._rcm(pattern)
            elif ordering == "natural":
                perm = np.arange(self.n, dtype=np.int64)
            else:
                raise ValueError(f"unknown ordering {ordering!r}")
            self.perm = perm
            self._set(self._analyse(pattern, perm))

        # map each input entry to its slot in the permuted lower triangle
        inv = np.empty(self.n, dtype=np.int64)
        inv[self.perm] = np.arange(self.n)
        pr, pc = inv[rows], inv[cols]
        self._keep = pr >= pc
        lower = sp.csc_matrix(
            (np.arange(1, self._keep.sum() + 1, dtype=float), (pr[self._keep], pc[self._keep])),
            shape=(self.n, self.n),
        )
        lower.sort_indices()
        self._Ap = lower.indptr.astype(np.int64)
        self._Ai = lower.indices.astype(np.int64)
        self._slot = np.empty(self._keep.sum(), dtype=np.int64)
        self._slot[lower.data.astype(np.int64) - 1] = np.arange(lower.nnz)

    def _rcm(self, pattern):
        return np.asarray(
            reverse_cuthill_mckee(pattern.tocsr(), symmetric_mode=True), dtype=np.int64
        )

    def _analyse(self, pattern, perm):
        permuted = pattern[perm][:, perm].tocsc()
        permuted.sort_indices()
        Ap = permuted.indptr.astype(np.int64)
        Ai = permuted.indices.astype(np.int64)
        parent = _etree(self.n, Ap, Ai)
        return parent, *_symbolic(self.n, Ap, Ai, parent)

    def _set(self, analysis):
        self.parent, self.Lp, self.Li, self._Rp, self._Rk, self._Rpos = analysis

    @property
    def nnz(self):
        """Number of stored entries in the factor."""
        return int(self.Lp[-1])

    def factor(self, values):
        """Numeric factorization for entry values aligned with ``rows, cols``."""
        values = np.asarray(values, dtype=float)
        Ax = np.empty(self._slot.shape[0])
        Ax[self._slot] = values[self._keep]
        Lx = np.empty(self.nnz)
        fail = _numeric(
            self.n, self._Ap, self._Ai, Ax, self.Lp, self.Li, self._Rp, self._Rk, self._Rpos, Lx
        )
        if fail >= 0:
            raise NotPositiveDefiniteError(self.perm[fail])
        return SparseFactor(self, Lx)


class SparseFactor:
    """Numeric factor ``P A P^T = L L^T`` sharing its pattern with a SymbolicCholesky."""

    def __init__(self, symbolic, Lx):
        self.symbolic = symbolic
        self.Lx = Lx

    @property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(self.Lx[self.symbolic.Lp[:-1]])))

    def _rhs(self, b):
        b = np.asarray(b, dtype=float)
        vec = b.ndim == 1
        work = np.ascontiguousarray(b[self.symbolic.perm].reshape(self.symbolic.n, -1))
        return work, vec

    def solve_lower(self, b):
        """``L^{-1} P b``, the whitening transform: its squared norm is ``b^T A^{-1} b``."""
        s = self.symbolic
        work, vec = self._rhs(b)
        _lsolve(s.n, s.Lp, s.Li, self.Lx, work)
        return work[:, 0] if vec else work

    def solve(self, b):
        """``A^{-1} b``."""
        s = self.symbolic
        work, vec = self._rhs(b)
        _lsolve(s.n, s.Lp, s.Li, self.Lx, work)
        _ltsolve(s.n, s.Lp, s.Li, self.Lx, work)
        out = np.empty_like(work)
        out[s.perm] = work
        return out[:, 0] if vec else out

    def to_sparse(self):
        """The permuted lower factor ``L`` as a CSC matrix."""
        s = self.symbolic
        return sp.csc_matrix((self.Lx, s.Li, s.Lp), shape=(s.n, s.n))
