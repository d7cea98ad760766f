"""Sparse/dense linear algebra used by assembly, preconditioners and diagnostics.

Sparse matrices are plain ``scipy.sparse.csr_matrix`` objects with sorted,
duplicate-free indices.  Factorizations wrap SuperLU.
"""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# Saddle-point blocks routinely span 1e16 in magnitude, so by default only
# exactly vanishing or non-finite pivots count as singular.
PIVOT_TOL = 0.0


class DimensionMismatch(ValueError):
    pass


class SingularMatrix(ArithmeticError):
    def __init__(self, pivot=None, message="matrix is singular"):
        self.pivot = pivot
        where = f" at pivot {pivot}" if pivot is not None else ""
        super().__init__(f"{message}{where}")


class NotSPD(ArithmeticError):
    pass


def csr(rows, cols, vals, shape) -> sp.csr_matrix:
    """Build a CSR matrix from coordinate triplets, summing duplicates.

    The merge is a stable sort on (row, col) followed by a sequential
    reduction, so the result does not depend on anything but input order.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    key = rows * shape[1] + cols
    order = np.argsort(key, kind="stable")
    key, vals = key[order], vals[order]
    uniq, start = np.unique(key, return_index=True)
    summed = np.add.reduceat(vals, start) if len(vals) else vals
    r = uniq // shape[1]
    c = uniq % shape[1]
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, r + 1, 1)
    indptr = np.cumsum(indptr)
    return sp.csr_matrix((summed, c, indptr), shape=shape)


def spmv(A: sp.csr_matrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"matrix has {A.shape[1]} columns, vector has {x.shape[0]} entries")
    return A @ x


def is_symmetric(A, tol=1e-12) -> bool:
    A = sp.csr_matrix(A)
    amax = abs(A).max() if A.nnz else 0.0
    if amax == 0:
        return True
    diff = A - A.T
    return (abs(diff).max() if diff.nnz else 0.0) <= tol * amax


def submatrix(A: sp.csr_matrix, rows, cols) -> sp.csr_matrix:
    return A[rows][:, cols].tocsr()


class Factorization:
    """Sparse LU (or symmetric-ordered LDL-like) factorization of a square matrix."""

    def __init__(self, A, symmetric: bool = False, pivot_tol: float = PIVOT_TOL):
        A = sp.csc_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch("factorize needs a square matrix")
        self.shape = A.shape
        self.symmetric = symmetric
        self.pivot_tol = pivot_tol
        if symmetric:
            opts = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                        options=dict(SymmetricMode=True))
        else:
            opts = dict(permc_spec="COLAMD")
        try:
            self._lu = spla.splu(A, **opts)
        except RuntimeError:
            raise SingularMatrix(_locate_zero_pivot(A), "factorization failed") from None
        # pivots are judged against the largest entry of their own column,
        # so blocks of very different magnitude do not trip the test
        udiag = np.abs(self._lu.U.diagonal())
        colmax = abs(A).max(axis=0).toarray().ravel()[self._lu.perm_c]
        small = np.flatnonzero((udiag <= pivot_tol * colmax) | ~np.isfinite(udiag))
        if small.size:
            raise SingularMatrix(int(small[0]))

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise DimensionMismatch("right-hand side has wrong length")
        return self._lu.solve(b)

    __call__ = solve


def _locate_zero_pivot(A):
    if A.shape[0] > 3000:
        return None
    _, _, U = sla.lu(A.toarray())
    d = np.abs(np.diag(U))
    hits = np.flatnonzero(d <= 1e-14 * max(d.max(), np.finfo(float).tiny))
    return int(hits[0]) if hits.size else None


def factorize(A, symmetric: bool = False) -> Factorization:
    return Factorization(A, symmetric=symmetric)


def solve(F: Factorization, b) -> np.ndarray:
    return F.solve(b)


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def generalized_eig(A, N, equilibrate: bool = True) -> np.ndarray:
    """All eigenvalues of A x = lam N x, ascending.

    A must be symmetric and N symmetric positive definite.  With
    ``equilibrate`` both are scaled by diag(N)^-1/2 on either side first,
    which leaves the spectrum unchanged but tames badly scaled blocks.
    """
    A = _dense(A)
    N = _dense(N)
    if A.shape != N.shape or A.shape[0] != A.shape[1]:
        raise DimensionMismatch("A and N must be square and of equal size")
    if equilibrate:
        d = np.diag(N)
        if np.any(d <= 0):
            raise NotSPD("N has a non-positive diagonal entry")
        s = 1.0 / np.sqrt(d)
        A = A * s[:, None] * s[None, :]
        N = N * s[:, None] * s[None, :]
    A = 0.5 * (A + A.T)
    N = 0.5 * (N + N.T)
    try:
        return sla.eigh(A, b=N, eigvals_only=True, driver="gv")
    except sla.LinAlgError:
        raise NotSPD("N is not positive definite") from None


def extreme_generalized_eig(A, N, tol=1e-8):
    """(min |lam|, max |lam|) of A x = lam N x via Lanczos, for large problems."""
    A = sp.csc_matrix(A)
    N = sp.csc_matrix(N)
    Nf = factorize(N, symmetric=True)
    Minv = spla.LinearOperator(N.shape, matvec=Nf.solve, dtype=float)
    big = spla.eigsh(A, k=1, M=N, Minv=Minv, which="LM", tol=tol, return_eigenvectors=False)
    Af = factorize(A)
    OPinv = spla.LinearOperator(A.shape, matvec=Af.solve, dtype=float)
    small = spla.eigsh(A, k=1, M=N, sigma=0.0, OPinv=OPinv, which="LM", tol=tol,
                       return_eigenvectors=False)
    return float(abs(small[0])), float(abs(big[0]))


# ----------------------------------------------------------------------
# Matrix Market and plain-text vectors


def write_mtx(path, A, symmetric: bool | None = None) -> None:
    A = sp.coo_matrix(A)
    if symmetric is None:
        symmetric = is_symmetric(A)
    scipy.io.mmwrite(str(path), A, symmetry="symmetric" if symmetric else "general",
                     precision=17)


def read_mtx(path) -> sp.csr_matrix:
    A = sp.csr_matrix(scipy.io.mmread(str(path)))
    A.sum_duplicates()
    A.sort_indices()
    return A


def write_vector(path, x) -> None:
    np.savetxt(str(path), np.asarray(x, dtype=float), fmt="%.17g")


def read_vector(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(str(path), dtype=float))
