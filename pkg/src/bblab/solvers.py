"""Preconditioned MINRES and CG, and spectral diagnostics."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .linalg import DimensionMismatch, NotSPD, extreme_generalized_eig, generalized_eig

DENSE_LIMIT = 5000


@dataclass
class SolverReport:
    iterations: int = 0
    history: list = field(default_factory=list)
    converged: bool = False
    seconds: float = 0.0
    breakdown: str | None = None
    lambda_min: float = float("nan")
    lambda_max: float = float("nan")
    condition: float = float("nan")

    @property
    def final_residual(self) -> float:
        return self.history[-1] if self.history else float("nan")


def _as_operator(A):
    if callable(A) and not sp.issparse(A) and not isinstance(A, np.ndarray):
        return A
    return lambda x: A @ x


def _identity(x):
    return np.array(x, dtype=float, copy=True)


def minres(A, b, M=None, rtol: float = 1e-8, max_iter: int = 1000, norm: str = "preconditioned",
           callback=None):
    """Preconditioned MINRES for symmetric A with symmetric positive definite M^-1.

    ``M`` applies the preconditioner (an approximation of A^-1 in the
    appropriate norm).  With ``norm='preconditioned'`` the stopping test
    uses the M-weighted residual norm sqrt(r^T M r) tracked by the
    recurrence; ``'unpreconditioned'`` uses the Euclidean norm of b - A x.
    The initial guess is zero.
    """
    if norm not in ("preconditioned", "unpreconditioned"):
        raise ValueError("norm must be 'preconditioned' or 'unpreconditioned'")
    t0 = time.perf_counter()
    Aop = _as_operator(A)
    Mop = M if M is not None else _identity
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n)
    rep = SolverReport()

    v_old = np.zeros(n)
    v = b.copy()
    z = Mop(v)
    g2 = float(z @ v)
    if g2 < 0:
        rep.breakdown = "preconditioner is not positive definite"
        rep.seconds = time.perf_counter() - t0
        return x, rep
    gamma = np.sqrt(g2)
    gamma_old = 1.0
    eta = gamma
    s_old = s = 0.0
    c_old = c = 1.0
    w_old = np.zeros(n)
    w = np.zeros(n)

    def measure():
        return abs(eta) if norm == "preconditioned" else float(np.linalg.norm(b - Aop(x)))

    r0 = measure()
    rep.history.append(r0)
    if r0 == 0.0:
        rep.converged = True
        rep.seconds = time.perf_counter() - t0
        return x, rep
    for j in range(1, max_iter + 1):
        z = z / gamma
        Az = Aop(z)
        delta = float(Az @ z)
        v_new = Az - (delta / gamma) * v - (gamma / gamma_old) * v_old
        z_new = Mop(v_new)
        g2 = float(z_new @ v_new)
        if g2 < -1e-14 * abs(delta) * gamma:
            rep.breakdown = "preconditioner is not positive definite"
            break
        gamma_new = np.sqrt(max(g2, 0.0))
        a0 = c * delta - c_old * s * gamma
        a1 = np.hypot(a0, gamma_new)
        a2 = s * delta + c_old * c * gamma
        a3 = s_old * gamma
        if a1 == 0.0:
            rep.breakdown = "Lanczos breakdown"
            break
        c_new, s_new = a0 / a1, gamma_new / a1
        w_new = (z - a3 * w_old - a2 * w) / a1
        x = x + c_new * eta * w_new
        eta = -s_new * eta
        rep.iterations = j
        res = measure()
        rep.history.append(res)
        if callback is not None:
            callback(x, j)
        if res <= rtol * r0 or gamma_new == 0.0:
            rep.converged = res <= rtol * r0 or gamma_new == 0.0
            break
        v_old, v = v, v_new
        z = z_new
        gamma_old, gamma = gamma, gamma_new
        s_old, s = s, s_new
        c_old, c = c, c_new
        w_old, w = w, w_new
    rep.seconds = time.perf_counter() - t0
    return x, rep


def cg(A, b, M=None, reduction: float = 1e8, max_iter: int = 1000, norm: str = "preconditioned",
       callback=None):
    """Preconditioned conjugate gradients from a zero initial guess.

    Stops once the residual norm has dropped by ``reduction``.  Norms:
    'preconditioned' is ||M r||_2, 'natural' is sqrt(r^T M r) and
    'unpreconditioned' is ||r||_2.
    """
    if norm not in ("preconditioned", "natural", "unpreconditioned"):
        raise ValueError("norm must be 'preconditioned', 'natural' or 'unpreconditioned'")
    t0 = time.perf_counter()
    Aop = _as_operator(A)
    Mop = M if M is not None else _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    r = b.copy()
    z = Mop(r)
    rz = float(r @ z)
    rep = SolverReport()

    def measure():
        if norm == "preconditioned":
            return float(np.linalg.norm(z))
        if norm == "natural":
            return float(np.sqrt(max(rz, 0.0)))
        return float(np.linalg.norm(r))

    r0 = measure()
    rep.history.append(r0)
    if r0 == 0.0:
        rep.converged = True
        rep.seconds = time.perf_counter() - t0
        return x, rep
    p = z.copy()
    for k in range(1, max_iter + 1):
        Ap = Aop(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            rep.breakdown = "indefinite operator (p^T A p <= 0)"
            break
        a = rz / pAp
        x = x + a * p
        r = r - a * Ap
        z = Mop(r)
        rz_new = float(r @ z)
        rz, rz_old = rz_new, rz
        rep.iterations = k
        res = measure()
        rep.history.append(res)
        if callback is not None:
            callback(x, k)
        if res * reduction <= r0:
            rep.converged = True
            break
        p = z + (rz / rz_old) * p
    rep.seconds = time.perf_counter() - t0
    return x, rep


def write_history(path, report: SolverReport) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iteration", "residual"])
        for k, r in enumerate(report.history):
            out.writerow([k, repr(float(r))])


# ----------------------------------------------------------------------
# spectral diagnostics


def condition_number(A, N, basis=None, dense_limit: int = DENSE_LIMIT) -> SolverReport:
    """kappa = max|lam| / min|lam| for A x = lam N x.

    ``basis`` (columns) restricts both matrices to a subspace first, e.g.
    to drop constrained dofs and multiplier directions.
    """
    if basis is not None:
        Z = sp.csr_matrix(basis)
        A = (Z.T @ A @ Z)
        N = (Z.T @ N @ Z)
    if A.shape != N.shape:
        raise DimensionMismatch("A and N must have the same shape")
    t0 = time.perf_counter()
    if A.shape[0] <= dense_limit:
        lam = generalized_eig(A, N)
        mags = np.abs(lam)
        lo, hi = float(mags.min()), float(mags.max())
    else:
        lo, hi = extreme_generalized_eig(A, N)
    rep = SolverReport(converged=True, lambda_min=lo, lambda_max=hi,
                       condition=hi / lo if lo > 0 else float("inf"))
    rep.seconds = time.perf_counter() - t0
    return rep


def _inv_sqrt_factor(N):
    N = N.toarray() if sp.issparse(N) else np.atleast_2d(np.asarray(N, dtype=float))
    try:
        return sla.cholesky(0.5 * (N + N.T), lower=True)
    except sla.LinAlgError:
        raise NotSPD("norm matrix is not positive definite") from None


def infsup_constant(B, norm_left, norm_right, rel_zero: float = 1e-10) -> float:
    """Smallest nonzero singular value of L^-1/2 B R^-1/2 (dense).

    ``B`` has one row per left dof and one column per right dof.
    """
    B = B.toarray() if sp.issparse(B) else np.atleast_2d(np.asarray(B, dtype=float))
    Ll = _inv_sqrt_factor(norm_left)
    Lr = _inv_sqrt_factor(norm_right)
    S = sla.solve_triangular(Ll, B, lower=True)
    S = sla.solve_triangular(Lr, S.T, lower=True).T
    sv = sla.svdvals(S)
    if sv.size == 0 or sv.max() == 0:
        return 0.0
    nonzero = sv[sv > rel_zero * sv.max()]
    return float(nonzero.min())
