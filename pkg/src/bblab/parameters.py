"""Material parameters and the derived scaling matrices of the rescaled system."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla


class InvalidParams(ValueError):
    pass


def _tup(x):
    return tuple(float(v) for v in np.ravel(x))


@dataclass(frozen=True)
class PhysicalParams:
    """Spatially constant coefficients of the n-network model.

    ``beta`` is the full symmetric transfer matrix with zero diagonal.
    """

    n: int = 1
    mu: float = 1.0
    lam: float = 1.0
    alpha: tuple = (1.0,)
    c: tuple = (1.0,)
    nu: tuple = (1.0,)
    K: tuple = (1.0,)
    beta: tuple = ((0.0,),)
    tau: float = 1.0
    dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "alpha", _tup(self.alpha))
        object.__setattr__(self, "c", _tup(self.c))
        object.__setattr__(self, "nu", _tup(self.nu))
        object.__setattr__(self, "K", _tup(self.K))
        b = np.asarray(self.beta, dtype=float).reshape(self.n, self.n)
        object.__setattr__(self, "beta", tuple(tuple(float(v) for v in row) for row in b))
        for name in ("alpha", "c", "nu", "K"):
            if len(getattr(self, name)) != self.n:
                raise InvalidParams(f"{name} must have {self.n} entries")

    @property
    def beta_matrix(self) -> np.ndarray:
        return np.array(self.beta, dtype=float)

    def with_(self, **kw) -> "PhysicalParams":
        return replace(self, **kw)

    def violations(self, strict: bool = True) -> list[str]:
        out = []
        if self.mu <= 0:
            out.append("mu > 0")
        if self.dim * self.lam + 2 * self.mu <= 0:
            out.append("d*lambda + 2*mu > 0")
        a = np.array(self.alpha)
        if strict and np.any((a <= 0) | (a > 1)):
            out.append("0 < alpha_i <= 1")
        if not strict and np.any((a < 0) | (a > 1)):
            out.append("0 <= alpha_i <= 1")
        if np.any(np.array(self.c) < 0):
            out.append("c_i >= 0")
        b = self.beta_matrix
        if not np.allclose(b, b.T, rtol=0, atol=0) or np.any(b < 0):
            out.append("beta_ij = beta_ji >= 0")
        if np.any(np.diag(b) != 0):
            out.append("beta_ii = 0")
        if np.any(np.array(self.K) <= 0):
            out.append("K_i > 0")
        if np.any(np.array(self.nu) <= 0):
            out.append("nu_i > 0")
        if self.tau <= 0:
            out.append("tau > 0")
        return out


@dataclass(frozen=True)
class DerivedParams:
    params: PhysicalParams
    s: np.ndarray
    gamma: np.ndarray
    R: float
    Lambda1: np.ndarray
    Lambda2: np.ndarray
    Lambda3: np.ndarray
    Lambda4: np.ndarray
    Lambda: np.ndarray
    Lambda_inv: np.ndarray
    cond_Lambda: float = field(default=float("nan"))

    @property
    def exchange(self) -> np.ndarray:
        """Lambda1 + Lambda2, the pressure block entering with a minus sign."""
        return self.Lambda1 + self.Lambda2


def derive(p: PhysicalParams, strict: bool = True) -> DerivedParams:
    """Scaled coefficients s, gamma, R and the matrices Lambda_1..4, Lambda, Lambda^-1.

    ``strict=False`` admits alpha_i = 0, used only for limit checks.
    """
    bad = p.violations(strict=strict)
    if bad:
        raise InvalidParams("violated: " + "; ".join(bad))
    tau = p.tau
    alpha = np.array(p.alpha)
    c = np.array(p.c)
    nu = np.array(p.nu)
    K = np.array(p.K)
    beta = p.beta_matrix
    s = c + tau * beta.sum(axis=1)
    gamma = tau * nu / K
    R = 1.0 / np.max((1.0 + nu) * tau / K)
    L1 = -tau * beta
    L2 = np.diag(s)
    L3 = tau**2 * R * np.eye(p.n)
    L4 = np.outer(alpha, alpha) / (2 * p.mu + p.lam)
    Lam = L1 + L2 + L3 + L4
    Lam_inv = _inverse(Lam)
    w = np.linalg.eigvalsh(Lam)
    if w[0] <= 0:
        raise InvalidParams("Lambda is not positive definite")
    return DerivedParams(p, s, gamma, float(R), L1, L2, L3, L4, Lam, Lam_inv, float(w[-1] / w[0]))


def _inverse(M):
    lu, piv = sla.lu_factor(M)
    return sla.lu_solve((lu, piv), np.eye(len(M)))


def sherman_morrison_inverse(a: float, b: float, alpha) -> np.ndarray:
    """Closed-form inverse of a*I + b*alpha*alpha^T."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.size
    return np.eye(n) / a - np.outer(alpha, alpha) / (a * (a / b + alpha @ alpha))


def sherman_morrison_quadratic(a: float, b: float, alpha) -> float:
    """alpha^T (a I + b alpha alpha^T)^-1 alpha, in closed form (bounded by 1/b)."""
    alpha = np.asarray(alpha, dtype=float)
    aa = alpha @ alpha
    return aa / (a / b + aa) / b


# ----------------------------------------------------------------------
# key=value parameter files

_SCALAR_KEYS = {"mu": "mu", "lambda": "lam", "lam": "lam", "tau": "tau"}
_VECTOR_KEYS = {"alpha": "alpha", "c": "c", "nu": "nu", "K": "K"}


def params_from_mapping(values: dict) -> PhysicalParams:
    """Build PhysicalParams from flat keys (n, mu, lambda, tau, alpha_i, c_i, nu_i, K_i, beta_ij)."""
    n = int(float(values.get("n", 1)))
    kw = {"n": n}
    vec = {k: np.ones(n) for k in _VECTOR_KEYS.values()}
    beta = np.zeros((n, n))
    for key, raw in values.items():
        if key == "n":
            continue
        if key in _SCALAR_KEYS:
            kw[_SCALAR_KEYS[key]] = float(raw)
            continue
        m = re.fullmatch(r"(alpha|c|nu|K)_(\d+)", key)
        if m:
            i = int(m.group(2)) - 1
            if not 0 <= i < n:
                raise InvalidParams(f"{key}: index out of range for n={n}")
            vec[_VECTOR_KEYS[m.group(1)]][i] = float(raw)
            continue
        m = re.fullmatch(r"beta_(\d)(\d)", key)
        if m:
            i, j = int(m.group(1)) - 1, int(m.group(2)) - 1
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise InvalidParams(f"{key}: bad transfer index for n={n}")
            beta[i, j] = beta[j, i] = float(raw)
            continue
        raise InvalidParams(f"unknown parameter key {key!r}")
    kw.update({k: tuple(v) for k, v in vec.items()})
    kw["beta"] = beta
    return PhysicalParams(**kw)


def read_kv(path) -> list[tuple[str, str]]:
    """Parse key=value lines; '#' starts a comment; keys may repeat."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out.append((k.strip(), v.strip()))
    return out


def read_params(path) -> PhysicalParams:
    return params_from_mapping(dict(read_kv(path)))


def two_network(lam=1.0, nu2=1.0, K2=1.0, alpha2=1.0, beta=1.0, c2=1.0, mu=1.0, tau=1.0):
    """Two networks with network 1 fixed to unit properties."""
    return PhysicalParams(
        n=2, mu=mu, lam=lam, tau=tau,
        alpha=(1.0, alpha2), c=(1.0, c2), nu=(1.0, nu2), K=(1.0, K2),
        beta=((0.0, beta), (beta, 0.0)),
    )


def single_network(lam=1.0, nu=1.0, K=1.0, alpha=1e-3, c=1e-2, mu=1.0, tau=0.1):
    """One network with the fixed values used for the error study."""
    return PhysicalParams(n=1, mu=mu, lam=lam, tau=tau, alpha=(alpha,), c=(c,), nu=(nu,),
                          K=(K,), beta=((0.0,),))
