"""Manufactured single-network solution, its loads, and weighted error norms.

    u   = curl phi,   phi   = x^2 (x-1)^2 y^2 (y-1)^2
    v_1 = grad phi_1, phi_1 = x^4 (x-1)^4 y^4 (y-1)^4
    p_1 = sin(pi (x - y))

All fields vanish on the boundary of the unit square.  The polynomial
parts are products of one-dimensional polynomials, so every derivative is
exact.  sin(pi (x - y)) = sin(pi x) cos(pi y) - cos(pi x) sin(pi y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .assembly import FeSystem, assemble_rhs
from .parameters import PhysicalParams, derive
from .quadrature import edge_points, map_to_cells, triangle_rule
from .spaces import BDM1Space

_X2 = Polynomial([0, 0, 1]) * Polynomial([-1, 1]) ** 2  # x^2 (x-1)^2
_X4 = _X2 * _X2  # x^4 (x-1)^4


def _d(P: Polynomial, k: int) -> Polynomial:
    return P.deriv(k) if k else P


def _phi(P, x, y, dx, dy):
    """d^dx/dx d^dy/dy of P(x) P(y)."""
    return _d(P, dx)(x) * _d(P, dy)(y)


def _sin_part(x, y, dx, dy):
    """d^dx/dx d^dy/dy of sin(pi (x - y))."""
    return np.pi ** (dx + dy) * (-1.0) ** dy * np.sin(np.pi * (x - y) + (dx + dy) * np.pi / 2)


@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form fields; ``deriv(name, comp, dx, dy)`` gives any partial derivative."""

    def deriv(self, name: str, comp: int, dx: int, dy: int, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        if name == "u":  # (phi_y, -phi_x)
            return _phi(_X2, x, y, dx, dy + 1) if comp == 0 else -_phi(_X2, x, y, dx + 1, dy)
        if name == "v":  # (phi1_x, phi1_y)
            return _phi(_X4, x, y, dx + 1, dy) if comp == 0 else _phi(_X4, x, y, dx, dy + 1)
        if name == "p":
            return _sin_part(x, y, dx, dy)
        raise ValueError(f"unknown field {name!r}")

    def vector(self, name, pts, dx=0, dy=0):
        return np.stack([self.deriv(name, k, dx, dy, pts) for k in range(2)], axis=-1)

    def grad(self, name, pts):
        """(..., 2, 2) with [r, s] = d comp_r / d x_s."""
        return np.stack([self.vector(name, pts, 1, 0), self.vector(name, pts, 0, 1)], axis=-1)

    def div(self, name, pts):
        return self.deriv(name, 0, 1, 0, pts) + self.deriv(name, 1, 0, 1, pts)

    def hessians(self, name, pts):
        """Second derivatives (..., 2, 3): per component (xx, xy, yy)."""
        return np.stack([np.stack([self.deriv(name, k, 2, 0, pts), self.deriv(name, k, 1, 1, pts),
                                   self.deriv(name, k, 0, 2, pts)], axis=-1) for k in range(2)],
                        axis=-2)

    def laplace_plus_graddiv(self, name, pts):
        """Delta w + grad div w, equal to 2 div eps(w)."""
        H = self.hessians(name, pts)
        lap = H[..., 0] + H[..., 2]
        gd = np.stack([H[..., 0, 0] + H[..., 1, 1], H[..., 0, 1] + H[..., 1, 2]], axis=-1)
        return lap + gd

    def grad_div(self, name, pts):
        H = self.hessians(name, pts)
        return np.stack([H[..., 0, 0] + H[..., 1, 1], H[..., 0, 1] + H[..., 1, 2]], axis=-1)


MMS = ManufacturedSolution()


def eval_exact(field: str, pts) -> np.ndarray:
    """Value of 'u', 'v' (vectors) or 'p' (scalar) at points (..., 2)."""
    if field == "p":
        return MMS.deriv("p", 0, 0, 0, pts)
    return MMS.vector(field, pts)


def eval_rhs(params: PhysicalParams, pts):
    """Loads (f, flux-row load, mass-row load) of the rescaled single-network system.

    The flux and mass rows are already rescaled, i.e. they are the data
    that enter the discrete right-hand side directly.
    """
    if params.n != 1:
        raise ValueError("the manufactured solution is defined for one network")
    d = derive(params, strict=False)
    mu, lam, tau = params.mu, params.lam, params.tau
    alpha, K = params.alpha[0], params.K[0]
    gp = np.stack([MMS.deriv("p", 0, 1, 0, pts), MMS.deriv("p", 0, 0, 1, pts)], axis=-1)
    p = MMS.deriv("p", 0, 0, 0, pts)
    f = -mu * MMS.laplace_plus_graddiv("u", pts) - lam * MMS.grad_div("u", pts) - alpha * gp
    r = (-0.5 * d.gamma[0] * MMS.laplace_plus_graddiv("v", pts)
         + (tau / K) * MMS.vector("v", pts) - tau * gp)
    g = -d.s[0] * p + alpha * MMS.div("u", pts) + tau * MMS.div("v", pts)
    return f, r, g


def mms_rhs(params: PhysicalParams, space: BDM1Space, layout) -> np.ndarray:
    return assemble_rhs(
        params, space, layout,
        f=lambda x: eval_rhs(params, x)[0],
        r=[lambda x: eval_rhs(params, x)[1]],
        g=[lambda x: eval_rhs(params, x)[2]],
        prescaled=True,
    )


def interpolate_exact(system: FeSystem) -> np.ndarray:
    """Coefficient vector of the canonical interpolants (u, v) and cell means of p."""
    space = system.space
    x = np.zeros(system.layout.total)
    x[system.layout.u()] = space.interpolate(lambda q: eval_exact("u", q))
    x[system.layout.v(0)] = space.interpolate(lambda q: eval_exact("v", q))
    ref, w = triangle_rule(8)
    pts = map_to_cells(space.mesh, ref)
    x[system.layout.p(0)] = eval_exact("p", pts) @ w
    return x


def _dg_parts(space: BDM1Space, coeffs, name: str, solution=MMS, degree: int = 8,
              facet_points: int = 5):
    """Squared (broken H1, facet jump, h^2 second-derivative, L2, div) error parts."""
    mesh = space.mesh
    ref, w = triangle_rule(degree)
    pts = map_to_cells(mesh, ref)
    area = mesh.cell_area

    vals = space.evaluate(coeffs, pts)
    e_val = solution.vector(name, pts) - vals
    l2 = np.sum((e_val ** 2).sum(-1) @ w * area)
    e_grad = solution.grad(name, pts) - space.cell_gradient(coeffs)[:, None]
    h1 = np.sum((e_grad ** 2).sum((-1, -2)) @ w * area)
    e_div = solution.div(name, pts) - space.cell_divergence(coeffs)[:, None]
    dv = np.sum((e_div ** 2) @ w * area)
    # discrete fields are linear per cell, so only the exact field has a second derivative
    H = solution.hessians(name, pts)
    semi2 = (H[..., 0] ** 2 + 2 * H[..., 1] ** 2 + H[..., 2] ** 2).sum(-1)
    h2 = np.sum(mesh.cell_diameter ** 2 * (semi2 @ w) * area)

    # tangential jumps of the error; on boundary edges the trace of the error itself
    epts, _, ew = edge_points(mesh, facet_points)
    t = mesh.edge_tangent
    c0, c1 = mesh.edge_cells[:, 0], mesh.edge_cells[:, 1]
    exact_t = np.einsum("eqr,er->eq", solution.vector(name, epts), t)
    jump = exact_t - np.einsum("eqr,er->eq", space.evaluate(coeffs, epts, c0), t)
    inner = c1 >= 0
    jump_in = np.einsum("eqr,er->eq", space.evaluate(coeffs, epts[inner], c1[inner]), t[inner])
    jump[inner] = jump[inner] - (exact_t[inner] - jump_in)
    # h_e^-1 times the edge integral (|e|/2) sum w_q: the lengths cancel
    facets = 0.5 * np.sum(jump ** 2 @ ew)
    return dict(h1=h1, facet=facets, h2=h2, l2=l2, div=dv)


def compute_errors(system: FeSystem, x, solution=MMS) -> tuple[float, float, float]:
    """(e_U, e_V, e_P) of a discrete single-network solution ``x``.

    ``solution`` supplies the reference fields through the interface of
    ManufacturedSolution (vector, grad, div, hessians, deriv); its fields
    must be continuous.
    """
    params = system.params
    if params.n != 1:
        raise ValueError("the manufactured solution is defined for one network")
    d = system.derived
    space = system.space
    lay = system.layout
    x = np.asarray(x, dtype=float)

    pu = _dg_parts(space, x[lay.u()], "u", solution)
    e_u = pu["h1"] + pu["facet"] + pu["h2"] + params.lam * pu["div"]

    pv = _dg_parts(space, x[lay.v(0)], "v", solution)
    e_v = (d.gamma[0] * (pv["h1"] + pv["facet"] + pv["h2"])
           + params.tau / params.K[0] * pv["l2"]
           + params.tau ** 2 * d.Lambda_inv[0, 0] * pv["div"])

    ref, w = triangle_rule(8)
    pts = map_to_cells(space.mesh, ref)
    ep = solution.deriv("p", 0, 0, 0, pts) - x[lay.p(0)][:, None]
    e_p = d.Lambda[0, 0] * np.sum((ep ** 2) @ w * space.mesh.cell_area)
    return float(np.sqrt(e_u)), float(np.sqrt(e_v)), float(np.sqrt(e_p))
