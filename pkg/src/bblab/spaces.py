"""Lowest-order BDM vector spaces, piecewise constants and the block layout.

Each edge carries two degrees of freedom, the normal moments

    l_{e,k}(v) = 1/2 * int_{-1}^{1} (v . n_e)(x(s)) P_k(s) ds,   P_0 = 1, P_1 = s,

where x(s) runs from the lower-id endpoint (s = -1) to the higher-id one
and n_e is the global edge normal.  Because the functionals are defined
with global data the dof map needs no sign flips: normal traces of the
cell-local bases agree across every interior edge by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh, expand_segments
from .quadrature import edge_points, gauss_line


class BDM1Space:
    """Vector-valued piecewise linears with continuous normal component."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        C = mesh.n_cells
        self.dim = 2 * mesh.n_edges
        ce = mesh.cell_edges
        self.cell_dofs = np.stack([2 * ce, 2 * ce + 1], axis=2).reshape(C, 6)

        xc = mesh.cell_centroid
        hc = mesh.cell_diameter
        s, w = gauss_line(2)
        pts, _, _ = edge_points(mesh, 2)  # (E, 2, 2)
        P = np.stack([np.ones_like(s), s])  # (2, Q)
        n = mesh.edge_normal
        D = np.zeros((C, 6, 6))
        for le in range(3):
            e = ce[:, le]
            X = (pts[e] - xc[:, None, :]) / hc[:, None, None]  # (C, Q, 2)
            ne = n[e]  # (C, 2)
            # monomials (1,0) (0,1) (X,0) (Y,0) (0,X) (0,Y), dotted with n
            mono = np.stack(
                [
                    np.broadcast_to(ne[:, None, 0], X.shape[:2]),
                    np.broadcast_to(ne[:, None, 1], X.shape[:2]),
                    X[..., 0] * ne[:, None, 0],
                    X[..., 1] * ne[:, None, 0],
                    X[..., 0] * ne[:, None, 1],
                    X[..., 1] * ne[:, None, 1],
                ],
                axis=2,
            )  # (C, Q, 6)
            for k in range(2):
                D[:, 2 * le + k, :] = 0.5 * np.einsum("q,cqj->cj", w * P[k], mono)
        coef = np.linalg.inv(D)  # column i holds basis function i
        self.coef_a = np.ascontiguousarray(coef[:, 0:2, :].transpose(0, 2, 1))  # (C, 6, 2)
        g = coef[:, 2:6, :].transpose(0, 2, 1).reshape(C, 6, 2, 2)
        self.coef_G = g / hc[:, None, None, None]  # grad of basis i on cell c

    # ------------------------------------------------------------------
    @property
    def basis_grad(self):
        return self.coef_G

    @property
    def basis_strain(self):
        G = self.coef_G
        return 0.5 * (G + G.transpose(0, 1, 3, 2))

    @property
    def basis_div(self):
        return self.coef_G[..., 0, 0] + self.coef_G[..., 1, 1]

    def basis_values(self, points, cells=None):
        """Basis values at per-cell points (C, Q, 2) -> (C, 6, Q, 2)."""
        if cells is None:
            cells = slice(None)
        a = self.coef_a[cells]
        G = self.coef_G[cells]
        X = points - self.mesh.cell_centroid[cells][:, None, :]
        return a[:, :, None, :] + np.einsum("cirs,cqs->ciqr", G, X)

    def evaluate(self, coeffs, points, cells=None):
        """Field values at per-cell points (C, Q, 2) -> (C, Q, 2)."""
        if cells is None:
            cells = np.arange(self.mesh.n_cells)
        loc = np.asarray(coeffs)[self.cell_dofs[cells]]  # (C, 6)
        return np.einsum("ci,ciqr->cqr", loc, self.basis_values(points, cells))

    def cell_gradient(self, coeffs):
        loc = np.asarray(coeffs)[self.cell_dofs]
        return np.einsum("ci,cirs->crs", loc, self.coef_G)

    def cell_divergence(self, coeffs):
        loc = np.asarray(coeffs)[self.cell_dofs]
        return np.einsum("ci,ci->c", loc, self.basis_div)

    def interpolate(self, field, npts: int = 5) -> np.ndarray:
        """Canonical interpolant: normal moments of ``field`` on every edge.

        ``field`` maps an (N, 2) array of points to (N, 2) vectors.
        """
        pts, s, w = edge_points(self.mesh, npts)
        E = self.mesh.n_edges
        vals = np.asarray(field(pts.reshape(-1, 2)), dtype=float).reshape(E, npts, 2)
        vn = np.einsum("eqr,er->eq", vals, self.mesh.edge_normal)
        out = np.empty(self.dim)
        out[0::2] = 0.5 * vn @ w
        out[1::2] = 0.5 * vn @ (w * s)
        return out

    def edge_dofs(self, edges) -> np.ndarray:
        edges = np.asarray(edges, dtype=np.int64)
        return np.stack([2 * edges, 2 * edges + 1], axis=1).ravel()


def build_bdm1(mesh: TriMesh) -> BDM1Space:
    return BDM1Space(mesh)


@dataclass(frozen=True)
class P0Space:
    mesh: TriMesh

    @property
    def dim(self) -> int:
        return self.mesh.n_cells

    @property
    def measures(self) -> np.ndarray:
        return self.mesh.cell_area


@dataclass(frozen=True)
class BcSpec:
    """Which boundary segments carry which condition.

    ``*_normal`` segments get the strong condition w.n = 0 on the BDM dofs,
    ``u_nitsche``/``v_nitsche`` segments get the tangential Dirichlet
    condition through boundary facet terms of the DG form.  With
    ``zero_mean`` each pressure gets a scalar Lagrange multiplier.
    """

    name: str = "custom"
    u_normal: tuple = ()
    u_nitsche: tuple = ()
    v_normal: tuple = ()
    v_nitsche: tuple = ()
    zero_mean: bool = False

    def __post_init__(self):
        for f in ("u_normal", "u_nitsche", "v_normal", "v_nitsche"):
            object.__setattr__(self, f, expand_segments(getattr(self, f)))

    @property
    def essential(self) -> dict:
        return {"u": self.u_normal, "v": self.v_normal}


PRESETS = {
    # u = 0 and v.n = 0 on the whole boundary, tangential v natural
    "mms": BcSpec("mms", "all", "all", "all", (), True),
    # u = 0 and v.n = 0 on left/right only, traction-free elsewhere
    "sensitivity": BcSpec("sensitivity", "left,right", "left,right", "left,right", (), False),
    # strong u.n = 0 and v.n = 0 everywhere, no boundary facet terms
    "mg": BcSpec("mg", "all", (), "all", (), True),
}


def bc_preset(name: str) -> BcSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown boundary preset {name!r}; have {sorted(PRESETS)}") from None


def boundary_dof_sets(space: BDM1Space, bc_spec) -> dict:
    """Dof indices (space-local) carrying the essential normal condition, per field.

    ``bc_spec`` is a BcSpec or a mapping field -> segments.
    """
    mapping = bc_spec.essential if isinstance(bc_spec, BcSpec) else dict(bc_spec)
    out = {}
    for fieldname, segments in mapping.items():
        edges = space.mesh.edges_on(segments)
        out[fieldname] = np.sort(space.edge_dofs(edges))
    return out


@dataclass(frozen=True)
class SystemLayout:
    """Global index ranges: u | v_1..v_n | p_1..p_n | multipliers."""

    n: int
    n_u: int
    n_p: int
    multipliers: bool = True

    @property
    def n_v(self) -> int:
        return self.n_u

    def u(self) -> slice:
        return slice(0, self.n_u)

    def v(self, i: int) -> slice:
        start = self.n_u * (1 + i)
        return slice(start, start + self.n_u)

    def v_all(self) -> slice:
        return slice(self.n_u, self.n_u * (1 + self.n))

    def p(self, i: int) -> slice:
        start = self.n_u * (1 + self.n) + i * self.n_p
        return slice(start, start + self.n_p)

    def p_all(self) -> slice:
        start = self.n_u * (1 + self.n)
        return slice(start, start + self.n * self.n_p)

    def mult(self, i: int) -> int:
        if not self.multipliers:
            raise IndexError("layout has no multipliers")
        return self.n_u * (1 + self.n) + self.n * self.n_p + i

    def mult_all(self) -> slice:
        start = self.n_u * (1 + self.n) + self.n * self.n_p
        return slice(start, start + (self.n if self.multipliers else 0))

    @property
    def total(self) -> int:
        return self.n_u * (1 + self.n) + self.n * self.n_p + (self.n if self.multipliers else 0)

    def ranges(self) -> list[tuple[str, slice]]:
        out = [("u", self.u())]
        out += [(f"v{i + 1}", self.v(i)) for i in range(self.n)]
        out += [(f"p{i + 1}", self.p(i)) for i in range(self.n)]
        if self.multipliers:
            out += [(f"m{i + 1}", slice(self.mult(i), self.mult(i) + 1)) for i in range(self.n)]
        return out
