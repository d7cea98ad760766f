"""Bilinear forms on BDM1 x P0 and the assembled saddle-point system.

Block structure of the operator (n networks, all blocks symmetric):

    [ 2mu a_h + lam D      0                    alpha_j B          ]
    [ 0                   g_i a_h + tau/K_i M  tau B  (i = j)     ]
    [ alpha_i B^T         tau B^T (i = j)      -(L1 + L2) (x) M_p ]

plus one zero-mean multiplier per pressure when the boundary preset asks
for it.  ``a_h`` is the symmetric interior-penalty strain form, ``D`` the
div-div form, ``M`` the vector mass matrix, ``B`` the (div w, q) pairing
and ``M_p`` the diagonal P0 mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import csr, is_symmetric
from .mesh import TriMesh
from .parameters import DerivedParams, PhysicalParams, derive
from .quadrature import edge_points, map_to_cells, triangle_rule
from .spaces import BcSpec, BDM1Space, P0Space, SystemLayout, bc_preset, boundary_dof_sets

DEFAULT_ETA = 3.0
FACET_POINTS = 3


def _scatter(dofs, local, n):
    """COO triplets for local matrices local[k] on dofs[k] -> CSR (n x n)."""
    m = dofs.shape[1]
    rows = np.repeat(dofs, m, axis=1)
    cols = np.tile(dofs, (1, m))
    return csr(rows, cols, local.reshape(len(dofs), -1), (n, n))


def assemble_strain_cells(space: BDM1Space) -> sp.csr_matrix:
    eps = space.basis_strain
    area = space.mesh.cell_area
    local = area[:, None, None] * np.einsum("cirs,cjrs->cij", eps, eps)
    return _scatter(space.cell_dofs, local, space.dim)


def _facet_terms(space, edges, eta, use_grad=False, consistency=True):
    """Facet contributions of the interior-penalty form on the given edges."""
    mesh = space.mesh
    edges = np.asarray(edges, dtype=np.int64)
    if edges.size == 0:
        return sp.csr_matrix((space.dim, space.dim))
    pts, s, w = edge_points(mesh, FACET_POINTS, edges)
    t = mesh.edge_tangent[edges]
    nrm = mesh.edge_normal[edges]
    L = mesh.edge_length[edges]
    c0 = mesh.edge_cells[edges, 0]
    c1 = mesh.edge_cells[edges, 1]
    interior = c1 >= 0
    tensor = space.basis_grad if use_grad else space.basis_strain

    def side(idx, cells, sign, weight):
        vals = space.basis_values(pts[idx], cells)  # (S, 6, Q, 2)
        jump = sign * np.einsum("siqr,sr->siq", vals, t[idx])
        avg = weight * np.einsum("sr,sirk,sk->si", t[idx], tensor[cells], nrm[idx])
        return jump, avg, space.cell_dofs[cells]

    blocks = []
    if np.any(interior):
        I = np.flatnonzero(interior)
        j0, a0, d0 = side(I, c0[I], 1.0, 0.5)
        j1, a1, d1 = side(I, c1[I], -1.0, 0.5)
        blocks.append((I, np.concatenate([j0, j1], 1), np.concatenate([a0, a1], 1),
                       np.concatenate([d0, d1], 1)))
    if np.any(~interior):
        B = np.flatnonzero(~interior)
        jb, ab, db = side(B, c0[B], 1.0, 1.0)
        blocks.append((B, jb, ab, db))

    mats = []
    for idx, J, A, dofs in blocks:
        Le = L[idx]
        wq = 0.5 * Le[:, None] * w[None, :]  # physical weights (S, Q)
        Jint = np.einsum("sq,siq->si", wq, J)  # integral of jump
        local = eta / Le[:, None, None] * np.einsum("sq,siq,sjq->sij", wq, J, J)
        if consistency:
            local -= A[:, :, None] * Jint[:, None, :] + Jint[:, :, None] * A[:, None, :]
        mats.append(_scatter(dofs, local, space.dim))
    return sum(mats[1:], mats[0])


def _facet_set(mesh: TriMesh, segments) -> np.ndarray:
    interior = np.flatnonzero(~mesh.boundary_edge)
    return np.sort(np.concatenate([interior, mesh.edges_on(segments)]))


def assemble_ah(space: BDM1Space, eta: float = DEFAULT_ETA, nitsche_segments=()) -> sp.csr_matrix:
    """Symmetric interior-penalty strain form.

    Facet terms always run over interior edges and over the boundary edges of
    ``nitsche_segments`` (weak tangential Dirichlet condition there).
    """
    if eta <= 0:
        raise ValueError("penalty eta must be positive")
    edges = _facet_set(space.mesh, nitsche_segments)
    return (assemble_strain_cells(space) + _facet_terms(space, edges, eta)).tocsr()


def assemble_broken_h1(space: BDM1Space, segments="all") -> sp.csr_matrix:
    """Gram matrix of the mesh-dependent norm sum|grad w|^2 + sum h_e^-1 |[w_t]|^2."""
    G = space.basis_grad
    area = space.mesh.cell_area
    cells = _scatter(space.cell_dofs, area[:, None, None] * np.einsum("cirs,cjrs->cij", G, G),
                     space.dim)
    edges = _facet_set(space.mesh, segments)
    return (cells + _facet_terms(space, edges, 1.0, consistency=False)).tocsr()


def assemble_divdiv(space: BDM1Space) -> sp.csr_matrix:
    d = space.basis_div
    local = space.mesh.cell_area[:, None, None] * d[:, :, None] * d[:, None, :]
    return _scatter(space.cell_dofs, local, space.dim)


def assemble_vector_mass(space: BDM1Space, weight: float = 1.0, degree: int = 4) -> sp.csr_matrix:
    if weight <= 0:
        raise ValueError("mass weight must be positive")
    ref, w = triangle_rule(degree)
    pts = map_to_cells(space.mesh, ref)
    vals = space.basis_values(pts)
    local = np.einsum("q,ciqr,cjqr->cij", w, vals, vals) * space.mesh.cell_area[:, None, None]
    return weight * _scatter(space.cell_dofs, local, space.dim)


def assemble_coupling(space: BDM1Space, p_space: P0Space, weight: float = 1.0) -> sp.csr_matrix:
    """Matrix of weight * (div w, q), rows = BDM dofs, cols = cells."""
    if p_space.mesh is not space.mesh:
        raise ValueError("coupling needs both spaces on one mesh")
    C = space.mesh.n_cells
    vals = weight * space.mesh.cell_area[:, None] * space.basis_div
    rows = space.cell_dofs
    cols = np.repeat(np.arange(C)[:, None], 6, axis=1)
    return csr(rows, cols, vals, (space.dim, C))


def assemble_exchange(p_space: P0Space, derived: DerivedParams) -> sp.csr_matrix:
    """-(Lambda1 + Lambda2) (x) diag(cell areas)."""
    return sp.csr_matrix(-sp.kron(sp.csr_matrix(derived.exchange),
                                  sp.diags(p_space.measures), format="csr"))


@dataclass
class Forms:
    """Parameter-free building blocks on one mesh for one boundary setup."""

    space: BDM1Space
    p_space: P0Space
    ah_u: sp.csr_matrix
    ah_v: sp.csr_matrix
    divdiv: sp.csr_matrix
    mass: sp.csr_matrix
    coupling: sp.csr_matrix
    eta: float


def assemble_forms(space: BDM1Space, bc: BcSpec, eta: float = DEFAULT_ETA) -> Forms:
    ah_u = assemble_ah(space, eta, bc.u_nitsche)
    ah_v = ah_u if bc.v_nitsche == bc.u_nitsche else assemble_ah(space, eta, bc.v_nitsche)
    p_space = P0Space(space.mesh)
    return Forms(space, p_space, ah_u, ah_v, assemble_divdiv(space),
                 assemble_vector_mass(space), assemble_coupling(space, p_space), eta)


@dataclass
class FeSystem:
    params: PhysicalParams
    derived: DerivedParams
    layout: SystemLayout
    matrix: sp.csr_matrix
    rhs: np.ndarray
    bc: BcSpec
    eta: float
    forms: Forms
    constrained: np.ndarray  # global indices with essential conditions

    @property
    def space(self) -> BDM1Space:
        return self.forms.space

    @property
    def mesh(self) -> TriMesh:
        return self.forms.space.mesh

    def split(self, x) -> dict:
        return {name: np.asarray(x)[sl] for name, sl in self.layout.ranges()}


def constrained_dofs(space: BDM1Space, bc: BcSpec, layout: SystemLayout) -> np.ndarray:
    sets = boundary_dof_sets(space, bc)
    parts = [sets["u"]]
    for i in range(layout.n):
        parts.append(sets["v"] + layout.v(i).start)
    return np.sort(np.concatenate(parts)).astype(np.int64)


def apply_essential(A: sp.spmatrix, dofs, b=None):
    """Zero rows and columns of ``dofs``, put 1 on their diagonal, zero rhs there."""
    A = sp.csr_matrix(A)
    keep = np.ones(A.shape[0])
    keep[dofs] = 0.0
    K = sp.diags(keep)
    out = (K @ A @ K + sp.diags(1.0 - keep)).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    if b is None:
        return out
    b = np.array(b, dtype=float)
    b[dofs] = 0.0
    return out, b


def system_blocks(params: PhysicalParams, derived: DerivedParams, forms: Forms):
    """Unconstrained (u,u), (v_i,v_i), (u,p_i), (v_i,p_i) and (p,p) blocks."""
    n = params.n
    Auu = 2 * params.mu * forms.ah_u + params.lam * forms.divdiv
    Avv = [derived.gamma[i] * forms.ah_v + (params.tau / params.K[i]) * forms.mass
           for i in range(n)]
    Aup = [params.alpha[i] * forms.coupling for i in range(n)]
    Avp = params.tau * forms.coupling
    App = assemble_exchange(forms.p_space, derived)
    return Auu, Avv, Aup, Avp, App


def assemble_system(params: PhysicalParams, space, bc_spec="mms", eta: float = DEFAULT_ETA,
                    rhs=None, forms: Forms | None = None, strict: bool = True) -> FeSystem:
    """Assemble the full symmetric indefinite operator and right-hand side.

    ``space`` is a BDM1Space or a TriMesh; ``rhs`` is a vector of matching
    length or None for a zero right-hand side.
    """
    bc = bc_preset(bc_spec) if isinstance(bc_spec, str) else bc_spec
    if isinstance(space, TriMesh):
        space = BDM1Space(space)
    if forms is None:
        forms = assemble_forms(space, bc, eta)
    elif forms.space is not space:
        raise ValueError("forms were assembled on a different mesh")
    derived = derive(params, strict=strict)
    n = params.n
    layout = SystemLayout(n, space.dim, space.mesh.n_cells, bc.zero_mean)
    Auu, Avv, Aup, Avp, App = system_blocks(params, derived, forms)

    nb = 1 + 2 * n + (1 if bc.zero_mean else 0)
    grid = [[None] * nb for _ in range(nb)]
    grid[0][0] = Auu
    for i in range(n):
        grid[1 + i][1 + i] = Avv[i]
        grid[0][1 + n + i] = Aup[i]
        grid[1 + n + i][0] = Aup[i].T
        grid[1 + i][1 + n + i] = Avp
        grid[1 + n + i][1 + i] = Avp.T
    C = space.mesh.n_cells
    for i in range(n):
        for j in range(n):
            grid[1 + n + i][1 + n + j] = App[i * C:(i + 1) * C, j * C:(j + 1) * C]
    if bc.zero_mean:
        areas = sp.csr_matrix(space.mesh.cell_area[:, None])
        Mcol = sp.kron(sp.eye(n), areas, format="csr")  # (nC x n)
        for i in range(n):
            grid[1 + n + i][nb - 1] = Mcol[i * C:(i + 1) * C]
            grid[nb - 1][1 + n + i] = Mcol[i * C:(i + 1) * C].T
        grid[nb - 1][nb - 1] = sp.csr_matrix((n, n))
    A = sp.bmat(grid, format="csr")
    A.sum_duplicates()
    A.sort_indices()

    dofs = constrained_dofs(space, bc, layout)
    b = np.zeros(layout.total) if rhs is None else np.asarray(rhs, dtype=float)
    if b.shape[0] != layout.total:
        raise ValueError("right-hand side length does not match the layout")
    A, b = apply_essential(A, dofs, b)
    return FeSystem(params, derived, layout, A, b, bc, eta, forms, dofs)


def assemble_rhs(params: PhysicalParams, space: BDM1Space, layout: SystemLayout,
                 f=None, r=None, g=None, prescaled: bool = False, degree: int = 6) -> np.ndarray:
    """Load vector for body force f, fluxes r_i and sources g_i.

    Without ``prescaled`` the flux loads are weighted by tau/K_i and the
    sources by tau; with it, r and g already hold the rescaled data.
    ``f`` and each ``r[i]`` map (N, 2) points to (N, 2), each ``g[i]``
    maps points to (N,).  Multiplier entries stay zero.
    """
    out = np.zeros(layout.total)
    mesh = space.mesh
    ref, w = triangle_rule(degree)
    pts = map_to_cells(mesh, ref)
    flat = pts.reshape(-1, 2)
    C, Q = pts.shape[:2]
    area = mesh.cell_area

    def vector_load(func):
        vals = np.asarray(func(flat), dtype=float).reshape(C, Q, 2)
        basis = space.basis_values(pts)
        local = np.einsum("q,cqr,ciqr->ci", w, vals, basis) * area[:, None]
        return np.bincount(space.cell_dofs.ravel(), local.ravel(), minlength=space.dim)

    if f is not None:
        out[layout.u()] = vector_load(f)
    for i in range(params.n):
        if r is not None and r[i] is not None:
            scale = 1.0 if prescaled else params.tau / params.K[i]
            out[layout.v(i)] = scale * vector_load(r[i])
        if g is not None and g[i] is not None:
            scale = 1.0 if prescaled else params.tau
            vals = np.asarray(g[i](flat), dtype=float).reshape(C, Q)
            out[layout.p(i)] = scale * (vals @ w) * area
    return out


def check_symmetric(system: FeSystem, tol: float = 1e-12) -> bool:
    return is_symmetric(system.matrix, tol)
