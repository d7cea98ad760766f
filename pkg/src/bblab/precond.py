"""Block-diagonal preconditioner: exact (factorized) and geometric multigrid.

The preconditioner applies the inverse of

    B_u = 2mu a_h + lam D
    B_v = blockdiag(g_i a_h + tau/K_i M) + w_ij D      (cross blocks, all i, j)
    B_p = Lambda (x) M_p,  identity on the zero-mean multipliers

with w = tau^2 Lambda^-1 by default (``tau2=False`` drops the tau^2).
Constrained boundary dofs carry unit diagonals in every block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import FeSystem, Forms, apply_essential, assemble_forms
from .linalg import csr, factorize
from .mesh import MeshHierarchy, Refinement, vertex_star_patches
from .quadrature import edge_points
from .spaces import BDM1Space, boundary_dof_sets


# ----------------------------------------------------------------------
# block matrices


def block_u(params, forms: Forms) -> sp.csr_matrix:
    return (2 * params.mu * forms.ah_u + params.lam * forms.divdiv).tocsr()


def block_v(params, derived, forms: Forms, tau2: bool = True) -> sp.csr_matrix:
    n = params.n
    W = derived.Lambda_inv * (params.tau ** 2 if tau2 else 1.0)
    grid = [[W[i, j] * forms.divdiv for j in range(n)] for i in range(n)]
    for i in range(n):
        grid[i][i] = (derived.gamma[i] * forms.ah_v + (params.tau / params.K[i]) * forms.mass
                      + grid[i][i])
    return sp.bmat(grid, format="csr")


def block_p(derived, p_space, multipliers: bool) -> sp.csr_matrix:
    Bp = sp.kron(sp.csr_matrix(derived.Lambda), sp.diags(p_space.measures), format="csr")
    if multipliers:
        Bp = sp.block_diag([Bp, sp.eye(derived.Lambda.shape[0])], format="csr")
    return Bp


def _bc_dofs(system: FeSystem):
    sets = boundary_dof_sets(system.space, system.bc)
    n = system.params.n
    nv = system.space.dim
    v = np.concatenate([sets["v"] + i * nv for i in range(n)]).astype(np.int64)
    return sets["u"], v


def build_block_matrices(system: FeSystem, tau2: bool = True):
    """(B_u, B_v, B_p) for an assembled system, boundary dofs eliminated."""
    du, dv = _bc_dofs(system)
    Bu = apply_essential(block_u(system.params, system.forms), du)
    Bv = apply_essential(block_v(system.params, system.derived, system.forms, tau2), dv)
    Bp = block_p(system.derived, system.forms.p_space, system.layout.multipliers)
    return Bu, Bv, Bp


def norm_matrix(system: FeSystem, tau2: bool = True) -> sp.csr_matrix:
    """Block-diagonal matrix blockdiag(B_u, B_v, B_p) on the full layout."""
    return sp.block_diag(build_block_matrices(system, tau2), format="csr")


# ----------------------------------------------------------------------
# exact realization


class ExactBlock:
    """Applies B^-1 through a sparse factorization."""

    def __init__(self, B):
        self.matrix = sp.csr_matrix(B)
        self._f = factorize(self.matrix, symmetric=True)

    def __call__(self, x):
        return self._f.solve(x)


class CellBlock:
    """Applies (Lambda (x) diag(areas))^-1 plus identity multipliers, cell by cell."""

    def __init__(self, Lambda, areas, multipliers: bool):
        self.Lambda_inv = np.linalg.inv(np.asarray(Lambda))
        self.areas = np.asarray(areas)
        self.n = len(self.Lambda_inv)
        self.multipliers = multipliers

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        C = len(self.areas)
        X = x[: self.n * C].reshape(self.n, C) / self.areas
        out = (self.Lambda_inv @ X).ravel()
        if self.multipliers:
            out = np.concatenate([out, x[self.n * C:]])
        return out


def apply_exact(block, x):
    """y = B^-1 x for an ExactBlock, CellBlock or a sparse matrix."""
    if sp.issparse(block):
        block = ExactBlock(block)
    return block(x)


# ----------------------------------------------------------------------
# multigrid


@dataclass(frozen=True)
class MgCycleSpec:
    cycle: str = "F"
    pre: int = 2
    post: int = 2
    levels: int = 3
    omega: float = 1 / 3
    patch_mode: str = "additive"

    def __post_init__(self):
        if self.cycle not in ("F", "W", "V"):
            raise ValueError("cycle must be F, W or V")
        if not 0 < self.omega <= 1:
            raise ValueError("omega must lie in (0, 1]")
        if self.levels < 1:
            raise ValueError("need at least one level")
        if self.patch_mode != "additive":
            raise ValueError("only additive patch combination is implemented")


def prolongation(ref: Refinement, coarse_space: BDM1Space | None = None,
                 fine_space: BDM1Space | None = None) -> sp.csr_matrix:
    """Canonical injection of coarse BDM1 into fine BDM1 (nested spaces)."""
    coarse = coarse_space or BDM1Space(ref.coarse)
    fine_mesh = ref.fine
    if fine_space is not None and fine_space.mesh is not fine_mesh:
        raise ValueError("fine space does not live on the refined mesh")
    parent = ref.edge_parent_cell
    if parent.shape[0] != fine_mesh.n_edges or np.any(parent < 0):
        raise ValueError("hierarchy is not nested")
    pts, s, w = edge_points(fine_mesh, 2)
    vals = coarse.basis_values(pts, parent)  # (Ef, 6, 2, 2)
    vn = np.einsum("eiqr,er->eiq", vals, fine_mesh.edge_normal)
    m0 = 0.5 * vn @ w
    m1 = 0.5 * vn @ (w * s)
    Ef = fine_mesh.n_edges
    cols = coarse.cell_dofs[parent]  # (Ef, 6)
    rows = np.stack([np.repeat(2 * np.arange(Ef)[:, None], 6, 1),
                     np.repeat(2 * np.arange(Ef)[:, None] + 1, 6, 1)], axis=1)
    vals = np.stack([m0, m1], axis=1)
    keep = np.abs(vals) > 1e-14
    return csr(rows[keep], np.stack([cols, cols], axis=1)[keep], vals[keep],
               (2 * Ef, coarse.dim))


def _lookup(A: sp.csr_matrix, rows, cols):
    """Entries A[rows[k], cols[k]] (zero where not stored), vectorized."""
    A = sp.csr_matrix(A)
    A.sort_indices()
    nc = A.shape[1]
    entry_rows = np.repeat(np.arange(A.shape[0], dtype=np.int64), np.diff(A.indptr))
    keys = entry_rows * nc + A.indices
    q = np.asarray(rows, dtype=np.int64) * nc + np.asarray(cols, dtype=np.int64)
    pos = np.searchsorted(keys, q)
    pos = np.minimum(pos, len(keys) - 1)
    hit = keys[pos] == q
    return np.where(hit, A.data[pos], 0.0)


def patch_dofs(space: BDM1Space, free_index, copies: int = 1) -> list[np.ndarray]:
    """Free-subspace dof indices of every vertex-star patch.

    ``free_index`` maps a full dof index to its position among free dofs
    (or -1 when constrained); ``copies`` stacks that many coupled fields.
    """
    out = []
    nd = space.dim
    for patch in vertex_star_patches(space.mesh):
        local = space.edge_dofs(patch.edges)
        full = np.concatenate([local + k * nd for k in range(copies)])
        idx = free_index[full]
        idx = idx[idx >= 0]
        if idx.size:
            out.append(np.sort(idx))
    return out


def patch_matrices(A, patches):
    """Dense A[p][:, p] for every patch (list of arrays)."""
    return [_lookup(A, np.repeat(p, len(p)), np.tile(p, len(p))).reshape(len(p), len(p))
            for p in patches]


def additive_patch_operator(A, patches) -> sp.csr_matrix:
    """Sparse D = sum_p R_p^T A_p^-1 R_p with batched dense inverses."""
    rows, cols, vals = [], [], []
    by_size: dict[int, list[np.ndarray]] = {}
    for p in patches:
        by_size.setdefault(len(p), []).append(p)
    for m, group in sorted(by_size.items()):
        P = np.stack(group)  # (G, m)
        R = np.repeat(P, m, axis=1)
        Cc = np.tile(P, (1, m))
        blocks = _lookup(A, R.ravel(), Cc.ravel()).reshape(len(group), m, m)
        inv = np.linalg.inv(blocks)
        inv = 0.5 * (inv + inv.transpose(0, 2, 1))
        rows.append(R.ravel())
        cols.append(Cc.ravel())
        vals.append(inv.ravel())
    n = A.shape[0]
    return csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n, n))


@dataclass
class MgLevel:
    A: sp.csr_matrix  # operator on free dofs
    smoother: sp.csr_matrix | None = None
    P: sp.csr_matrix | None = None  # from the next coarser level, free dofs
    free: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


class MgApplier:
    """One multigrid cycle as a fixed linear operator on the full block space.

    Constrained dofs (unit diagonal rows) are passed through unchanged; the
    cycle itself runs on the free subspace.
    """

    def __init__(self, levels: list[MgLevel], spec: MgCycleSpec, n_full: int):
        self.levels = levels
        self.spec = spec
        self.n_full = n_full
        self.free = levels[-1].free
        self.coarse = factorize(levels[0].A, symmetric=True)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = x.copy()  # identity on constrained dofs
        out[self.free] = self.cycle(len(self.levels) - 1, x[self.free], self.spec.cycle)
        return out

    def _smooth(self, lev: MgLevel, x, b, steps):
        w = self.spec.omega
        for _ in range(steps):
            x = x + w * (lev.smoother @ (b - lev.A @ x))
        return x

    def cycle(self, l, b, kind):
        if l == 0:
            return self.coarse.solve(b)
        lev = self.levels[l]
        x = self._smooth(lev, np.zeros_like(b), b, self.spec.pre)
        rc = lev.P.T @ (b - lev.A @ x)
        if kind == "V":
            ec = self.cycle(l - 1, rc, "V")
        else:
            first = "F" if kind == "F" else "W"
            second = "V" if kind == "F" else "W"
            ec = self.cycle(l - 1, rc, first)
            if l - 1 > 0:
                ec = ec + self.cycle(l - 1, rc - self.levels[l - 1].A @ ec, second)
        x = x + lev.P @ ec
        return self._smooth(lev, x, b, self.spec.post)


def mg_setup(hierarchy: list, assemble_block, spec: MgCycleSpec, copies: int = 1) -> MgApplier:
    """Build the cycle from per-level data.

    ``hierarchy`` holds (space, constrained dof indices, refinement-from-coarser
    or None) from coarsest to finest; ``assemble_block(space)`` returns the
    block matrix on that level before boundary elimination.
    """
    if len(hierarchy) < spec.levels:
        raise ValueError("hierarchy has fewer levels than requested")
    hierarchy = hierarchy[-spec.levels:]
    levels = []
    prev_space = None
    prev_free = None
    for k, (space, bc, ref) in enumerate(hierarchy):
        n_full = copies * space.dim
        mask = np.ones(n_full, dtype=bool)
        mask[bc] = False
        free = np.flatnonzero(mask)
        A = sp.csr_matrix(assemble_block(space))[free][:, free].tocsr()
        A.sort_indices()
        lev = MgLevel(A=A, free=free)
        if k > 0:
            if ref is None or ref.coarse is not prev_space.mesh:
                raise ValueError("hierarchy is not nested")
            P1 = prolongation(ref, prev_space, space)
            P = sp.kron(sp.eye(copies), P1, format="csr")
            lev.P = P[free][:, prev_free].tocsr()
            index = -np.ones(n_full, dtype=np.int64)
            index[free] = np.arange(free.size)
            lev.smoother = additive_patch_operator(A, patch_dofs(space, index, copies))
        levels.append(lev)
        prev_space, prev_free = space, free
    return MgApplier(levels, spec, copies * hierarchy[-1][0].dim)


def mg_apply(applier: MgApplier, x):
    return applier(x)


def space_hierarchy(mesh_hierarchy: MeshHierarchy):
    """BDM spaces and refinements, coarsest first."""
    spaces = [BDM1Space(mesh_hierarchy[0])]
    refs = [None]
    for ref in mesh_hierarchy.refinements:
        spaces.append(BDM1Space(ref.fine))
        refs.append(ref)
    return spaces, refs


# ----------------------------------------------------------------------
# the block preconditioner


class BlockPreconditioner:
    """x -> blockdiag(B_u, B_v, B_p)^-1 x, with exact or multigrid block solves."""

    def __init__(self, system: FeSystem, mode: str = "exact", tau2: bool = True,
                 u_cycle: MgCycleSpec | None = None, v_cycle: MgCycleSpec | None = None,
                 hierarchy: MeshHierarchy | None = None):
        if mode not in ("exact", "multigrid"):
            raise ValueError("mode must be 'exact' or 'multigrid'")
        self.mode = mode
        self.system = system
        lay = system.layout
        self._slices = (slice(0, lay.n_u), slice(lay.n_u, lay.v_all().stop),
                        slice(lay.v_all().stop, lay.total))
        Bu, Bv, Bp = build_block_matrices(system, tau2)
        self.matrices = (Bu, Bv, Bp)
        self.block_p = CellBlock(system.derived.Lambda, system.forms.p_space.measures,
                                 lay.multipliers)
        if mode == "exact":
            self.block_u = ExactBlock(Bu)
            self.block_v = ExactBlock(Bv)
        else:
            self.block_u, self.block_v = self._multigrid(
                system, tau2, u_cycle or MgCycleSpec("F"), v_cycle or MgCycleSpec("W"),
                hierarchy)

    @staticmethod
    def _multigrid(system, tau2, u_cycle, v_cycle, hierarchy):
        if hierarchy is None:
            raise ValueError("multigrid needs the mesh hierarchy the system was built on")
        if hierarchy.finest is not system.mesh:
            raise ValueError("system must be assembled on the finest hierarchy mesh")
        spaces, refs = space_hierarchy(hierarchy)
        spaces[-1] = system.space
        params, derived, bc = system.params, system.derived, system.bc
        n = params.n
        cache: dict[int, Forms] = {}

        def forms_on(space):
            if space is system.space:
                return system.forms
            if id(space) not in cache:
                cache[id(space)] = assemble_forms(space, bc, system.eta)
            return cache[id(space)]

        def bc_of(space, copies):
            d = boundary_dof_sets(space, bc)
            key = "u" if copies == 0 else "v"
            if copies == 0:
                return d[key]
            return np.concatenate([d[key] + i * space.dim for i in range(copies)])

        hu = [(s, bc_of(s, 0), r) for s, r in zip(spaces, refs)]
        hv = [(s, bc_of(s, n), r) for s, r in zip(spaces, refs)]
        Mu = mg_setup(hu, lambda s: block_u(params, forms_on(s)), u_cycle, 1)
        Mv = mg_setup(hv, lambda s: block_v(params, derived, forms_on(s), tau2), v_cycle, n)
        return Mu, Mv

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        su, sv, sp_ = self._slices
        return np.concatenate([self.block_u(x[su]), self.block_v(x[sv]), self.block_p(x[sp_])])

    apply = __call__


def mg_hierarchy(n_finest: int, levels: int) -> MeshHierarchy:
    """Nested unit-square meshes with ``levels`` levels; assemble on ``.finest``."""
    return MeshHierarchy.for_finest(n_finest, levels)


__all__ = [
    "BlockPreconditioner", "MgCycleSpec", "MgApplier", "build_block_matrices", "norm_matrix",
    "apply_exact", "prolongation", "mg_setup", "mg_apply", "additive_patch_operator",
    "patch_dofs", "patch_matrices", "block_u", "block_v", "block_p", "mg_hierarchy",
    "space_hierarchy",
]
