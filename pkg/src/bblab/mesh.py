"""Structured triangulations of the unit square and their red refinements.

Entity conventions used throughout the package:

* cells are counter-clockwise vertex triples; local edge ``k`` is the edge
  opposite local vertex ``k``;
* edges are vertex pairs stored lower id first, numbered in lexicographic
  order;
* every edge carries one global unit normal.  On an interior edge it points
  from the lower-id cell into the higher-id cell, on a boundary edge it is the
  outward normal.  ``cell_edge_sign`` is +1 where that normal is outward for
  the cell and -1 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

SEGMENTS = ("left", "right", "bottom", "top")


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class TriMesh:
    """Triangulation of a polygonal subset of the plane with full incidence data."""

    def __init__(self, vertices, cells):
        vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (V, 2)")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise ValueError("cells must have shape (C, 3)")
        self.vertices = _frozen(vertices)
        self.cells = _frozen(cells)

        p = vertices[cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(area <= 0):
            raise ValueError("cells must be counter-clockwise with positive area")
        self.cell_area = _frozen(area)
        self.cell_centroid = _frozen(p.mean(axis=1))

        # local edge k is opposite local vertex k
        loc = np.stack(
            [cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1
        )  # (C, 3, 2)
        loc_sorted = np.sort(loc, axis=2).reshape(-1, 2)
        edges, inverse = np.unique(loc_sorted, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self.edges = _frozen(edges)
        self.cell_edges = _frozen(inverse.reshape(-1, 3))

        n_edges = len(edges)
        owner = np.repeat(np.arange(len(cells)), 3)
        counts = np.bincount(inverse, minlength=n_edges)
        if np.any(counts > 2):
            raise ValueError("non-manifold mesh: edge shared by more than two cells")
        edge_cells = np.full((n_edges, 2), -1, dtype=np.int64)
        # owners come in increasing cell order, so the first hit is the lower id
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        edge_cells[:, 0] = owner[order[starts]]
        two = counts == 2
        edge_cells[two, 1] = owner[order[starts[two] + 1]]
        self.edge_cells = _frozen(edge_cells)
        self.boundary_edge = _frozen(edge_cells[:, 1] < 0)

        a = vertices[edges[:, 0]]
        b = vertices[edges[:, 1]]
        d = b - a
        length = np.hypot(d[:, 0], d[:, 1])
        self.edge_length = _frozen(length)
        self.edge_midpoint = _frozen(0.5 * (a + b))
        normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]
        c0 = edge_cells[:, 0]
        # vertex of the first cell opposite the edge
        k0 = np.argmax(self.cell_edges[c0] == np.arange(n_edges)[:, None], axis=1)
        opposite = vertices[cells[c0, k0]]
        flip = np.einsum("ij,ij->i", normal, opposite - a) > 0
        normal[flip] *= -1.0
        self.edge_normal = _frozen(normal)
        self.edge_tangent = _frozen(np.stack([-normal[:, 1], normal[:, 0]], axis=1))

        sign = np.where(edge_cells[self.cell_edges, 0] == np.arange(len(cells))[:, None], 1, -1)
        self.cell_edge_sign = _frozen(sign.astype(np.int64))
        self.cell_diameter = _frozen(length[self.cell_edges].max(axis=1))

        bv = np.zeros(len(vertices), dtype=bool)
        bv[edges[self.boundary_edge].ravel()] = True
        self.boundary_vertex = _frozen(bv)

    # ------------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def h(self) -> float:
        """Largest cell diameter."""
        return float(self.cell_diameter.max())

    def edge_segments(self, tol: float = 1e-12) -> np.ndarray:
        """Boundary segment name per edge ('' for interior edges)."""
        out = np.full(self.n_edges, "", dtype=object)
        a = self.vertices[self.edges[:, 0]]
        b = self.vertices[self.edges[:, 1]]
        tests = {
            "left": (np.abs(a[:, 0]) < tol) & (np.abs(b[:, 0]) < tol),
            "right": (np.abs(a[:, 0] - 1) < tol) & (np.abs(b[:, 0] - 1) < tol),
            "bottom": (np.abs(a[:, 1]) < tol) & (np.abs(b[:, 1]) < tol),
            "top": (np.abs(a[:, 1] - 1) < tol) & (np.abs(b[:, 1] - 1) < tol),
        }
        for name, hit in tests.items():
            out[hit & self.boundary_edge] = name
        return out

    def edges_on(self, segments: Iterable[str]) -> np.ndarray:
        """Indices of boundary edges lying on the named segments."""
        segments = expand_segments(segments)
        tags = self.edge_segments()
        mask = np.isin(tags, list(segments)) if segments else np.zeros(self.n_edges, bool)
        return np.flatnonzero(mask)

    def vertex_cell_incidence(self) -> sp.csr_matrix:
        rows = self.cells.ravel()
        cols = np.repeat(np.arange(self.n_cells), 3)
        return sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.n_vertices, self.n_cells)
        )

    def vertex_edge_incidence(self) -> sp.csr_matrix:
        rows = self.edges.ravel()
        cols = np.repeat(np.arange(self.n_edges), 2)
        return sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.n_vertices, self.n_edges)
        )

    def min_angle(self) -> float:
        p = self.vertices[self.cells]
        angles = []
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            cosang = np.einsum("ij,ij->i", u, v) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
            )
            angles.append(np.arccos(np.clip(cosang, -1, 1)))
        return float(np.min(angles))

    def dump(self, path) -> None:
        """Write an OFF-like text listing (vertex and cell counts, then rows)."""
        with open(path, "w") as fh:
            fh.write("OFF\n")
            fh.write(f"{self.n_vertices} {self.n_cells} {self.n_edges}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g} 0\n")
            for c in self.cells:
                fh.write(f"3 {c[0]} {c[1]} {c[2]}\n")


def expand_segments(segments) -> tuple[str, ...]:
    if segments is None:
        return ()
    if isinstance(segments, str):
        segments = [s for s in segments.replace("+", ",").split(",") if s]
    out = []
    for s in segments:
        if s == "all":
            out.extend(SEGMENTS)
        elif s in SEGMENTS:
            out.append(s)
        elif s in ("", "none"):
            continue
        else:
            raise ValueError(f"unknown boundary segment {s!r}")
    return tuple(dict.fromkeys(out))


def unit_square_mesh(n: int) -> TriMesh:
    """n x n squares, each cut by the diagonal from (i/n, j/n) to ((i+1)/n, (j+1)/n)."""
    if n < 1:
        raise ValueError("unit_square_mesh needs n >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)  # vertex id = j*(n+1) + i
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return TriMesh(vertices, cells)


@dataclass(frozen=True)
class Refinement:
    """Parent data linking a red-refined mesh to its coarse mesh."""

    coarse: TriMesh
    fine: TriMesh
    cell_parent: np.ndarray  # fine cell -> coarse cell
    edge_parent: np.ndarray  # fine edge -> coarse edge, -1 for edges interior to a coarse cell
    edge_parent_cell: np.ndarray  # fine edge -> a coarse cell whose closure contains it


def uniform_refine(m: TriMesh) -> Refinement:
    """Red refinement: every triangle is split into four similar children."""
    V = m.n_vertices
    mid = m.edge_midpoint
    vertices = np.concatenate([m.vertices, mid])
    c = m.cells
    e = m.cell_edges + V  # midpoint vertex ids, local k opposite vertex k
    children = np.stack(
        [
            np.stack([c[:, 0], e[:, 2], e[:, 1]], axis=1),
            np.stack([e[:, 2], c[:, 1], e[:, 0]], axis=1),
            np.stack([e[:, 1], e[:, 0], c[:, 2]], axis=1),
            np.stack([e[:, 0], e[:, 1], e[:, 2]], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    fine = TriMesh(vertices, children)
    cell_parent = np.arange(fine.n_cells) // 4
    a, b = fine.edges[:, 0], fine.edges[:, 1]
    # child edges of a coarse edge join a coarse vertex to that edge's midpoint
    edge_parent = np.where(a < V, b - V, -1)
    edge_parent_cell = cell_parent[fine.edge_cells[:, 0]]
    return Refinement(m, fine, _frozen(cell_parent), _frozen(edge_parent), _frozen(edge_parent_cell))


class MeshHierarchy:
    """Nested meshes ordered coarse to fine."""

    def __init__(self, coarse: TriMesh, refinements: int):
        self.meshes = [coarse]
        self.refinements: list[Refinement] = []
        for _ in range(refinements):
            r = uniform_refine(self.meshes[-1])
            self.refinements.append(r)
            self.meshes.append(r.fine)

    def __len__(self) -> int:
        return len(self.meshes)

    def __getitem__(self, k) -> TriMesh:
        return self.meshes[k]

    @property
    def finest(self) -> TriMesh:
        return self.meshes[-1]

    @classmethod
    def for_finest(cls, n_finest: int, levels: int) -> "MeshHierarchy":
        """Nested meshes, coarse to fine; the finest has the geometry of unit_square_mesh(n_finest)."""
        n_coarse = n_finest // 2 ** (levels - 1)
        if n_coarse < 1 or n_coarse * 2 ** (levels - 1) != n_finest:
            raise ValueError(f"cannot build {levels} levels ending at n={n_finest}")
        return cls(unit_square_mesh(n_coarse), levels - 1)


@dataclass(frozen=True)
class Patch:
    vertex: int
    cells: np.ndarray
    edges: np.ndarray


def vertex_star_patches(m: TriMesh) -> list[Patch]:
    """One patch per vertex: all cells and all edges touching it, by vertex id."""
    vc = m.vertex_cell_incidence()
    ve = m.vertex_edge_incidence()
    out = []
    for v in range(m.n_vertices):
        cells = vc.indices[vc.indptr[v] : vc.indptr[v + 1]]
        edges = ve.indices[ve.indptr[v] : ve.indptr[v + 1]]
        out.append(Patch(v, np.sort(cells), np.sort(edges)))
    return out
