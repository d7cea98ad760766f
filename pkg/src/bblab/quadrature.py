"""Gauss rules on [-1, 1] and collapsed (conical product) rules on triangles."""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def gauss_line(npts: int):
    """Points in [-1, 1] and weights summing to 2."""
    return np.polynomial.legendre.leggauss(npts)


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Reference-triangle rule exact for polynomials of total degree ``degree``.

    Returns barycentric-free reference points (xi, eta) on the triangle
    (0,0), (1,0), (0,1) and weights normalised to sum to one, so that
    ``sum(w * f) * area`` approximates the integral over a physical cell.
    """
    m = max(1, (degree + 2) // 2)
    t, wt = np.polynomial.legendre.leggauss(m)
    s, ws = roots_jacobi(m, 1.0, 0.0)
    xi = (t + 1) / 2
    eta = (s + 1) / 2
    X = np.outer(xi, 1 - eta)  # Duffy collapse
    Y = np.outer(np.ones_like(xi), eta)
    W = np.outer(wt / 2, ws / 4)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    w = W.ravel() * 2.0  # reference area is 1/2
    return pts, w


def map_to_cells(mesh, ref_pts):
    """Physical quadrature points, shape (C, Q, 2)."""
    p = mesh.vertices[mesh.cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return (
        p[:, None, 0, :]
        + ref_pts[None, :, 0, None] * d1[:, None, :]
        + ref_pts[None, :, 1, None] * d2[:, None, :]
    )


def edge_points(mesh, npts: int, edges=None):
    """Gauss points on edges parametrised from the lower-id vertex.

    Returns (points (E, Q, 2), s (Q,), w (Q,)) with s in [-1, 1] and
    weights summing to 2.
    """
    s, w = gauss_line(npts)
    e = mesh.edges if edges is None else mesh.edges[edges]
    a = mesh.vertices[e[:, 0]]
    b = mesh.vertices[e[:, 1]]
    t = (s + 1) / 2
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    return pts, s, w
