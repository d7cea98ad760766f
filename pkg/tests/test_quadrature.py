from math import factorial

import numpy as np
import pytest

from bblab.mesh import unit_square_mesh
from bblab.quadrature import edge_points, gauss_line, map_to_cells, triangle_rule


@pytest.mark.parametrize("degree", [1, 2, 4, 6, 8])
def test_triangle_rule_exact_on_monomials(degree):
    pts, w = triangle_rule(degree)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)  # over the reference triangle
            approx = 0.5 * np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b)
            assert approx == pytest.approx(exact, rel=1e-13, abs=1e-16)


@pytest.mark.parametrize("npts", [1, 2, 3, 5])
def test_gauss_line_exact(npts):
    s, w = gauss_line(npts)
    for k in range(2 * npts):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert np.sum(w * s**k) == pytest.approx(exact, abs=1e-14)


def test_mapped_rule_integrates_quadratic_over_square():
    m = unit_square_mesh(3)
    pts, w = triangle_rule(2)
    X = map_to_cells(m, pts)
    f = X[..., 0] ** 2 + X[..., 0] * X[..., 1]
    total = np.sum(m.cell_area[:, None] * w[None, :] * f)
    assert total == pytest.approx(1 / 3 + 1 / 4, rel=1e-14)


def test_edge_points_lie_on_edges():
    m = unit_square_mesh(2)
    pts, s, w = edge_points(m, 3)
    a = m.vertices[m.edges[:, 0]]
    b = m.vertices[m.edges[:, 1]]
    assert np.allclose(pts[:, 0], a + (s[0] + 1) / 2 * (b - a))
    # sum of lengths from the 1D rule
    assert np.sum(m.edge_length[:, None] * w / 2) == pytest.approx(m.edge_length.sum())
