import numpy as np
import pytest
import scipy.sparse as sp

from bblab.assembly import (DEFAULT_ETA, apply_essential, assemble_ah, assemble_broken_h1,
                            assemble_coupling, assemble_divdiv, assemble_exchange, assemble_rhs,
                            assemble_system, assemble_vector_mass, check_symmetric)
from bblab.linalg import factorize
from bblab.mesh import unit_square_mesh
from bblab.mms import compute_errors, mms_rhs
from bblab.parameters import PhysicalParams, derive, single_network, two_network
from bblab.solvers import infsup_constant
from bblab.spaces import BcSpec, BDM1Space, P0Space, boundary_dof_sets


def _field(fn):
    return lambda p: np.stack(fn(p[:, 0], p[:, 1]), axis=1)


RIGID = [
    _field(lambda x, y: (np.ones_like(x), np.zeros_like(x))),
    _field(lambda x, y: (np.zeros_like(x), np.ones_like(x))),
    _field(lambda x, y: (-y, x)),
]


@pytest.mark.parametrize("mode", range(3))
def test_rigid_modes_in_kernel_without_boundary_facets(space4, mode):
    A = assemble_ah(space4, eta=10.0, nitsche_segments=())
    x = space4.interpolate(RIGID[mode])
    assert np.max(np.abs(A @ x)) <= 1e-12


def test_rigid_modes_penalized_by_boundary_facets(space4):
    A = assemble_ah(space4, eta=10.0, nitsche_segments="all")
    x = space4.interpolate(RIGID[2])
    assert x @ A @ x > 1e-3


def test_ah_symmetric(space4, rng):
    A = assemble_ah(space4, nitsche_segments="all")
    x, y = rng.standard_normal((2, space4.dim))
    assert abs(x @ A @ y - y @ A @ x) <= 1e-12 * max(1.0, abs(x @ A @ y))


@pytest.mark.parametrize("eta", [DEFAULT_ETA, 10.0])
def test_ah_coercive_on_constrained_space(eta):
    space = BDM1Space(unit_square_mesh(4))
    A = assemble_ah(space, eta, nitsche_segments="all").toarray()
    fixed = boundary_dof_sets(space, {"u": "all"})["u"]
    free = np.setdiff1d(np.arange(space.dim), fixed)
    assert np.linalg.eigvalsh(A[np.ix_(free, free)])[0] > 0


@pytest.mark.parametrize("eta", [0.0, -1.0])
def test_nonpositive_penalty_rejected(space4, eta):
    with pytest.raises(ValueError):
        assemble_ah(space4, eta)


def test_divdiv_of_identity_field(space4):
    x = space4.interpolate(lambda p: p.copy())
    assert x @ assemble_divdiv(space4) @ x == pytest.approx(4.0, rel=1e-13)


def test_mass_of_constant_field(space4):
    x = space4.interpolate(RIGID[0])
    assert x @ assemble_vector_mass(space4) @ x == pytest.approx(1.0, rel=1e-13)


def test_mass_scales_linearly(space4, rng):
    x = rng.standard_normal(space4.dim)
    base = x @ assemble_vector_mass(space4) @ x
    assert x @ assemble_vector_mass(space4, 7.5) @ x == pytest.approx(7.5 * base, rel=1e-13)
    with pytest.raises(ValueError):
        assemble_vector_mass(space4, 0.0)


def test_coupling_with_constant_pressure_vanishes(space4, rng):
    B = assemble_coupling(space4, P0Space(space4.mesh))
    x = rng.standard_normal(space4.dim)
    x[boundary_dof_sets(space4, {"v": "all"})["v"]] = 0.0
    assert abs(x @ B @ np.ones(space4.mesh.n_cells)) <= 1e-12


def test_coupling_identity_field(space4):
    B = assemble_coupling(space4, P0Space(space4.mesh), weight=0.5)
    x = space4.interpolate(lambda p: p.copy())
    assert x @ B @ np.ones(space4.mesh.n_cells) == pytest.approx(0.5 * 2.0, rel=1e-13)


def test_coupling_rejects_other_mesh(space4):
    with pytest.raises(ValueError):
        assemble_coupling(space4, P0Space(unit_square_mesh(4)))


def test_exchange_single_network(space4):
    p0 = P0Space(space4.mesh)
    E = assemble_exchange(p0, derive(PhysicalParams()))
    assert np.allclose(E.toarray(), -np.diag(p0.measures), rtol=0, atol=1e-15)


def test_exchange_two_networks_singular_without_storage(space4):
    p0 = P0Space(space4.mesh)
    params = PhysicalParams(n=2, alpha=(1, 1), c=(0, 0), nu=(1, 1), K=(1, 1), beta=((0, 1), (1, 0)))
    E = assemble_exchange(p0, derive(params)).toarray()
    C = p0.dim
    for c in range(C):
        idx = [c, C + c]
        block = E[np.ix_(idx, idx)]
        assert np.allclose(block, -p0.measures[c] * np.array([[1.0, -1.0], [-1.0, 1.0]]), atol=1e-15)
    assert np.max(np.abs(E @ np.ones(2 * C))) <= 1e-15


def test_exchange_two_networks_with_storage_negative_definite(space4):
    p0 = P0Space(space4.mesh)
    params = PhysicalParams(n=2, alpha=(1, 1), c=(1, 1), nu=(1, 1), K=(1, 1), beta=((0, 1), (1, 0)))
    E = assemble_exchange(p0, derive(params)).toarray()
    C = p0.dim
    for c in range(C):
        idx = [c, C + c]
        assert np.linalg.eigvalsh(E[np.ix_(idx, idx)])[-1] < 0


@pytest.mark.parametrize("preset,n", [("mms", 1), ("sensitivity", 2), ("mg", 2), ("mg", 3)])
def test_system_symmetric_and_sized(preset, n):
    mesh = unit_square_mesh(4)
    if n == 1:
        params = single_network(lam=1e8)
    elif n == 2:
        params = two_network(lam=1e4, beta=1e6, c2=0.0)
    else:
        params = PhysicalParams(n=3, alpha=(1, 0.5, 0.1), c=(1, 0, 1), nu=(1, 1e-3, 1), K=(1, 1, 1e-4),
                                beta=((0, 1, 0), (1, 0, 2), (0, 2, 0)))
    system = assemble_system(params, mesh, preset)
    E, C = mesh.n_edges, mesh.n_cells
    mult = n if system.bc.zero_mean else 0
    assert system.matrix.shape[0] == 2 * E + n * 2 * E + n * C + mult
    assert check_symmetric(system, 1e-12)
    lay = system.layout
    A = system.matrix
    if mult:
        for i in range(n):
            row = A[lay.mult(i)].toarray().ravel()
            expected = np.zeros(lay.total)
            expected[lay.p(i)] = mesh.cell_area
            assert np.array_equal(row, expected)
    for d in system.constrained:
        assert A[d].nnz == 1 and A[d, d] == 1.0


def test_coupling_blocks_are_adjoint_in_system():
    params = two_network(alpha2=0.3, tau=0.5)
    system = assemble_system(params, unit_square_mesh(3), "sensitivity")
    lay, A = system.layout, system.matrix
    for i in range(2):
        up = A[lay.u(), lay.p(i)].toarray()
        pu = A[lay.p(i), lay.u()].toarray()
        assert np.array_equal(up, pu.T)
        assert np.abs(up).max() > 0


def test_zero_data_gives_zero_solution():
    system = assemble_system(two_network(), unit_square_mesh(4), "mg")
    assert np.array_equal(system.rhs, np.zeros(system.layout.total))
    x = factorize(system.matrix).solve(system.rhs)
    assert np.max(np.abs(x)) == 0.0


def test_essential_elimination_symmetric():
    A = sp.csr_matrix(np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]))
    B, b = apply_essential(A, [1], [1.0, 2.0, 3.0])
    assert np.array_equal(B.toarray(), [[4.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.5, 0.0, 2.0]])
    assert b.tolist() == [1.0, 0.0, 3.0]


def test_zero_loads_give_zero_vector(space4):
    params = single_network()
    system = assemble_system(params, space4, "mms")
    b = assemble_rhs(params, space4, system.layout, f=lambda p: np.zeros_like(p),
                     r=[lambda p: np.zeros_like(p)], g=[lambda p: np.zeros(len(p))])
    assert np.array_equal(b, np.zeros(system.layout.total))


def test_body_force_load_against_centroid_rule(space4):
    params = single_network()
    system = assemble_system(params, space4, "mms")
    b = assemble_rhs(params, space4, system.layout, f=RIGID[0])
    # basis functions are affine on each cell, so the centroid rule is exact
    m = space4.mesh
    vals = space4.basis_values(m.cell_centroid[:, None, :])[:, :, 0, 0]  # x-components (C, 6)
    ref = np.bincount(space4.cell_dofs.ravel(), (vals * m.cell_area[:, None]).ravel(),
                      minlength=space4.dim)
    assert np.max(np.abs(b[system.layout.u()] - ref)) <= 1e-12


def test_flux_and_source_loads_are_rescaled(space4):
    params = single_network(tau=0.1, K=1e-2)
    lay = assemble_system(params, space4, "mms").layout
    r = [RIGID[1]]
    g = [lambda p: np.ones(len(p))]
    raw = assemble_rhs(params, space4, lay, r=r, g=g, prescaled=True)
    scaled = assemble_rhs(params, space4, lay, r=r, g=g)
    assert np.allclose(scaled[lay.v(0)], 10.0 * raw[lay.v(0)], rtol=1e-14)
    assert np.allclose(scaled[lay.p(0)], 0.1 * raw[lay.p(0)], rtol=1e-14)
    assert np.allclose(raw[lay.p(0)], space4.mesh.cell_area, rtol=1e-14)


def test_constant_source_absorbed_by_multiplier(space4):
    params = single_network()
    system = assemble_system(params, space4, "mms")
    lay = system.layout
    b = assemble_rhs(params, space4, lay, g=[lambda p: np.ones(len(p))])
    x = factorize(system.matrix).solve(b)
    assert np.max(np.abs(system.matrix @ x - b)) <= 1e-10
    assert abs(x[lay.mult(0)]) > 1e-3
    assert abs(x[lay.p(0)] @ space4.mesh.cell_area) <= 1e-12


def test_strong_mass_conservation():
    params = two_network(lam=1e4, nu2=1e-3, K2=1e-3, beta=1.0, c2=0.5, alpha2=0.5)
    mesh = unit_square_mesh(8)
    system = assemble_system(params, mesh, "mg")
    rng = np.random.default_rng(3)
    lay = system.layout
    b = np.zeros(lay.total)
    b[lay.u()] = rng.standard_normal(lay.n_u)
    b[lay.v_all()] = rng.standard_normal(2 * lay.n_u)
    b[system.constrained] = 0.0
    x = factorize(system.matrix).solve(b)
    space, d = system.space, system.derived
    div_u = space.cell_divergence(x[lay.u()])
    p = np.stack([x[lay.p(i)] for i in range(2)])
    for i in range(2):
        div_v = space.cell_divergence(x[lay.v(i)])
        # tested with each cell indicator: alpha_i div u + tau div v_i - ((Lambda1+Lambda2) p)_i
        # plus the multiplier integrates to zero over the cell
        res = mesh.cell_area * (params.alpha[i] * div_u + params.tau * div_v - d.exchange[i] @ p
                                + x[lay.mult(i)])
        assert np.max(np.abs(res)) <= 1e-10


def _dg_norm(space, x, lam):
    N = assemble_broken_h1(space, "all") + lam * assemble_divdiv(space)
    return float(np.sqrt(x @ N @ x))


def test_penalty_robustness():
    params = single_network()
    space = BDM1Space(unit_square_mesh(8))
    sols = {}
    for eta in (10.0, 20.0):
        system = assemble_system(params, space, "mms", eta)
        b = mms_rhs(params, space, system.layout)
        b[system.constrained] = 0.0
        sols[eta] = (system, factorize(system.matrix).solve(b))
    system, x10 = sols[10.0]
    lay = system.layout
    e_u = compute_errors(system, x10)[0]
    diff = _dg_norm(space, x10[lay.u()] - sols[20.0][1][lay.u()], params.lam)
    assert diff < e_u


def _infsup_u(n):
    space = BDM1Space(unit_square_mesh(n))
    free = np.setdiff1d(np.arange(space.dim), boundary_dof_sets(space, {"u": "all"})["u"])
    N_u = (assemble_broken_h1(space, "all") + assemble_divdiv(space))[free][:, free]
    B = assemble_coupling(space, P0Space(space.mesh))[free]
    return infsup_constant(B, N_u, sp.diags(space.mesh.cell_area))


def _infsup_v(n, tau=0.1, K=1e-3):
    space = BDM1Space(unit_square_mesh(n))
    free = np.setdiff1d(np.arange(space.dim), boundary_dof_sets(space, {"v": "all"})["v"])
    N_v = (tau / K * assemble_vector_mass(space) + tau**2 * assemble_divdiv(space))[free][:, free]
    B = tau * assemble_coupling(space, P0Space(space.mesh))[free]
    return infsup_constant(B, N_v, sp.diags(space.mesh.cell_area))


@pytest.mark.parametrize("fn", [_infsup_u, _infsup_v])
def test_infsup_stable_under_refinement(fn):
    values = [fn(n) for n in (4, 8, 16)]
    assert all(v > 0 for v in values)
    for coarse, fine in zip(values, values[1:]):
        assert fine >= 0.9 * coarse, values
