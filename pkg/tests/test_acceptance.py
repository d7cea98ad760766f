"""End-to-end acceptance gate; each criterion logs one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are printed
in the terminal summary.  Expect several minutes (dense eigensolves and the
multigrid studies up to h = 2^-6).
"""

from collections import defaultdict

import numpy as np
import pytest

from bblab import experiments as ex
from bblab.assembly import assemble_ah, assemble_forms, assemble_system
from bblab.linalg import factorize
from bblab.mesh import unit_square_mesh
from bblab.parameters import derive, sherman_morrison_inverse, two_network
from bblab.precond import MgCycleSpec, block_u, mg_hierarchy, mg_setup, space_hierarchy
from bblab.spaces import BDM1Space, bc_preset, boundary_dof_sets

from test_assembly import _infsup_u, _infsup_v

pytestmark = pytest.mark.slow

# reference CG iteration counts, F(2,2)-cycle with 3 levels, h = 2^-3 .. 2^-6
ELASTICITY_REFERENCE = {
    1.0: [10, 10, 9, 9],
    1e3: [14, 14, 13, 13],
    1e6: [14, 14, 13, 13],
    1e9: [14, 14, 14, 13],
    1e12: [14, 15, 14, 14],
}
# reference MinRes counts with the exact preconditioner, h = 2^-3 .. 2^-6
COUPLED_REFERENCE = {
    1e-9: [43, 44, 45, 45],
    1e-6: [43, 44, 45, 45],
    1e-3: [39, 40, 40, 40],
    1.0: [31, 31, 31, 31],
}
LEVELS = [3, 4, 5, 6]


def _record(log, name, ok, detail):
    log.append((name, bool(ok), detail))
    assert ok, detail


@pytest.fixture(scope="module")
def coupled_rows():
    cfg = ex.config_from_pairs("mgstudy", [], {"studies": ["coupled"], "levels": LEVELS})
    rows = ex.run_mgstudy(cfg)
    assert ex.all_ok(rows)
    table = defaultdict(dict)
    for r in rows:
        nu2 = float(r["params"].split(";")[0].split("=")[1])
        table[(nu2, r["mode"])][r["h"]] = r
    return table


def test_criterion_1_convergence_rates(acceptance_log):
    rows = ex.run_convergence(ex.config_from_pairs("convergence", [], {}))
    ok = ex.all_ok(rows)
    worst_rate, worst_spread = [], []
    for name in ("lambda", "nu", "K"):
        sweep = [r for r in rows if r["param_name"] == name and "rate_U" in r]
        for tag in "UVP":
            rates = np.array([r[f"rate_{tag}"] for r in sweep])
            worst_rate += [rates.min(), rates.max()]
            worst_spread.append(rates.max() - rates.min())
            ok &= bool(np.all((rates >= 0.85) & (rates <= 1.3)))
            ok &= bool(rates.max() - rates.min() <= 0.3)
    detail = (f"rates in [{min(worst_rate):.3f}, {max(worst_rate):.3f}] (need [0.85, 1.3]), "
              f"max sweep spread {max(worst_spread):.3f} (need <= 0.3)")
    _record(acceptance_log, "1 convergence", ok, detail)


def test_criterion_2_condition_numbers(acceptance_log):
    rows = ex.run_sensitivity(ex.config_from_pairs("sensitivity", [], {}))
    ok = ex.all_ok(rows) and len(rows) == 648
    kappa = np.array([r["kappa"] for r in rows])
    worst = rows[int(np.argmax(kappa))]
    ok &= bool(kappa.max() <= 10.0)
    ok &= worst["beta"] <= 1e-6 and worst["c2"] == 0.0 and worst["lambda"] == 1.0
    detail = (f"max kappa {kappa.max():.3f} over {len(rows)} points (need <= 10) at "
              f"lambda={worst['lambda']:g}, beta={worst['beta']:g}, c2={worst['c2']:g}")
    _record(acceptance_log, "2 preconditioner robustness", ok, detail)


def test_criterion_3_elasticity_multigrid(acceptance_log):
    cfg = ex.config_from_pairs("mgstudy", [], {"studies": ["elasticity"], "levels": LEVELS})
    rows = ex.run_mgstudy(cfg)
    ok = ex.all_ok(rows)
    worst = 0
    got = defaultdict(list)
    for r in rows:
        got[float(r["params"].split(";")[0].split("=")[1])].append(r["iterations"])
    for lam, ref in ELASTICITY_REFERENCE.items():
        dev = np.abs(np.array(got[lam]) - np.array(ref))
        worst = max(worst, int(dev.max()))
    ok &= worst <= 3
    counts = "; ".join(f"{lam:g}: {got[lam]}" for lam in ELASTICITY_REFERENCE)
    _record(acceptance_log, "3 elasticity multigrid", ok,
            f"max deviation {worst} iterations (need <= 3); counts {counts}")


def test_criterion_4_coupled_solves(acceptance_log, coupled_rows):
    ok = True
    worst_rel, worst_ratio, worst_growth = 0.0, 0.0, 0.0
    for nu2, ref in COUPLED_REFERENCE.items():
        exact = np.array([coupled_rows[(nu2, "exact")][2.0 ** -k]["iterations"] for k in LEVELS])
        mg = np.array([coupled_rows[(nu2, "multigrid")][2.0 ** -k]["iterations"] for k in LEVELS])
        rel = np.abs(exact - np.array(ref)) / np.array(ref)
        worst_rel = max(worst_rel, rel.max())
        worst_ratio = max(worst_ratio, (mg / exact).max())
        # bounded in h: the finest-mesh count stays within 20% of the coarsest
        worst_growth = max(worst_growth, mg.max() / mg.min())
    ok &= worst_rel <= 0.2 and worst_ratio <= 1.8 and worst_growth <= 1.2
    detail = (f"exact vs reference max rel. deviation {worst_rel:.3f} (need <= 0.2); "
              f"MG/exact max ratio {worst_ratio:.2f} (need <= 1.8); "
              f"MG max/min over h {worst_growth:.2f}")
    _record(acceptance_log, "4 coupled solves", ok, detail)


def test_criterion_5_property_suites(acceptance_log):
    rng = np.random.default_rng(11)
    failures = []

    # Sherman-Morrison against dense inversion
    for _ in range(20):
        a, b = rng.uniform(1e-3, 1e3, 2)
        alpha = rng.uniform(0, 1, 3)
        M = a * np.eye(3) + b * np.outer(alpha, alpha)
        if np.abs(sherman_morrison_inverse(a, b, alpha) @ M - np.eye(3)).max() > 1e-12:
            failures.append("sherman-morrison")
            break

    # system symmetry
    system = assemble_system(two_network(lam=1e8, beta=1e6, c2=0.0), unit_square_mesh(8), "mg")
    A = system.matrix
    if abs(A - A.T).max() > 1e-12 * abs(A).max():
        failures.append("symmetry")

    # rigid-body kernel without boundary facets
    space = BDM1Space(unit_square_mesh(8))
    ah = assemble_ah(space, nitsche_segments=())
    for f in (lambda p: np.stack([np.ones(len(p)), np.zeros(len(p))], 1),
              lambda p: np.stack([np.zeros(len(p)), np.ones(len(p))], 1),
              lambda p: np.stack([-p[:, 1], p[:, 0]], 1)):
        if np.abs(ah @ space.interpolate(f)).max() > 1e-12:
            failures.append("rigid kernel")

    # strong mass conservation: div of the discrete fields balances the pressure rows cellwise;
    # moderate coefficients keep the direct solve's own backward error below the threshold
    cons = assemble_system(two_network(lam=1e4, nu2=1e-3, K2=1e-3, alpha2=0.5, beta=1.0, c2=0.5),
                           unit_square_mesh(8), "mg")
    lay = cons.layout
    b = np.zeros(lay.total)
    b[lay.u()] = rng.standard_normal(lay.n_u)
    b[lay.v_all()] = rng.standard_normal(2 * lay.n_u)
    b[cons.constrained] = 0.0
    x = factorize(cons.matrix).solve(b)
    p = np.stack([x[lay.p(i)] for i in range(2)])
    div_u = cons.space.cell_divergence(x[lay.u()])
    for i in range(2):
        res = cons.mesh.cell_area * (cons.params.alpha[i] * div_u
                                     + cons.params.tau * cons.space.cell_divergence(x[lay.v(i)])
                                     - cons.derived.exchange[i] @ p + x[lay.mult(i)])
        if np.abs(res).max() > 1e-10:
            failures.append("mass conservation")

    # Lambda SPD over the sensitivity grid
    g = ex.DEFAULT_GRIDS["sensitivity"]
    for lam in g["lambda"]:
        for nu2 in g["nu2"]:
            for K2 in g["K2"]:
                for a2 in g["alpha2"]:
                    for beta in g["beta"]:
                        for c2 in g["c2"]:
                            L = derive(two_network(lam, nu2, K2, a2, beta, c2)).Lambda
                            if np.linalg.eigvalsh(L)[0] <= 0:
                                failures.append("Lambda SPD")

    # inf-sup constants do not drop by more than 10% under refinement
    for fn in (_infsup_u, _infsup_v):
        vals = [fn(n) for n in (4, 8, 16)]
        if any(f < 0.9 * c for c, f in zip(vals, vals[1:])):
            failures.append("inf-sup")

    # multigrid cycle symmetry
    H = mg_hierarchy(16, 3)
    spaces, refs = space_hierarchy(H)
    bc = bc_preset("mg")
    params = two_network(lam=1e6)
    hier = [(s, boundary_dof_sets(s, bc)["u"], r) for s, r in zip(spaces, refs)]
    M = mg_setup(hier, lambda s: block_u(params, assemble_forms(s, bc)), MgCycleSpec("F"))
    a, c = rng.standard_normal((2, spaces[-1].dim))
    if abs(a @ M(c) - c @ M(a)) > 1e-10 * np.linalg.norm(a) * np.linalg.norm(M(c)):
        failures.append("cycle symmetry")

    _record(acceptance_log, "5 property suites", not failures,
            "all properties hold" if not failures else "failed: " + ", ".join(failures))


def test_criterion_6_timing_trend(acceptance_log, coupled_rows):
    ok = True
    ratios = {}
    for nu2 in COUPLED_REFERENCE:
        r = []
        for k in LEVELS:
            h = 2.0 ** -k
            t_lu = coupled_rows[(nu2, "exact")][h]["seconds"] + coupled_rows[(nu2, "exact")][h]["setup_seconds"]
            t_mg = (coupled_rows[(nu2, "multigrid")][h]["seconds"]
                    + coupled_rows[(nu2, "multigrid")][h]["setup_seconds"])
            r.append(t_lu / t_mg)
        ratios[nu2] = r
        ok &= bool(np.all(np.diff(r) > 0))
    detail = "t_LU/t_MG per nu2: " + "; ".join(
        f"{nu2:g}: " + ", ".join(f"{v:.2f}" for v in r) for nu2, r in ratios.items())
    _record(acceptance_log, "6 timing trend (monotone ratio)", ok, detail)


@pytest.mark.xfail(strict=True, reason="exact-preconditioner counts step from 45 to 48 between "
                   "h = 2^-3 and 2^-4 for nu2 <= 1e-6; see the decisions ledger")
def test_exact_counts_vary_by_at_most_two_across_h(coupled_rows):
    for nu2 in COUPLED_REFERENCE:
        exact = [coupled_rows[(nu2, "exact")][2.0 ** -k]["iterations"] for k in LEVELS]
        assert max(exact) - min(exact) <= 2, (nu2, exact)
