"""Experiment drivers behind the ``bb`` command line tool.

Every driver returns a list of row dicts (one per grid point, in
deterministic grid order) and never raises on a per-row failure: the row
carries ``status`` = the error text instead of ``ok``.
"""

from __future__ import annotations

import csv
import itertools
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .assembly import DEFAULT_ETA, apply_essential, assemble_forms, assemble_system
from .linalg import factorize, read_mtx, read_vector, write_mtx, write_vector
from .mesh import unit_square_mesh
from .mms import compute_errors, mms_rhs
from .parameters import params_from_mapping, read_kv, single_network, two_network
from .precond import (BlockPreconditioner, ExactBlock, MgCycleSpec, block_u, block_v,
                      build_block_matrices, mg_hierarchy, mg_setup, norm_matrix, space_hierarchy)
from .solvers import cg, condition_number, minres, write_history
from .spaces import BDM1Space, bc_preset, boundary_dof_sets

COMMANDS = ("convergence", "sensitivity", "mgstudy", "solve", "export")

CONVERGENCE_COLUMNS = ["param_name", "param_value", "h", "e_U", "e_V", "e_P",
                       "rate_U", "rate_V", "rate_P", "status"]
SENSITIVITY_COLUMNS = ["lambda", "nu2", "K2", "alpha2", "beta", "c2", "kappa",
                       "lambda_min", "lambda_max", "cond_Lambda", "status"]
MGSTUDY_COLUMNS = ["study", "h", "params", "mode", "iterations", "seconds", "setup_seconds",
                   "converged", "status"]

DEFAULT_GRIDS = {
    "convergence": {"lambda": [1.0, 1e4, 1e8, 1e12], "nu": [1.0, 1e-3, 1e-6, 1e-9],
                    "K": [1.0, 1e-3, 1e-6, 1e-9]},
    "sensitivity": {"lambda": [1.0, 1e4, 1e8, 1e12], "nu2": [1.0, 1e-4, 1e-8],
                    "K2": [1.0, 1e-4, 1e-8], "alpha2": [1.0, 1e-4, 1e-8],
                    "beta": [1e-6, 1.0, 1e6], "c2": [0.0, 1.0]},
    "elasticity": {"lambda": [1.0, 1e3, 1e6, 1e9, 1e12]},
    "flux": {"lambda": [1.0, 1e12], "nu2": [1.0, 1e-4, 1e-8], "K2": [1.0, 1e-4, 1e-8],
             "beta": [1e-6, 1e6]},
    "coupled": {"nu2": [1e-9, 1e-6, 1e-3, 1.0]},
}
DEFAULT_LEVELS = {"convergence": [2, 3, 4, 5], "sensitivity": [3], "mgstudy": [3, 4, 5, 6],
                  "solve": [3], "export": [3]}
DEFAULT_PRESET = {"convergence": "mms", "sensitivity": "sensitivity", "mgstudy": "mg",
                  "solve": "mms", "export": "mms"}
STUDIES = ("elasticity", "flux", "coupled")
ALIASES = {"lam": "lambda", "nu_1": "nu", "K_1": "K", "nu_2": "nu2", "K_2": "K2",
           "alpha_2": "alpha2", "c_2": "c2", "beta_12": "beta"}
# grid names -> flat parameter-file keys
PARAM_KEYS = {"nu": "nu_1", "K": "K_1", "nu2": "nu_2", "K2": "K_2", "alpha2": "alpha_2",
              "c2": "c_2", "beta": "beta_12"}
OPTION_KEYS = {"eta", "omega", "rtol", "levels", "mode", "preset", "output", "study",
               "mg_levels", "max_iter", "seed", "rhs", "tau2", "coupled_K2", "coupled_beta",
               "export_matrix"}


@dataclass
class ExperimentConfig:
    command: str
    levels: list = field(default_factory=list)  # h = 2^-k for k in levels
    grid: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)  # fixed physical parameters (flat keys)
    preset: str = ""
    eta: float = DEFAULT_ETA
    omega: float = 1.0 / 3.0
    rtol: float = 1e-8
    mode: str = ""
    mg_levels: int = 3
    max_iter: int = 1000
    seed: int = 0
    rhs: str = "random"
    tau2: bool = True
    studies: list = field(default_factory=list)
    coupled_K2: float = 1e-3
    coupled_beta: float = 1e-6
    output: str | None = None
    export_matrix: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if not self.levels:
            self.levels = list(DEFAULT_LEVELS[self.command])
        if not self.preset:
            self.preset = DEFAULT_PRESET[self.command]
        bc_preset(self.preset)
        if any(int(k) < 0 for k in self.levels):
            raise ValueError("levels are exponents k >= 0 of h = 2^-k")
        self.levels = [int(k) for k in self.levels]
        for name, values in self.grid.items():
            if not values:
                raise ValueError(f"grid {name!r} is empty")
        if not self.mode:
            self.mode = "both" if self.command == "mgstudy" else "exact"
        if self.mode not in ("exact", "multigrid", "both"):
            raise ValueError("mode must be exact, multigrid or both")
        if self.command == "mgstudy":
            self.studies = list(self.studies) or list(STUDIES)
            for s in self.studies:
                if s not in STUDIES:
                    raise ValueError(f"unknown study {s!r}; have {STUDIES}")

    def grid_for(self, key: str) -> dict:
        base = {k: list(v) for k, v in DEFAULT_GRIDS[key].items()}
        for name, values in self.grid.items():
            if name in base:
                base[name] = list(values)
        return base


def parse_values(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def config_from_pairs(command: str, pairs, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from key=value pairs; repeated keys accumulate grid values."""
    grid: dict[str, list] = {}
    params: dict[str, str] = {}
    opts: dict[str, object] = {}
    studies: list[str] = []
    for key, value in pairs:
        key = ALIASES.get(key, key)
        if key in OPTION_KEYS:
            if key == "study":
                studies += [s for s in str(value).split(",") if s]
            elif key == "levels":
                opts["levels"] = [int(v) for v in str(value).split(",") if v.strip()]
            else:
                opts[key] = value
        elif key in ("n", "mu", "tau") or "_" in key:
            params[key] = value
        else:
            grid.setdefault(key, []).extend(parse_values(value))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "grid":
            for name, vals in value.items():
                grid[ALIASES.get(name, name)] = vals
        elif key == "params":
            params.update(value)
        elif key == "studies":
            studies = list(value) or studies
        else:
            opts[key] = value
    kw = dict(command=command, grid=grid, params=params, studies=studies)
    casts = {"eta": float, "omega": float, "rtol": float, "mg_levels": int, "max_iter": int,
             "seed": int, "coupled_K2": float, "coupled_beta": float}
    for key, value in opts.items():
        if key in casts:
            kw[key] = casts[key](value)
        elif key in ("tau2", "export_matrix"):
            kw[key] = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
        else:
            kw[key] = value
    return ExperimentConfig(**kw)


def load_config(command: str, path=None, overrides: dict | None = None) -> ExperimentConfig:
    pairs = read_kv(path) if path else []
    return config_from_pairs(command, pairs, overrides)


def write_csv(rows, path, columns) -> None:
    """Write rows with a header; floats keep full precision."""
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return v

    fh = open(path, "w", newline="") if path else None
    try:
        out = csv.writer(fh or sys.stdout)
        out.writerow(columns)
        for row in rows:
            out.writerow([fmt(row.get(c)) for c in columns])
    finally:
        if fh:
            fh.close()


def all_ok(rows) -> bool:
    return all(r.get("status") == "ok" for r in rows)


def _fixed(cfg: ExperimentConfig) -> dict:
    return {k: float(v) for k, v in cfg.params.items() if k not in ("n",)}


def _err_text(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


# ----------------------------------------------------------------------
# convergence


def _single_from(cfg, name, value):
    fixed = _fixed(cfg)
    kw = dict(lam=fixed.get("lambda", 1.0), nu=fixed.get("nu_1", 1.0), K=fixed.get("K_1", 1.0),
              alpha=fixed.get("alpha_1", 1e-3), c=fixed.get("c_1", 1e-2),
              mu=fixed.get("mu", 1.0), tau=fixed.get("tau", 0.1))
    kw[{"lambda": "lam", "nu": "nu", "K": "K"}[name]] = value
    return single_network(**kw)


def solve_direct(system):
    return factorize(system.matrix).solve(system.rhs)


def run_convergence(cfg: ExperimentConfig) -> list[dict]:
    """Errors and observed rates of the manufactured solution per sweep value."""
    rows = []
    grid = cfg.grid_for("convergence")
    meshes = {k: BDM1Space(unit_square_mesh(2 ** k)) for k in cfg.levels}
    forms = {}
    for name, values in grid.items():
        for value in values:
            prev = None
            for k in cfg.levels:
                row = dict(param_name=name, param_value=float(value), h=2.0 ** -k)
                try:
                    params = _single_from(cfg, name, value)
                    space = meshes[k]
                    if k not in forms:
                        forms[k] = assemble_forms(space, bc_preset(cfg.preset), cfg.eta)
                    system = assemble_system(params, space, cfg.preset, cfg.eta, forms=forms[k])
                    b = mms_rhs(params, space, system.layout)
                    b[system.constrained] = 0.0
                    system.rhs = b
                    errs = compute_errors(system, solve_direct(system))
                    row.update(e_U=errs[0], e_V=errs[1], e_P=errs[2], status="ok")
                    if prev is not None and prev[0] == 2.0 ** -(k - 1):
                        for tag, e0, e1 in zip("UVP", prev[1], errs):
                            row[f"rate_{tag}"] = float(np.log2(e0 / e1))
                    prev = (row["h"], errs)
                except Exception as exc:  # recorded per row, run continues
                    row["status"] = _err_text(exc)
                    prev = None
                rows.append(row)
    return rows


# ----------------------------------------------------------------------
# sensitivity


def constrained_basis(system) -> sp.csr_matrix:
    """Columns spanning the free dofs, with zero-mean pressures when multipliers exist."""
    lay = system.layout
    free = np.ones(lay.total, dtype=bool)
    free[system.constrained] = False
    if not lay.multipliers:
        return sp.eye(lay.total, format="csr")[:, np.flatnonzero(free)]
    free[lay.mult_all()] = False
    cols = []
    areas = system.mesh.cell_area
    C = len(areas)
    keep_u_v = np.flatnonzero(free[: lay.v_all().stop])
    I = sp.eye(lay.total, format="csr")
    cols.append(I[:, keep_u_v])
    for i in range(lay.n):
        start = lay.p(i).start
        last = start + C - 1
        k = np.arange(C - 1)
        rows = np.concatenate([start + k, np.full(C - 1, last)])
        cc = np.concatenate([k, k])
        vals = np.concatenate([np.ones(C - 1), -areas[:-1] / areas[-1]])
        cols.append(sp.csr_matrix((vals, (rows, cc)), shape=(lay.total, C - 1)))
    return sp.hstack(cols, format="csr")


def preconditioned_condition(system, tau2: bool = True):
    return condition_number(system.matrix, norm_matrix(system, tau2), constrained_basis(system))


def run_sensitivity(cfg: ExperimentConfig) -> list[dict]:
    """Condition numbers of the exactly preconditioned two-network system."""
    grid = cfg.grid_for("sensitivity")
    fixed = _fixed(cfg)
    rows = []
    for k in cfg.levels:
        space = BDM1Space(unit_square_mesh(2 ** k))
        forms = assemble_forms(space, bc_preset(cfg.preset), cfg.eta)
        keys = ["lambda", "nu2", "K2", "alpha2", "beta", "c2"]
        for combo in itertools.product(*(grid[key] for key in keys)):
            lam, nu2, K2, alpha2, beta, c2 = (float(v) for v in combo)
            row = {"lambda": lam, "nu2": nu2, "K2": K2, "alpha2": alpha2, "beta": beta, "c2": c2}
            try:
                params = two_network(lam, nu2, K2, alpha2, beta, c2, mu=fixed.get("mu", 1.0),
                                     tau=fixed.get("tau", 1.0))
                system = assemble_system(params, space, cfg.preset, cfg.eta, forms=forms)
                rep = preconditioned_condition(system, cfg.tau2)
                row.update(kappa=rep.condition, lambda_min=rep.lambda_min,
                           lambda_max=rep.lambda_max, cond_Lambda=system.derived.cond_Lambda,
                           status="ok")
            except Exception as exc:
                row["status"] = _err_text(exc)
            rows.append(row)
    return rows


# ----------------------------------------------------------------------
# multigrid study


def _random_rhs(n, constrained, seed):
    b = np.random.default_rng(seed).standard_normal(n)
    b[constrained] = 0.0
    return b


def _param_label(d: dict) -> str:
    return ";".join(f"{k}={v:g}" for k, v in d.items())


def elasticity_solve(lam, k, cfg: ExperimentConfig, mu: float = 1.0):
    """CG on the displacement block with the F-cycle; returns (iterations, seconds, setup, ok)."""
    t0 = time.perf_counter()
    H = mg_hierarchy(2 ** k, cfg.mg_levels)
    spaces, refs = space_hierarchy(H)
    bc = bc_preset(cfg.preset)
    params = two_network(lam=lam, mu=mu)
    cache = {}

    def assemble(space):
        if id(space) not in cache:
            cache[id(space)] = assemble_forms(space, bc, cfg.eta)
        return block_u(params, cache[id(space)])

    hier = [(s, boundary_dof_sets(s, bc)["u"], r) for s, r in zip(spaces, refs)]
    M = mg_setup(hier, assemble, MgCycleSpec("F", omega=cfg.omega, levels=cfg.mg_levels))
    A = apply_essential(assemble(spaces[-1]), hier[-1][1])
    setup = time.perf_counter() - t0
    b = _random_rhs(A.shape[0], hier[-1][1], cfg.seed)
    _, rep = cg(A, b, M, reduction=1.0 / cfg.rtol, max_iter=cfg.max_iter)
    return rep, setup


def flux_solve(params, k, cfg: ExperimentConfig):
    """CG on the coupled flux block with the W-cycle."""
    from .parameters import derive

    t0 = time.perf_counter()
    H = mg_hierarchy(2 ** k, cfg.mg_levels)
    spaces, refs = space_hierarchy(H)
    bc = bc_preset(cfg.preset)
    derived = derive(params)
    n = params.n
    cache = {}

    def assemble(space):
        if id(space) not in cache:
            cache[id(space)] = assemble_forms(space, bc, cfg.eta)
        return block_v(params, derived, cache[id(space)], cfg.tau2)

    def bc_v(space):
        d = boundary_dof_sets(space, bc)["v"]
        return np.concatenate([d + i * space.dim for i in range(n)])

    hier = [(s, bc_v(s), r) for s, r in zip(spaces, refs)]
    M = mg_setup(hier, assemble, MgCycleSpec("W", omega=cfg.omega, levels=cfg.mg_levels), n)
    A = apply_essential(assemble(spaces[-1]), hier[-1][1])
    setup = time.perf_counter() - t0
    b = _random_rhs(A.shape[0], hier[-1][1], cfg.seed)
    _, rep = cg(A, b, M, reduction=1.0 / cfg.rtol, max_iter=cfg.max_iter)
    return rep, setup


def coupled_solve(params, k, mode, cfg: ExperimentConfig):
    """MinRes on the full system with the exact or multigrid block preconditioner.

    The setup time covers building the preconditioner only; meshes and the
    system matrix are shared by both modes and are not counted.
    """
    H = mg_hierarchy(2 ** k, cfg.mg_levels)
    space = BDM1Space(H.finest)
    system = assemble_system(params, space, cfg.preset, cfg.eta)
    t0 = time.perf_counter()
    B = BlockPreconditioner(system, mode, tau2=cfg.tau2, hierarchy=H,
                            u_cycle=MgCycleSpec("F", omega=cfg.omega, levels=cfg.mg_levels),
                            v_cycle=MgCycleSpec("W", omega=cfg.omega, levels=cfg.mg_levels))
    setup = time.perf_counter() - t0
    b = _random_rhs(system.layout.total, system.constrained, cfg.seed)
    _, rep = minres(system.matrix, b, B, rtol=cfg.rtol, max_iter=cfg.max_iter)
    return rep, setup


def _mg_row(study, k, label, mode, fn):
    row = dict(study=study, h=2.0 ** -k, params=label, mode=mode)
    try:
        rep, setup = fn()
        row.update(iterations=rep.iterations, seconds=rep.seconds, setup_seconds=setup,
                   converged=bool(rep.converged),
                   status="ok" if rep.converged else (rep.breakdown or "not converged"))
    except Exception as exc:
        row["status"] = _err_text(exc)
    return row


def run_mgstudy(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    fixed = _fixed(cfg)
    mu = fixed.get("mu", 1.0)
    if "elasticity" in cfg.studies:
        for lam in cfg.grid_for("elasticity")["lambda"]:
            for k in cfg.levels:
                rows.append(_mg_row("elasticity", k, _param_label({"lambda": lam, "mu": mu}),
                                    "multigrid", lambda: elasticity_solve(lam, k, cfg, mu)))
    if "flux" in cfg.studies:
        g = cfg.grid_for("flux")
        for beta, lam, K2, nu2 in itertools.product(g["beta"], g["lambda"], g["K2"], g["nu2"]):
            p = two_network(lam=lam, nu2=nu2, K2=K2, alpha2=1.0, beta=beta, c2=0.0, mu=mu)
            label = _param_label({"lambda": lam, "nu2": nu2, "K2": K2, "beta": beta})
            for k in cfg.levels:
                rows.append(_mg_row("flux", k, label, "multigrid",
                                    lambda: flux_solve(p, k, cfg)))
    if "coupled" in cfg.studies:
        modes = ["exact", "multigrid"] if cfg.mode == "both" else [cfg.mode]
        for nu2 in cfg.grid_for("coupled")["nu2"]:
            p = two_network(lam=1.0, nu2=nu2, K2=cfg.coupled_K2, alpha2=1.0,
                            beta=cfg.coupled_beta, c2=0.0, mu=mu)
            label = _param_label({"nu2": nu2, "K2": cfg.coupled_K2, "beta": cfg.coupled_beta})
            for mode in modes:
                for k in cfg.levels:
                    rows.append(_mg_row("coupled", k, label, mode,
                                        lambda: coupled_solve(p, k, mode, cfg)))
    return rows


# ----------------------------------------------------------------------
# single solves and export


def build_system(cfg: ExperimentConfig):
    """System (with right-hand side) for ``solve``/``export`` at the first level."""
    k = cfg.levels[0]
    mapping = dict(cfg.params)
    for name, values in cfg.grid.items():
        if len(values) != 1:
            raise ValueError(f"{name!r} needs exactly one value for a single solve")
        mapping[PARAM_KEYS.get(name, name)] = values[0]
    params = params_from_mapping(mapping) if mapping else single_network()
    mg = cfg.mode == "multigrid"
    H = mg_hierarchy(2 ** k, cfg.mg_levels) if mg else None
    mesh = H.finest if mg else unit_square_mesh(2 ** k)
    space = BDM1Space(mesh)
    system = assemble_system(params, space, cfg.preset, cfg.eta)
    if cfg.rhs == "mms":
        b = mms_rhs(params, space, system.layout)
    elif cfg.rhs == "zero":
        b = np.zeros(system.layout.total)
    elif cfg.rhs == "random":
        b = np.random.default_rng(cfg.seed).standard_normal(system.layout.total)
    else:
        raise ValueError("rhs must be mms, zero or random")
    b[system.constrained] = 0.0
    system.rhs = b
    return system, H


class MatrixBlockPreconditioner:
    """Exact block preconditioner rebuilt from exported block matrices."""

    def __init__(self, blocks, sizes):
        self.blocks = [ExactBlock(B) for B in blocks]
        edges = np.cumsum([0] + list(sizes))
        self.slices = [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]

    def __call__(self, x):
        return np.concatenate([blk(x[s]) for blk, s in zip(self.blocks, self.slices)])


def exact_matrix_preconditioner(system, tau2=True):
    blocks = build_block_matrices(system, tau2)
    return MatrixBlockPreconditioner(blocks, [B.shape[0] for B in blocks])


def run_export(cfg: ExperimentConfig, outdir) -> dict:
    """Write matrix.mtx, rhs.txt, the three preconditioner blocks and layout.json."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    system, _ = build_system(cfg)
    write_mtx(out / "matrix.mtx", system.matrix, symmetric=True)
    write_vector(out / "rhs.txt", system.rhs)
    blocks = build_block_matrices(system, cfg.tau2)
    for name, B in zip(("block_u", "block_v", "block_p"), blocks):
        write_mtx(out / f"{name}.mtx", B, symmetric=True)
    layout = dict(ranges={n: [s.start, s.stop] for n, s in system.layout.ranges()},
                  blocks=[B.shape[0] for B in blocks], eta=cfg.eta, preset=cfg.preset,
                  total=system.layout.total)
    (out / "layout.json").write_text(json.dumps(layout, indent=1))
    return layout


def solve_imported(directory, rtol=1e-8, max_iter=1000):
    """MinRes on an exported system with its exported exact block preconditioner."""
    d = Path(directory)
    A = read_mtx(d / "matrix.mtx")
    b = read_vector(d / "rhs.txt")
    blocks = [read_mtx(d / f"{name}.mtx") for name in ("block_u", "block_v", "block_p")]
    M = MatrixBlockPreconditioner(blocks, [B.shape[0] for B in blocks])
    return minres(A, b, M, rtol=rtol, max_iter=max_iter)


def run_solve(cfg: ExperimentConfig, outdir) -> dict:
    """Solve one system with MinRes and write per-field vectors plus a report."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    system, H = build_system(cfg)
    if cfg.mode == "multigrid":
        B = BlockPreconditioner(system, "multigrid", tau2=cfg.tau2, hierarchy=H,
                                u_cycle=MgCycleSpec("F", omega=cfg.omega, levels=cfg.mg_levels),
                                v_cycle=MgCycleSpec("W", omega=cfg.omega, levels=cfg.mg_levels))
    else:
        B = exact_matrix_preconditioner(system, cfg.tau2)
    x, rep = minres(system.matrix, system.rhs, B, rtol=cfg.rtol, max_iter=cfg.max_iter)
    for name, sl in system.layout.ranges():
        write_vector(out / f"{name}.txt", x[sl])
    write_history(out / "residuals.csv", rep)
    report = dict(iterations=rep.iterations, converged=bool(rep.converged), seconds=rep.seconds,
                  breakdown=rep.breakdown, final_residual=rep.final_residual,
                  h=2.0 ** -cfg.levels[0], eta=cfg.eta, preset=cfg.preset, mode=cfg.mode,
                  rhs=cfg.rhs, dofs=system.layout.total)
    if cfg.rhs == "mms" and system.params.n == 1:
        report.update(zip(("e_U", "e_V", "e_P"), compute_errors(system, x)))
    (out / "report.json").write_text(json.dumps(report, indent=1))
    if cfg.export_matrix:
        write_mtx(out / "matrix.mtx", system.matrix, symmetric=True)
        write_vector(out / "rhs.txt", system.rhs)
    return report
