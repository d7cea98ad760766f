"""``bb`` command line tool.

    bb convergence|sensitivity|mgstudy [flags] [config]   -> CSV
    bb solve [flags] [config]                              -> vectors + report.json
    bb export [flags] [config]                             -> Matrix Market files

Config files hold key=value lines; repeating a key (``lambda=1`` then
``lambda=1e4``) builds a grid.  Flags override the file.
"""

from __future__ import annotations

import json
import sys

import click

from . import experiments as ex


def _grid_option(values):
    grid = {}
    for item in values:
        if "=" not in item:
            raise click.BadParameter(f"expected name=v1,v2,... got {item!r}")
        name, vals = item.split("=", 1)
        try:
            grid[name.strip()] = ex.parse_values(vals)
        except ValueError as exc:
            raise click.BadParameter(str(exc)) from None
    return grid


def _param_option(values):
    out = {}
    for item in values:
        if "=" not in item:
            raise click.BadParameter(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def common(f):
    opts = [
        click.argument("config", required=False, type=click.Path(exists=True, dir_okay=False)),
        click.option("--eta", type=float, help="interior penalty parameter"),
        click.option("--omega", type=float, help="Richardson damping of the patch smoother"),
        click.option("--rtol", type=float, help="relative residual reduction"),
        click.option("--levels", help="comma list of k with h = 2^-k"),
        click.option("--mg-levels", type=int, help="multigrid depth"),
        click.option("--grid", multiple=True, help="name=v1,v2,... (repeatable)"),
        click.option("--param", multiple=True, help="fixed parameter key=value (repeatable)"),
        click.option("--mode", type=click.Choice(["exact", "multigrid", "both"])),
        click.option("--preset", type=click.Choice(["mms", "sensitivity", "mg"])),
        click.option("--seed", type=int),
        click.option("--max-iter", type=int),
        click.option("--no-tau2", is_flag=True, default=False,
                     help="drop tau^2 from the div-div coupling of the flux block"),
        click.option("--output", "-o", help="output file or directory"),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _config(command, config, kw) -> ex.ExperimentConfig:
    overrides = dict(
        eta=kw.get("eta"), omega=kw.get("omega"), rtol=kw.get("rtol"),
        mg_levels=kw.get("mg_levels"), mode=kw.get("mode"), preset=kw.get("preset"),
        seed=kw.get("seed"), max_iter=kw.get("max_iter"), output=kw.get("output"),
        grid=_grid_option(kw.get("grid") or ()), params=_param_option(kw.get("param") or ()),
    )
    if kw.get("levels"):
        overrides["levels"] = [int(v) for v in kw["levels"].split(",") if v.strip()]
    if kw.get("no_tau2"):
        overrides["tau2"] = False
    for key in ("rhs", "export_matrix"):
        if kw.get(key):
            overrides[key] = kw[key]
    if kw.get("study"):
        overrides["studies"] = [s for item in kw["study"] for s in item.split(",") if s]
    try:
        return ex.load_config(command, config, overrides)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


def _finish(rows, cfg, columns):
    ex.write_csv(rows, cfg.output, columns)
    bad = [r for r in rows if r.get("status") != "ok"]
    if bad:
        click.echo(f"{len(bad)} of {len(rows)} rows failed", err=True)
        sys.exit(1)


@click.group()
def main():
    """Finite-element experiments for the generalized Biot-Brinkman system."""


@main.command()
@common
def convergence(config, **kw):
    """Errors and rates for the manufactured single-network solution."""
    cfg = _config("convergence", config, kw)
    _finish(ex.run_convergence(cfg), cfg, ex.CONVERGENCE_COLUMNS)


@main.command()
@common
def sensitivity(config, **kw):
    """Condition numbers of the preconditioned two-network system over a grid."""
    cfg = _config("sensitivity", config, kw)
    _finish(ex.run_sensitivity(cfg), cfg, ex.SENSITIVITY_COLUMNS)


@main.command()
@common
@click.option("--study", multiple=True, help="elasticity, flux, coupled (repeatable)")
def mgstudy(config, **kw):
    """Iteration counts with exact and multigrid block solvers."""
    cfg = _config("mgstudy", config, kw)
    _finish(ex.run_mgstudy(cfg), cfg, ex.MGSTUDY_COLUMNS)


@main.command()
@common
@click.option("--rhs", type=click.Choice(["mms", "zero", "random"]))
@click.option("--export-matrix", is_flag=True, default=False, help="also write matrix.mtx")
@click.option("--import", "import_dir", type=click.Path(exists=True, file_okay=False),
              help="solve a system previously written by 'bb export'")
def solve(config, import_dir=None, **kw):
    """Solve one system with preconditioned MinRes."""
    cfg = _config("solve", config, kw)
    if import_dir:
        _, rep = ex.solve_imported(import_dir, rtol=cfg.rtol, max_iter=cfg.max_iter)
        report = dict(iterations=rep.iterations, converged=bool(rep.converged),
                      final_residual=rep.final_residual)
    else:
        report = ex.run_solve(cfg, cfg.output or "solution")
    click.echo(json.dumps(report))
    if not report["converged"]:
        sys.exit(1)


@main.command()
@common
@click.option("--rhs", type=click.Choice(["mms", "zero", "random"]))
def export(config, **kw):
    """Write the assembled system and its preconditioner blocks."""
    cfg = _config("export", config, kw)
    layout = ex.run_export(cfg, cfg.output or "export")
    click.echo(json.dumps({"total": layout["total"], "blocks": layout["blocks"]}))


if __name__ == "__main__":
    main()
