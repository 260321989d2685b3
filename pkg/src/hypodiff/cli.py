"""Command line harness: seeded experiment runs with JSON/CSV reports."""

from __future__ import annotations

import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from . import harness, io
from .errors import ConfigError, HypodiffError


def _common(fn):
    fn = click.option("--config", type=click.Path(exists=True, dir_okay=False),
                      default=None, help="JSON experiment config.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Master seed (overrides the config).")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None,
                      help="Output directory (default: ./reports).")(fn)
    fn = click.option("--workers", type=int, default=None,
                      help="Worker count; HYPODIFF_WORKERS also sets it.")(fn)
    fn = click.option("--figures/--no-figures", default=True,
                      help="Render PNG figures next to the CSV output.")(fn)
    return fn


def _run(name: str, runner, config, seed, out, workers, figures, overrides=None,
         **extra) -> None:
    if workers is None:
        env = os.environ.get("HYPODIFF_WORKERS")
        workers = int(env) if env else None
    merged_overrides = {"seed": seed, "workers": workers}
    if overrides:
        merged_overrides.update(overrides)
    try:
        cfg = harness.load_config(config, merged_overrides)
        out_dir = Path(out) if out else Path(cfg.get("out", "reports"))
        out_dir = out_dir / name
        out_dir.mkdir(parents=True, exist_ok=True)
        results, passed = runner(cfg, out_dir, figures, **extra)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except HypodiffError as exc:
        click.echo(f"contract failure: {exc}", err=True)
        sys.exit(1)
    report = {
        "meta": {
            "experiment": cfg.get("experiment", "unnamed"),
            "subcommand": name,
            "seed": int(cfg["seed"]),
            "workers": int(cfg.get("workers", 1)),
            "timestamp": datetime.now(timezone.utc).isoformat(),
        },
        "results": results,
        "pass": bool(passed),
    }
    io.write_report(out_dir / "report.json", report)
    click.echo(f"{name}: {'PASS' if passed else 'FAIL'} (reports in {out_dir})")
    sys.exit(0 if passed else 1)


@click.group()
def main():
    """Degenerate-diffusion numerics: checks, samplers, and estimates."""


@main.command("group-check")
@_common
def group_check(config, seed, out, workers, figures):
    """Randomized group-axiom and dilation checks."""
    _run("group-check", harness.run_group_check, config, seed, out, workers, figures)


@main.command("density-check")
@_common
def density_check(config, seed, out, workers, figures):
    """Normalization, semigroup, residual, cancellation, scaling checks."""
    _run("density-check", harness.run_density_check, config, seed, out, workers,
         figures)


@main.command("sample")
@_common
@click.option("--paths", type=int, default=None, help="Number of paths.")
@click.option("--grid", type=str, default=None, help="Grid start:step:stop.")
def sample(config, seed, out, workers, figures, paths, grid):
    """Exact Gaussian sampling of the linear-drift equation."""
    overrides = {"mc": {k: v for k, v in
                        {"paths": paths, "grid": grid}.items() if v is not None}}
    _run("sample", harness.run_sample, config, seed, out, workers, figures,
         overrides=overrides)


@main.command("euler")
@_common
@click.option("--paths", type=int, default=None, help="Number of paths.")
@click.option("--mesh", type=float, default=None, help="Euler step size.")
@click.option("--horizon", type=float, default=None, help="Simulation horizon.")
def euler(config, seed, out, workers, figures, paths, mesh, horizon):
    """Euler-Maruyama simulation of the configured coefficient field."""
    overrides = {"mc": {k: v for k, v in
                        {"paths": paths, "mesh": mesh, "horizon": horizon}.items()
                        if v is not None}}
    _run("euler", harness.run_euler, config, seed, out, workers, figures,
         overrides=overrides)


@main.command("mg-residual")
@_common
def mg_residual(config, seed, out, workers, figures):
    """Martingale-residual diagnostic on the exact ensemble."""
    _run("mg-residual", harness.run_mg_residual, config, seed, out, workers, figures)


@main.command("green-compare")
@_common
def green_compare(config, seed, out, workers, figures):
    """Monte Carlo Green's functionals against quadrature."""
    _run("green-compare", harness.run_green_compare, config, seed, out, workers,
         figures)


@main.command("lp-estimate")
@_common
@click.option("--p", "p_exponent", type=float, default=None, help="L^p exponent.")
@click.option("--jmax", type=int, default=None, help="Largest dyadic window.")
def lp_estimate(config, seed, out, workers, figures, p_exponent, jmax):
    """Truncated singular-integral norm ratios and plateau verdict."""
    _run("lp-estimate", harness.run_lp_estimate, config, seed, out, workers,
         figures, p=p_exponent, jmax=jmax)


@main.command("sup-bound")
@_common
def sup_bound(config, seed, out, workers, figures):
    """Sup-norm bound table for the windowed Green's operator."""
    _run("sup-bound", harness.run_sup_bound, config, seed, out, workers, figures)


@main.command("uniqueness-compare")
@_common
def uniqueness_compare(config, seed, out, workers, figures):
    """Two-sample law comparison between configured ensembles."""
    _run("uniqueness-compare", harness.run_uniqueness_compare, config, seed, out,
         workers, figures)


@main.command("transform-check")
@_common
@click.option("--example", type=str, default=None,
              help="Which construction to verify: 5.23 or pushforward.")
def transform_check(config, seed, out, workers, figures, example):
    """Change-of-variables consistency via two-sample tests."""
    _run("transform-check", harness.run_transform_check, config, seed, out,
         workers, figures, example=example)


@main.command("localize")
@_common
def localize(config, seed, out, workers, figures):
    """Stopping-time statistics under a localization radius."""
    _run("localize", harness.run_localize, config, seed, out, workers, figures)


if __name__ == "__main__":
    main()
