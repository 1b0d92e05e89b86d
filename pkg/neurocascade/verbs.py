"""Batch commands (sweep, compare, concentration) registered onto the Typer app."""
from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Optional

import typer

from .cascade import CascadeParams, Engine
from .experiment import (
    CellResult,
    ExperimentPlan,
    ReplicationError,
    check_cells,
    compare_report,
    critical_alphas,
    run_cell,
    run_sweep,
    trajectory_concentration_study,
)
from .output import (
    OutputError,
    emit,
    ensure_writable,
    fail,
    write_json,
    write_sweep_csv,
    write_trajectory_csv,
)
from .runtime import (
    EXIT_CHECK_FAILED,
    EXIT_INAPPLICABLE,
    EXIT_USAGE,
    ConfigError,
    RunConfig,
    bootstrap,
    require,
    require_seed,
    resolve_distribution,
    resolve_threads,
)

logger = logging.getLogger(__name__)


def _plan(cfg: RunConfig, alpha_grid: tuple, omega_grid: tuple) -> ExperimentPlan:
    return ExperimentPlan(
        dist=resolve_distribution(cfg),
        alpha_grid=alpha_grid,
        omega_grid=omega_grid,
        n=cfg.n,
        reps=cfg.reps,
        master_seed=require_seed(cfg),
        engine=Engine(cfg.engine),
        record_trajectories=cfg.record_trajectories,
        threads=resolve_threads(cfg),
        grid_step=cfg.grid_step,
        root_tol=cfg.root_tol,
        tangency_tol=cfg.tangency_tol,
    )


def _trajectory_dir(out: str) -> Path:
    return Path(f"{out}.trajectories")


def _write_cell_trajectories(out: str, cells: list[CellResult]) -> int:
    """One CSV per replication under <out>.trajectories/."""
    folder = _trajectory_dir(out)
    try:
        folder.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"Cannot create {folder}: {exc}") from exc
    written = 0
    for cell in cells:
        for rep, trajectory in enumerate(cell.trajectories):
            write_trajectory_csv(folder / f"alpha{cell.alpha:g}_omega{cell.omega}_rep{rep}.csv", trajectory)
            written += 1
    return written


def _sweep(
    dist: Optional[str] = typer.Option(None, "--dist", help="Distribution config JSON file."),
    alphas: Optional[str] = typer.Option(
        None, "--alphas", help="Alpha grid, start:stop:step (inclusive) or a comma list (default 0:0.3:0.01)."
    ),
    omegas: Optional[str] = typer.Option(
        None, "--omegas", help="Omega grid, start:stop[:step] or a comma list (default 1:40)."
    ),
    n: Optional[int] = typer.Option(None, "--n", help="Vertices per graph (default 10000)."),
    reps: Optional[int] = typer.Option(None, "--reps", help="Replications per cell (default 10)."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed; required."),
    engine: Optional[str] = typer.Option(
        None, "--engine", help="synchronous, sequential-replay or sequential-onfly (default synchronous)."
    ),
    threads: Optional[int] = typer.Option(
        None, "--threads", help="Worker threads (default $NEUROCASCADE_THREADS or the CPU count)."
    ),
    out: Optional[str] = typer.Option(None, "--out", help="Sweep CSV to write; required."),
    record_trajectories: Optional[bool] = typer.Option(
        None,
        "--record-trajectories/--no-record-trajectories",
        help="Also write one trajectory CSV per replication under <out>.trajectories/ (sequential engines).",
    ),
    check: bool = typer.Option(
        False, "--check", help="Exit 1 if a cell away from the critical alpha misses the theory tolerance."
    ),
    tolerance: Optional[float] = typer.Option(
        None, "--tolerance", help="Floor of the per-cell tolerance max(floor, 3*sd/sqrt(reps)) (default 0.01)."
    ),
    config: Optional[str] = typer.Option(
        None, "--config", help="Run config JSON; flags override it. Defaults to $NEUROCASCADE_CONFIG."
    ),
    json_: Optional[bool] = typer.Option(None, "--json/--no-json", help="Force/disable JSON output."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug output."),
) -> None:
    """Sweep the (alpha, omega) grid and write the phase-surface CSV."""
    try:
        cfg = bootstrap(
            config,
            {
                "dist": dist,
                "alpha_grid": alphas,
                "omega_grid": omegas,
                "n": n,
                "reps": reps,
                "seed": seed,
                "engine": engine,
                "threads": threads,
                "out": out,
                "record_trajectories": record_trajectories,
                "tolerance": tolerance,
            },
            verbose,
        )
        out_path = require(cfg, "out", "--out")
        plan = _plan(cfg, tuple(cfg.alpha_grid), tuple(cfg.omega_grid))
        if plan.record_trajectories and plan.engine is Engine.SYNCHRONOUS:
            raise ConfigError("--record-trajectories needs a sequential engine.")
        ensure_writable(out_path)
    except (ValueError, OutputError) as exc:
        fail(exc, json_flag=json_, code=EXIT_USAGE)

    started = time.perf_counter()
    try:
        cells = run_sweep(plan)
    except ReplicationError as exc:
        logger.exception("Sweep aborted")
        fail(exc, json_flag=json_, code=EXIT_CHECK_FAILED)
    violations = check_cells(cells, cfg.tolerance)

    try:
        write_sweep_csv(out_path, cells)
        written = _write_cell_trajectories(out_path, cells) if plan.record_trajectories else 0
    except OutputError as exc:
        fail(exc, json_flag=json_, code=EXIT_USAGE)
    logger.info("Sweep of %d cells finished in %.1fs", len(cells), time.perf_counter() - started)

    judged = [c for c in cells if c.passed is not None]
    gaps = [abs(c.phi_mean - c.phi_theory) for c in judged]
    summary = {
        "cells": len(cells),
        "out": out_path,
        "judged": len(judged),
        "critical": sum(1 for c in cells if c.critical),
        "violations": len(violations),
        "max_gap": max(gaps) if gaps else None,
        "critical_alphas": {str(omega): a for omega, a in critical_alphas(cells).items()},
        "trajectory_files": written,
    }
    emit(
        summary,
        json_flag=json_,
        human=(
            f"Wrote {len(cells)} cells to {out_path}; "
            f"{len(violations)} violation(s) among {len(judged)} judged cells"
            + (f", max |sim - theory| = {summary['max_gap']:.4f}." if gaps else ".")
        ),
    )
    if check and violations:
        raise typer.Exit(code=EXIT_CHECK_FAILED)


def _compare(
    dist: Optional[str] = typer.Option(None, "--dist", help="Distribution config JSON file."),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Seed probability alpha in [0, 1]."),
    omega: Optional[int] = typer.Option(None, "--omega", help="Firing threshold omega (>= 0)."),
    n: Optional[int] = typer.Option(None, "--n", help="Vertices per graph (default 10000)."),
    reps: Optional[int] = typer.Option(None, "--reps", help="Replications (default 10)."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed; required."),
    engine: Optional[str] = typer.Option(
        None, "--engine", help="synchronous, sequential-replay or sequential-onfly (default synchronous)."
    ),
    threads: Optional[int] = typer.Option(
        None, "--threads", help="Worker threads (default $NEUROCASCADE_THREADS or the CPU count)."
    ),
    tolerance: Optional[float] = typer.Option(
        None, "--tolerance", help="Floor of the tolerance max(floor, 3*sd/sqrt(reps)) (default 0.01)."
    ),
    check: bool = typer.Option(False, "--check", help="Exit 1 if the gap exceeds the tolerance."),
    config: Optional[str] = typer.Option(
        None, "--config", help="Run config JSON; flags override it. Defaults to $NEUROCASCADE_CONFIG."
    ),
    json_: Optional[bool] = typer.Option(None, "--json/--no-json", help="Force/disable JSON output."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug output."),
) -> None:
    """Compare predicted and simulated final fraction for one (alpha, omega) cell.

    Exits 3 when the theory has no prediction (tangential root).
    """
    try:
        cfg = bootstrap(
            config,
            {
                "dist": dist,
                "alpha": alpha,
                "omega": omega,
                "n": n,
                "reps": reps,
                "seed": seed,
                "engine": engine,
                "threads": threads,
                "tolerance": tolerance,
            },
            verbose,
        )
        params = CascadeParams(require(cfg, "omega", "--omega"), require(cfg, "alpha", "--alpha"))
        plan = _plan(cfg, (params.alpha,), (params.omega,))
    except ValueError as exc:
        fail(exc, json_flag=json_, code=EXIT_USAGE)

    try:
        cell = run_cell(plan, params.alpha, params.omega)
    except ReplicationError as exc:
        logger.exception("Comparison aborted")
        fail(exc, json_flag=json_, code=EXIT_CHECK_FAILED)
    report = compare_report(cell, cfg.tolerance)

    if report["reliable"]:
        human = (
            f"theory {report['phi_theory']:.6f} vs simulation {report['phi_mean']:.6f} "
            f"+/- {report['phi_sd']:.6f} over {report['reps']} reps: gap {report['gap']:+.6f}, "
            f"{'pass' if report['passed'] else 'FAIL'} at tolerance {report['tolerance']:.4f}"
        )
    else:
        human = f"simulation {report['phi_mean']:.6f}; theory not applicable (tangential root)"
    emit(report, json_flag=json_, human=human)

    if not report["reliable"]:
        raise typer.Exit(code=EXIT_INAPPLICABLE)
    if check and not report["passed"]:
        raise typer.Exit(code=EXIT_CHECK_FAILED)


def _concentration(
    dist: Optional[str] = typer.Option(None, "--dist", help="Distribution config JSON file."),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Seed probability alpha in [0, 1]."),
    omega: Optional[int] = typer.Option(None, "--omega", help="Firing threshold omega (>= 0)."),
    n_list: Optional[str] = typer.Option(
        None, "--n-list", help="Increasing graph sizes, comma list (default 1000,10000,100000)."
    ),
    reps: Optional[int] = typer.Option(None, "--reps", help="Replications per size (default 10)."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed; required."),
    threads: Optional[int] = typer.Option(
        None, "--threads", help="Worker threads (default $NEUROCASCADE_THREADS or the CPU count)."
    ),
    out: Optional[str] = typer.Option(None, "--out", help="Also write the report JSON here."),
    config: Optional[str] = typer.Option(
        None, "--config", help="Run config JSON; flags override it. Defaults to $NEUROCASCADE_CONFIG."
    ),
    json_: Optional[bool] = typer.Option(None, "--json/--no-json", help="Force/disable JSON output."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug output."),
) -> None:
    """Measure how far on-the-fly trajectories stray from the ODE curves as n grows."""
    try:
        cfg = bootstrap(
            config,
            {
                "dist": dist,
                "alpha": alpha,
                "omega": omega,
                "n_list": n_list,
                "reps": reps,
                "seed": seed,
                "threads": threads,
                "out": out,
            },
            verbose,
        )
        distribution = resolve_distribution(cfg)
        params = CascadeParams(require(cfg, "omega", "--omega"), require(cfg, "alpha", "--alpha"))
        master_seed = require_seed(cfg)
        workers = resolve_threads(cfg)
        if cfg.out:
            ensure_writable(cfg.out)
        report = trajectory_concentration_study(distribution, params, cfg.n_list, cfg.reps, master_seed, workers)
    except (ValueError, OutputError) as exc:
        fail(exc, json_flag=json_, code=EXIT_USAGE)
    except ReplicationError as exc:
        logger.exception("Concentration study aborted")
        fail(exc, json_flag=json_, code=EXIT_CHECK_FAILED)

    data = report.to_dict()
    try:
        if cfg.out:
            write_json(cfg.out, data)
    except OutputError as exc:
        fail(exc, json_flag=json_, code=EXIT_USAGE)
    lines = [f"n={row['n']}: median sup|F/n - f| = {row['median_F']:.5f}" for row in data["rows"]]
    emit(data, json_flag=json_, human="\n".join(lines))


def register(app: typer.Typer) -> None:
    """Attach the batch commands to the given Typer app."""
    app.command("sweep")(_sweep)
    app.command("compare")(_compare)
    app.command("concentration")(_concentration)
