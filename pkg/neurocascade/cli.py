"""CLI entrypoint for neurocascade."""

from __future__ import annotations

import logging
from typing import Optional

import typer

from .cascade import CascadeInvariantError, CascadeParams, Engine, PickOrder
from .experiment import replication_stream, simulate_once
from .graph import count_self_loops, edge_list
from .output import OutputError, emit, ensure_writable, fail, write_edge_list_csv, write_trajectory_csv
from .runtime import (
    EXIT_CHECK_FAILED,
    EXIT_INAPPLICABLE,
    EXIT_USAGE,
    ConfigError,
    bootstrap,
    require,
    require_seed,
    resolve_distribution,
)
from .theory import TheoryOutcome, find_y_star
from . import verbs

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, help="Bootstrap percolation on directed configuration-model graphs.")


def _describe(outcome: TheoryOutcome) -> str:
    phi = "n/a (tangential root)" if outcome.phi_pred is None else f"{outcome.phi_pred:.6f}"
    return (
        f"alpha={outcome.alpha} omega={outcome.omega}: y* = {outcome.y_star:.9f}, "
        f"phi = {phi} [{outcome.branch.value}]"
    )


@app.command()
def theory(
    dist: Optional[str] = typer.Option(None, "--dist", help="Distribution config JSON file."),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Seed probability alpha in [0, 1]."),
    omega: Optional[int] = typer.Option(None, "--omega", help="Firing threshold omega (>= 0)."),
    grid_step: Optional[float] = typer.Option(
        None, "--grid-step", help="Step of the downward scan for y* (default 1e-3)."
    ),
    root_tol: Optional[float] = typer.Option(None, "--root-tol", help="Bisection width for y* (default 1e-9)."),
    tangency_tol: Optional[float] = typer.Option(
        None, "--tangency-tol", help="|f| below this counts as touching zero (default 1e-6)."
    ),
    config: Optional[str] = typer.Option(
        None, "--config", help="Run config JSON; flags override it. Defaults to $NEUROCASCADE_CONFIG."
    ),
    json_: Optional[bool] = typer.Option(None, "--json/--no-json", help="Force/disable JSON output."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug output."),
) -> None:
    """Predict the final fired fraction from the largest root y* of f_alpha.

    Exits 3 when y* looks tangential and no prediction is made.
    """
    try:
        cfg = bootstrap(
            config,
            {
                "dist": dist,
                "alpha": alpha,
                "omega": omega,
                "grid_step": grid_step,
                "root_tol": root_tol,
                "tangency_tol": tangency_tol,
            },
            verbose,
        )
        distribution = resolve_distribution(cfg)
        params = CascadeParams(require(cfg, "omega", "--omega"), require(cfg, "alpha", "--alpha"))
        outcome = find_y_star(distribution, params, cfg.grid_step, cfg.root_tol, cfg.tangency_tol)
    except ValueError as exc:
        fail(exc, json_flag=json_, code=EXIT_USAGE)

    emit(outcome.to_dict(), json_flag=json_, human=_describe(outcome))
    if not outcome.applicable:
        raise typer.Exit(code=EXIT_INAPPLICABLE)


@app.command()
def simulate(
    dist: Optional[str] = typer.Option(None, "--dist", help="Distribution config JSON file."),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Seed probability alpha in [0, 1]."),
    omega: Optional[int] = typer.Option(None, "--omega", help="Firing threshold omega (>= 0)."),
    n: Optional[int] = typer.Option(None, "--n", help="Number of vertices (default 10000)."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed; required."),
    engine: Optional[str] = typer.Option(
        None, "--engine", help="synchronous, sequential-replay or sequential-onfly (default synchronous)."
    ),
    order: str = typer.Option(
        PickOrder.FIFO.value, "--order", help="Fired out-stub pick for sequential engines: fifo, lifo or random."
    ),
    debug_check: bool = typer.Option(
        False, "--debug-check", help="Verify every counter identity after each sequential step."
    ),
    trajectory_csv: Optional[str] = typer.Option(
        None, "--trajectory-csv", help="Write the t,F,F_out,N_in,F_in trajectory here (sequential engines)."
    ),
    edges_csv: Optional[str] = typer.Option(
        None, "--edges-csv", help="Dump the matching as an out_vertex,in_vertex edge list."
    ),
    config: Optional[str] = typer.Option(
        None, "--config", help="Run config JSON; flags override it. Defaults to $NEUROCASCADE_CONFIG."
    ),
    json_: Optional[bool] = typer.Option(None, "--json/--no-json", help="Force/disable JSON output."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug output."),
) -> None:
    """Run one cascade on a fresh configuration-model graph."""
    try:
        cfg = bootstrap(
            config,
            {
                "dist": dist,
                "alpha": alpha,
                "omega": omega,
                "n": n,
                "seed": seed,
                "engine": engine,
                "trajectory_csv": trajectory_csv,
                "edges_csv": edges_csv,
            },
            verbose,
        )
        distribution = resolve_distribution(cfg)
        params = CascadeParams(require(cfg, "omega", "--omega"), require(cfg, "alpha", "--alpha"))
        master_seed = require_seed(cfg)
        engine_kind = Engine(cfg.engine)
        pick = PickOrder(order)
        if cfg.trajectory_csv and engine_kind is Engine.SYNCHRONOUS:
            raise ConfigError("--trajectory-csv needs a sequential engine.")
        if cfg.edges_csv and engine_kind is Engine.ONFLY:
            raise ConfigError("--edges-csv needs a prebuilt matching; the on-the-fly engine has none.")
        for path in (cfg.trajectory_csv, cfg.edges_csv):
            if path:
                ensure_writable(path)
    except (ValueError, OutputError) as exc:
        fail(exc, json_flag=json_, code=EXIT_USAGE)

    rng = replication_stream(master_seed, params.alpha, params.omega, 0)
    try:
        run = simulate_once(
            distribution,
            cfg.n,
            params,
            rng,
            engine_kind,
            record_trajectory=bool(cfg.trajectory_csv),
            debug_check=debug_check,
            order=pick,
        )
    except CascadeInvariantError as exc:
        logger.exception("Counter check failed")
        fail(exc, json_flag=json_, code=EXIT_CHECK_FAILED)

    try:
        if cfg.edges_csv:
            write_edge_list_csv(cfg.edges_csv, *edge_list(run.matching))
        if cfg.trajectory_csv:
            write_trajectory_csv(cfg.trajectory_csv, run.result.trajectory)
    except OutputError as exc:
        fail(exc, json_flag=json_, code=EXIT_USAGE)

    result = run.result
    emit(
        {
            "alpha": params.alpha,
            "omega": params.omega,
            "n": run.seq.n,
            "m": run.seq.m,
            "seed": master_seed,
            "engine": engine_kind.value,
            "fired_final": result.fired_final,
            "seeded": result.seeded,
            "phi": result.phi,
            "T_f": result.T_f,
            "self_loops": None if run.matching is None else count_self_loops(run.matching),
        },
        json_flag=json_,
        human=(
            f"phi = {result.phi:.6f} ({result.fired_final}/{run.seq.n} fired, "
            f"{result.seeded} seeded, T_f = {result.T_f}, {engine_kind.value})"
        ),
    )


verbs.register(app)


if __name__ == "__main__":
    app()
