"""Output helpers: JSON for machines (non-TTY / --json), text for humans, CSV for grids."""
from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path
from typing import Any, Iterable, NoReturn, Optional, Union

import numpy as np
import typer

SWEEP_COLUMNS = ("alpha", "omega", "n", "reps", "phi_mean", "phi_sd", "phi_theory", "branch")
TRAJECTORY_HEADER = ("t", "F", "F_out", "N_in", "F_in")
EDGE_HEADER = ("out_vertex", "in_vertex")


class OutputError(RuntimeError):
    """Raised when an output file cannot be written."""


def is_json_mode(json_flag: Optional[bool]) -> bool:
    """Decide JSON vs human output.

    An explicit --json / --no-json flag always wins. When unset, JSON is used
    whenever stdout is not a TTY, human text at a terminal.
    """
    if json_flag is not None:
        return json_flag
    return not sys.stdout.isatty()


def emit(data: Any, *, json_flag: Optional[bool] = None, human: Optional[str] = None) -> None:
    """Print `data` as sorted-key JSON in machine mode, or `human` text otherwise.

    Keys are sorted so reruns print byte-identical output.
    """
    if is_json_mode(json_flag):
        print(json.dumps(data, default=str, sort_keys=True))
    else:
        print(human if human is not None else json.dumps(data, indent=2, default=str, sort_keys=True))


def fail(exc: Union[BaseException, str], *, json_flag: Optional[bool], code: int) -> NoReturn:
    """Report an error through emit and leave with `code`."""
    emit({"error": str(exc)}, json_flag=json_flag, human=f"Error: {exc}")
    raise typer.Exit(code=code)


def _open_for_write(path: Union[str, Path]):
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"Cannot write {path}: {exc}") from exc


def _write_rows(path: Union[str, Path], header: Iterable[str], rows: Iterable[Iterable[Any]]) -> None:
    with _open_for_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_sweep_csv(path: Union[str, Path], cells: Iterable[Any]) -> None:
    """One row per cell; a cell without a theory value leaves phi_theory empty."""
    _write_rows(path, SWEEP_COLUMNS, ([getattr(cell, col) for col in SWEEP_COLUMNS] for cell in cells))


def write_trajectory_csv(path: Union[str, Path], trajectory: np.ndarray) -> None:
    _write_rows(path, TRAJECTORY_HEADER, trajectory.tolist())


def write_edge_list_csv(path: Union[str, Path], out_vertices: np.ndarray, in_vertices: np.ndarray) -> None:
    _write_rows(path, EDGE_HEADER, zip(out_vertices.tolist(), in_vertices.tolist()))


def write_json(path: Union[str, Path], data: Any) -> None:
    with _open_for_write(path) as handle:
        json.dump(data, handle, default=str, sort_keys=True, indent=2)
        handle.write("\n")


def ensure_writable(path: Union[str, Path]) -> None:
    """Fail before a long run if `path` cannot be created."""
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise OutputError(f"Cannot write {path}: directory {parent} is missing or read-only.")
    if Path(path).is_dir():
        raise OutputError(f"Cannot write {path}: it is a directory.")
