"""Run bootstrap: env, config file, flag precedence, worker count."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

from dotenv import load_dotenv

from .cascade import Engine
from .degree_model import DegreeModelError, JointDegreeDistribution, load_distribution, load_distribution_file

logger = logging.getLogger(__name__)

ENV_THREADS = "NEUROCASCADE_THREADS"
ENV_CONFIG = "NEUROCASCADE_CONFIG"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_INAPPLICABLE = 3

DEFAULT_ALPHA_GRID = "0:0.3:0.01"
DEFAULT_OMEGA_GRID = "1:40"
# decimals kept when expanding start:stop:step grids
_GRID_DECIMALS = 12


class ConfigError(ValueError):
    """Raised when a run config or flag value is invalid."""


@dataclass
class RunConfig:
    """Everything a command needs, after defaults, file and flags are merged."""

    dist: Union[dict, str, None] = None
    alpha: Optional[float] = None
    omega: Optional[int] = None
    alpha_grid: list[float] = field(default_factory=lambda: parse_grid(DEFAULT_ALPHA_GRID))
    omega_grid: list[int] = field(default_factory=lambda: parse_grid(DEFAULT_OMEGA_GRID, integer=True))
    n: int = 10_000
    reps: int = 10
    seed: Optional[int] = None
    engine: str = Engine.SYNCHRONOUS.value
    threads: Optional[int] = None
    grid_step: float = 1e-3
    root_tol: float = 1e-9
    tangency_tol: float = 1e-6
    n_list: list[int] = field(default_factory=lambda: [1_000, 10_000, 100_000])
    out: Optional[str] = None
    trajectory_csv: Optional[str] = None
    edges_csv: Optional[str] = None
    record_trajectories: bool = False
    tolerance: float = 0.01
    verbose: bool = False

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_KEYS = {f.name for f in fields(RunConfig)}


def start_command(verbose: bool) -> None:
    """Logging and .env setup shared by every command."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    load_dotenv()


def bootstrap(path: Optional[str], overrides: dict[str, Any], verbose: bool) -> RunConfig:
    """start_command, then load the merged run config for a command."""
    start_command(verbose)
    config = load_run_config(path, {**overrides, "verbose": verbose or None})
    if config.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    return config


def parse_grid(text: Union[str, list, tuple], *, integer: bool = False) -> list:
    """Expand "start:stop[:step]" (inclusive) or "a,b,c" into a list."""
    cast = int if integer else float
    if isinstance(text, (list, tuple)):
        try:
            return [cast(v) for v in text]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"Bad grid values {text!r}.") from exc
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(1.0)
            if len(parts) != 3:
                raise ValueError("expected start:stop[:step]")
            start, stop, step = parts
            if step <= 0 or stop < start:
                raise ValueError("need step > 0 and stop >= start")
            count = int(round((stop - start) / step))
            values = [round(start + i * step, _GRID_DECIMALS) for i in range(count + 1)]
        else:
            values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"Bad grid {text!r}: {exc}") from exc
    if not values:
        raise ConfigError(f"Grid {text!r} is empty.")
    if integer:
        if any(v != int(v) for v in values):
            raise ConfigError(f"Grid {text!r} must hold integers.")
        return [int(v) for v in values]
    return values


def _read_config_file(path: Union[str, Path]) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Invalid JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must be a JSON object.")
    if "type" in data:
        # a bare distribution config
        return {"dist": data}
    unknown = set(data) - _KEYS
    if unknown:
        raise ConfigError(f"Unknown config keys in {path}: {', '.join(sorted(unknown))}.")
    dist = data.get("dist")
    if isinstance(dist, str) and not os.path.isabs(dist):
        data["dist"] = str(Path(path).parent / dist)
    return data


def load_run_config(path: Optional[str] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Merge defaults, then the config file, then non-None flag values."""
    path = path or os.getenv(ENV_CONFIG) or None
    merged: dict[str, Any] = {}
    if path:
        logger.debug("Loading run config from %s", path)
        merged.update(_read_config_file(path))
    for key, value in (overrides or {}).items():
        if key not in _KEYS:
            raise ConfigError(f"Unknown config key {key!r}.")
        if value is not None:
            merged[key] = value

    if "alpha_grid" in merged:
        merged["alpha_grid"] = parse_grid(merged["alpha_grid"])
    if "omega_grid" in merged:
        merged["omega_grid"] = parse_grid(merged["omega_grid"], integer=True)
    if "n_list" in merged:
        merged["n_list"] = parse_grid(merged["n_list"], integer=True)
    try:
        config = RunConfig(**merged)
        Engine(config.engine)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid run config: {exc}") from exc
    _coerce(config)
    _check_ranges(config)
    return config


_INT_KEYS = ("omega", "n", "reps", "seed", "threads")
_FLOAT_KEYS = ("alpha", "grid_step", "root_tol", "tangency_tol", "tolerance")


def _coerce(config: RunConfig) -> None:
    for key in _INT_KEYS + _FLOAT_KEYS:
        value = getattr(config, key)
        if value is None:
            continue
        try:
            cast = float(value)
            if key in _INT_KEYS:
                if cast != int(cast):
                    raise ValueError("not an integer")
                setattr(config, key, int(cast))
            else:
                setattr(config, key, cast)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"Config key {key!r} has a bad value {value!r}: {exc}") from exc


def _check_ranges(config: RunConfig) -> None:
    if config.n < 1 or config.reps < 1:
        raise ConfigError("n and reps must be >= 1.")
    if config.seed is not None and config.seed < 0:
        raise ConfigError("seed must be >= 0.")
    if config.threads is not None and config.threads < 1:
        raise ConfigError("threads must be >= 1.")
    if config.tolerance <= 0:
        raise ConfigError("tolerance must be > 0.")


def require(config: RunConfig, key: str, flag: str) -> Any:
    value = getattr(config, key)
    if value is None:
        raise ConfigError(f"Missing {flag} (flag or config key {key!r}).")
    return value


def require_seed(config: RunConfig) -> int:
    """Randomized commands never fall back to a clock seed."""
    return int(require(config, "seed", "--seed"))


def resolve_distribution(config: RunConfig) -> JointDegreeDistribution:
    dist = require(config, "dist", "--dist")
    try:
        if isinstance(dist, dict):
            return load_distribution(dist)
        return load_distribution_file(dist)
    except DegreeModelError as exc:
        raise ConfigError(str(exc)) from exc


def resolve_threads(config: RunConfig) -> int:
    """--threads, then config, then $NEUROCASCADE_THREADS, then the CPU count."""
    if config.threads is not None:
        return config.threads
    env = os.getenv(ENV_THREADS)
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"{ENV_THREADS} must be an integer (got {env!r}).") from exc
        if value < 1:
            raise ConfigError(f"{ENV_THREADS} must be >= 1.")
        return value
    return os.cpu_count() or 1
