"""Tests for run-config loading, grid parsing and worker resolution."""
import json

import pytest

import neurocascade.runtime as rt


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv(rt.ENV_CONFIG, raising=False)
    monkeypatch.delenv(rt.ENV_THREADS, raising=False)


def test_parse_grid_range_is_inclusive():
    assert rt.parse_grid("0:0.3:0.1") == [0.0, 0.1, 0.2, 0.3]
    assert rt.parse_grid("1:4", integer=True) == [1, 2, 3, 4]


def test_parse_grid_default_alpha_grid_has_31_points():
    grid = rt.parse_grid(rt.DEFAULT_ALPHA_GRID)
    assert len(grid) == 31
    assert grid[7] == 0.07


def test_parse_grid_lists():
    assert rt.parse_grid("0.1, 0.25") == [0.1, 0.25]
    assert rt.parse_grid([1, 2], integer=True) == [1, 2]


@pytest.mark.parametrize("text", ["", "a,b", "0.3:0.1", "0:1:0", "1:2:3:4"])
def test_parse_grid_rejects(text):
    with pytest.raises(rt.ConfigError):
        rt.parse_grid(text)


def test_parse_grid_integer_rejects_fractions():
    with pytest.raises(rt.ConfigError):
        rt.parse_grid("1,2.5", integer=True)


def test_defaults_without_file():
    cfg = rt.load_run_config()
    assert cfg.n == 10_000
    assert cfg.reps == 10
    assert cfg.seed is None
    assert cfg.engine == "synchronous"
    assert cfg.omega_grid == list(range(1, 41))


def test_flags_override_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"n": 500, "reps": 3, "seed": 9}))
    cfg = rt.load_run_config(str(path), {"n": 800, "reps": None})
    assert cfg.n == 800
    assert cfg.reps == 3
    assert cfg.seed == 9


def test_env_names_the_config_file(tmp_path, monkeypatch):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"alpha": 0.25}))
    monkeypatch.setenv(rt.ENV_CONFIG, str(path))
    assert rt.load_run_config().alpha == 0.25


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"alpha": 0.1, "colour": "red"}))
    with pytest.raises(rt.ConfigError, match="colour"):
        rt.load_run_config(str(path))


def test_bad_json_is_a_config_error(tmp_path):
    path = tmp_path / "run.json"
    path.write_text("{nope")
    with pytest.raises(rt.ConfigError):
        rt.load_run_config(str(path))
    with pytest.raises(rt.ConfigError):
        rt.load_run_config(str(tmp_path / "missing.json"))


def test_bare_distribution_file_becomes_dist(tmp_path):
    path = tmp_path / "dist.json"
    path.write_text(json.dumps({"type": "regular", "degree": 3}))
    cfg = rt.load_run_config(str(path))
    assert cfg.dist == {"type": "regular", "degree": 3}
    assert rt.resolve_distribution(cfg).lam == 3.0


def test_relative_dist_resolves_next_to_config(tmp_path):
    (tmp_path / "regular3.json").write_text(json.dumps({"type": "regular", "degree": 3}))
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"dist": "regular3.json"}))
    cfg = rt.load_run_config(str(path))
    assert rt.resolve_distribution(cfg).lam == 3.0


def test_value_coercion_and_ranges():
    cfg = rt.load_run_config(None, {"n": "250", "alpha": "0.5"})
    assert cfg.n == 250
    assert cfg.alpha == 0.5
    with pytest.raises(rt.ConfigError):
        rt.load_run_config(None, {"n": 2.5})
    with pytest.raises(rt.ConfigError):
        rt.load_run_config(None, {"reps": 0})
    with pytest.raises(rt.ConfigError):
        rt.load_run_config(None, {"seed": -1})
    with pytest.raises(rt.ConfigError):
        rt.load_run_config(None, {"engine": "parallel"})


def test_require_seed_has_no_clock_fallback():
    with pytest.raises(rt.ConfigError, match="--seed"):
        rt.require_seed(rt.load_run_config())
    assert rt.require_seed(rt.load_run_config(None, {"seed": 0})) == 0


def test_resolve_distribution_wraps_model_errors():
    cfg = rt.load_run_config(None, {"dist": {"type": "lognormal"}})
    with pytest.raises(rt.ConfigError):
        rt.resolve_distribution(cfg)
    with pytest.raises(rt.ConfigError, match="--dist"):
        rt.resolve_distribution(rt.load_run_config())


def test_threads_precedence(monkeypatch):
    monkeypatch.setenv(rt.ENV_THREADS, "3")
    assert rt.resolve_threads(rt.load_run_config()) == 3
    assert rt.resolve_threads(rt.load_run_config(None, {"threads": 2})) == 2
    monkeypatch.delenv(rt.ENV_THREADS)
    monkeypatch.setattr(rt.os, "cpu_count", lambda: None)
    assert rt.resolve_threads(rt.load_run_config()) == 1


@pytest.mark.parametrize("value", ["many", "0"])
def test_threads_env_must_be_positive_integer(monkeypatch, value):
    monkeypatch.setenv(rt.ENV_THREADS, value)
    with pytest.raises(rt.ConfigError):
        rt.resolve_threads(rt.load_run_config())
