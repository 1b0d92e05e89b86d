"""Tests for the theory and simulate commands and command help."""
import csv
import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

from neurocascade.cli import app
from neurocascade.theory import Branch, TheoryOutcome

runner = CliRunner()

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
REGULAR3 = str(CONFIGS / "regular3.json")
POISSON5 = str(CONFIGS / "poisson5.json")


@pytest.fixture(autouse=True)
def _no_ambient_config(monkeypatch):
    monkeypatch.delenv("NEUROCASCADE_CONFIG", raising=False)
    monkeypatch.delenv("NEUROCASCADE_THREADS", raising=False)


def _json(result):
    return json.loads(result.stdout)


def test_theory_everyone_seeded():
    result = runner.invoke(app, ["theory", "--dist", REGULAR3, "--alpha", "1", "--omega", "2", "--json"])
    assert result.exit_code == 0
    data = _json(result)
    assert data["phi"] == 1.0
    assert data["branch"] == "full-activation"


def test_theory_regular_crossing():
    result = runner.invoke(app, ["theory", "--dist", REGULAR3, "--alpha", "0.1", "--omega", "3", "--json"])
    assert result.exit_code == 0
    data = _json(result)
    assert data["branch"] == "regular-crossing"
    assert data["y_star"] == pytest.approx(0.899074787, abs=1e-8)


def test_theory_human_output():
    result = runner.invoke(app, ["theory", "--dist", REGULAR3, "--alpha", "1", "--omega", "2", "--no-json"])
    assert result.exit_code == 0
    assert "full-activation" in result.stdout


def test_theory_missing_alpha_is_usage_error():
    result = runner.invoke(app, ["theory", "--dist", REGULAR3, "--omega", "2", "--json"])
    assert result.exit_code == 2
    assert "--alpha" in _json(result)["error"]


def test_theory_rejects_bad_distribution(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"type": "lognormal"}))
    result = runner.invoke(app, ["theory", "--dist", str(bad), "--alpha", "0.1", "--omega", "2", "--json"])
    assert result.exit_code == 2


def test_theory_out_of_range_alpha():
    result = runner.invoke(app, ["theory", "--dist", REGULAR3, "--alpha", "1.5", "--omega", "2", "--json"])
    assert result.exit_code == 2


def test_theory_tangential_exits_3(monkeypatch):
    outcome = TheoryOutcome(0.2, 4, 0.4, None, Branch.TANGENTIAL, {"phi_formula": 0.6})
    monkeypatch.setattr("neurocascade.cli.find_y_star", lambda *a, **k: outcome)
    result = runner.invoke(app, ["theory", "--dist", REGULAR3, "--alpha", "0.2", "--omega", "4", "--json"])
    assert result.exit_code == 3
    data = _json(result)
    assert data["phi"] is None
    assert data["branch"] == "tangential"


def test_theory_reads_run_config(tmp_path):
    (tmp_path / "regular3.json").write_text(json.dumps({"type": "regular", "degree": 3}))
    run = tmp_path / "run.json"
    run.write_text(json.dumps({"dist": "regular3.json", "alpha": 1.0, "omega": 2}))
    result = runner.invoke(app, ["theory", "--config", str(run), "--json"])
    assert result.exit_code == 0
    assert _json(result)["phi"] == 1.0
    flagged = runner.invoke(app, ["theory", "--config", str(run), "--alpha", "0.1", "--omega", "3", "--json"])
    assert _json(flagged)["branch"] == "regular-crossing"


SIM = ["simulate", "--dist", POISSON5, "--alpha", "0.2", "--omega", "2", "--n", "300", "--seed", "5", "--json"]


def test_simulate_is_deterministic():
    first = runner.invoke(app, SIM)
    second = runner.invoke(app, SIM)
    assert first.exit_code == 0
    assert first.stdout == second.stdout
    data = _json(first)
    assert data["n"] == 300
    assert 0.0 <= data["phi"] <= 1.0
    assert data["fired_final"] >= data["seeded"]


def test_simulate_engines_share_the_graph():
    sync = _json(runner.invoke(app, SIM))
    replay = _json(runner.invoke(app, SIM + ["--engine", "sequential-replay", "--debug-check"]))
    assert replay["fired_final"] == sync["fired_final"]
    assert replay["m"] == sync["m"]


def test_simulate_zero_threshold_fires_everyone():
    result = runner.invoke(
        app, ["simulate", "--dist", REGULAR3, "--alpha", "0", "--omega", "0", "--n", "100", "--seed", "1", "--json"]
    )
    assert result.exit_code == 0
    assert _json(result)["phi"] == 1.0


def test_simulate_requires_seed():
    result = runner.invoke(app, ["simulate", "--dist", REGULAR3, "--alpha", "0.1", "--omega", "2", "--json"])
    assert result.exit_code == 2
    assert "--seed" in _json(result)["error"]


def test_simulate_rejects_unknown_engine():
    result = runner.invoke(app, SIM + ["--engine", "parallel"])
    assert result.exit_code == 2


def test_simulate_trajectory_needs_sequential_engine(tmp_path):
    result = runner.invoke(app, SIM + ["--trajectory-csv", str(tmp_path / "t.csv")])
    assert result.exit_code == 2
    assert not (tmp_path / "t.csv").exists()


def test_simulate_writes_trajectory_and_edges(tmp_path):
    traj, edges = tmp_path / "t.csv", tmp_path / "e.csv"
    result = runner.invoke(
        app,
        SIM + ["--engine", "sequential-replay", "--trajectory-csv", str(traj), "--edges-csv", str(edges)],
    )
    assert result.exit_code == 0
    rows = list(csv.reader(traj.open()))
    assert rows[0] == ["t", "F", "F_out", "N_in", "F_in"]
    assert int(rows[-1][0]) == _json(result)["T_f"]
    edge_rows = list(csv.reader(edges.open()))
    assert edge_rows[0] == ["out_vertex", "in_vertex"]
    assert len(edge_rows) - 1 == _json(result)["m"]


def test_simulate_onfly_has_no_edge_list(tmp_path):
    result = runner.invoke(app, SIM + ["--engine", "sequential-onfly", "--edges-csv", str(tmp_path / "e.csv")])
    assert result.exit_code == 2


@pytest.mark.parametrize(
    "command, flags",
    [
        ("theory", ["--dist", "--alpha", "--omega", "--grid-step", "--root-tol", "--tangency-tol", "--config"]),
        ("simulate", ["--n", "--seed", "--engine", "--order", "--debug-check", "--trajectory-csv", "--edges-csv"]),
        ("sweep", ["--alphas", "--omegas", "--reps", "--threads", "--out", "--check", "--tolerance"]),
        ("compare", ["--alpha", "--omega", "--reps", "--check"]),
        ("concentration", ["--n-list", "--reps", "--out"]),
    ],
)
def test_help_lists_flags(command, flags):
    result = runner.invoke(app, [command, "--help"], env={"COLUMNS": "200", "TERMINAL_WIDTH": "200"})
    assert result.exit_code == 0
    for flag in flags:
        assert flag in result.stdout
