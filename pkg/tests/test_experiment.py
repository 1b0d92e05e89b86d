"""Tests for replications, sweeps, cell checking and the concentration study."""
import numpy as np
import pytest

import neurocascade.experiment as experiment
from neurocascade.cascade import CascadeParams, Engine
from neurocascade.degree_model import (
    make_gaussian_in_degree,
    make_point_mass_law,
    make_poisson_law,
    make_product_distribution,
)
from neurocascade.experiment import (
    CellResult,
    ExperimentPlan,
    PlanError,
    ReplicationError,
    check_cells,
    compare_report,
    critical_alphas,
    replication_stream,
    run_cell,
    run_sweep,
    simulate_once,
    tolerance_for,
    trajectory_concentration_study,
)
from neurocascade.theory import find_y_star, locate_jump, scan_alpha


def _regular3():
    law = make_point_mass_law(3)
    return make_product_distribution(law, law)


def _poisson5():
    law = make_poisson_law(5, 40)
    return make_product_distribution(law, law)


def _plan(**overrides):
    fields = dict(
        dist=_poisson5(),
        alpha_grid=(0.1, 0.2),
        omega_grid=(2, 3),
        n=300,
        reps=4,
        master_seed=7,
    )
    fields.update(overrides)
    return ExperimentPlan(**fields)


def _cell(alpha, omega, mean, theory, sd=0.0, reps=10):
    return CellResult(
        alpha=alpha,
        omega=omega,
        n=1000,
        reps=reps,
        phi_mean=mean,
        phi_sd=sd,
        phi_min=mean,
        phi_max=mean,
        phi_theory=theory,
        branch="regular-crossing" if theory is not None else "tangential",
        seed_min=alpha,
    )


def test_plan_validation():
    with pytest.raises(PlanError):
        _plan(alpha_grid=())
    with pytest.raises(PlanError):
        _plan(reps=0)
    with pytest.raises(PlanError):
        _plan(alpha_grid=(1.5,))
    with pytest.raises(PlanError):
        _plan(omega_grid=(-1,))
    with pytest.raises(PlanError):
        _plan(threads=0)


def test_cells_are_omega_major():
    assert _plan().cells() == [(0.1, 2), (0.2, 2), (0.1, 3), (0.2, 3)]


def test_replication_streams_are_keyed_by_coordinates():
    a = replication_stream(1, 0.1, 2, 0).random(4)
    b = replication_stream(1, 0.1, 2, 0).random(4)
    c = replication_stream(1, 0.1, 2, 1).random(4)
    d = replication_stream(1, 0.2, 2, 0).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_simulate_once_onfly_has_no_matching():
    run = simulate_once(_regular3(), 50, CascadeParams(2, 0.2), np.random.default_rng(0), Engine.ONFLY)
    assert run.matching is None
    assert run.seq.n == 50
    assert run.result.engine is Engine.ONFLY


def test_everyone_seeded_cell():
    cell = run_cell(_plan(reps=3), 1.0, 3)
    assert cell.phi_mean == 1.0
    assert cell.phi_sd == 0.0
    assert cell.phi_theory == 1.0
    assert cell.branch == "full-activation"
    assert cell.seed_min == 1.0


def test_no_seed_cell():
    cell = run_cell(_plan(reps=3), 0.0, 2)
    assert cell.phi_mean == 0.0
    assert cell.phi_theory == 0.0


def test_single_cell_sweep_equals_run_cell():
    plan = _plan(alpha_grid=(0.2,), omega_grid=(2,))
    assert run_sweep(plan)[0].to_dict() == run_cell(_plan(), 0.2, 2).to_dict()


def test_sweep_is_independent_of_thread_count():
    single = [c.to_dict() for c in run_sweep(_plan(threads=1))]
    pooled = [c.to_dict() for c in run_sweep(_plan(threads=4))]
    assert single == pooled


def test_sweep_is_independent_of_cell_order():
    forward = {(c.alpha, c.omega): c.to_dict() for c in run_sweep(_plan())}
    backward = {
        (c.alpha, c.omega): c.to_dict()
        for c in run_sweep(_plan(alpha_grid=(0.2, 0.1), omega_grid=(3, 2)))
    }
    assert forward == backward


def test_sd_uses_sample_variance():
    plan = _plan(alpha_grid=(0.2,), omega_grid=(2,), reps=5, n=200)
    phis = []
    for rep in range(5):
        rng = replication_stream(plan.master_seed, 0.2, 2, rep)
        phis.append(simulate_once(plan.dist, plan.n, CascadeParams(2, 0.2), rng).result.phi)
    cell = run_sweep(plan)[0]
    assert cell.phi_mean == pytest.approx(np.mean(phis))
    assert cell.phi_sd == pytest.approx(np.std(phis, ddof=1))
    assert cell.phi_min == min(phis)


def test_recorded_trajectories_follow_sequential_engine():
    plan = _plan(alpha_grid=(0.2,), omega_grid=(2,), reps=2, engine=Engine.REPLAY, record_trajectories=True)
    cell = run_sweep(plan)[0]
    assert len(cell.trajectories) == 2
    assert "trajectories" not in cell.to_dict()
    sync = run_sweep(_plan(alpha_grid=(0.2,), omega_grid=(2,), reps=2, record_trajectories=True))[0]
    assert sync.trajectories == []


def test_failed_replication_names_its_cell(monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(experiment, "simulate_once", boom)
    with pytest.raises(ReplicationError) as info:
        run_sweep(_plan(alpha_grid=(0.2,), omega_grid=(3,), reps=1))
    assert (info.value.alpha, info.value.omega, info.value.rep) == (0.2, 3, 0)
    assert "disk on fire" in str(info.value)


def test_tolerance_floor():
    assert tolerance_for(0.0, 10) == 0.01
    assert tolerance_for(0.05, 25) == pytest.approx(0.03)
    assert tolerance_for(0.0, 10, floor=0.05) == 0.05


def _jump_column():
    alphas = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    theory = [0.1, 0.12, 0.15, 0.95, 1.0, 1.0]
    means = [0.1, 0.2, 0.5, 0.6, 1.0, 1.0]
    return [_cell(a, 5, m, t) for a, m, t in zip(alphas, means, theory)]


def test_critical_alpha_detection():
    cells = _jump_column() + [_cell(0.1, 6, 0.1, 0.1), _cell(0.2, 6, 0.2, 0.2)]
    found = critical_alphas(cells)
    assert found[5] == 0.4
    assert found[6] is None


def test_check_cells_skips_the_jump_neighbourhood():
    cells = _jump_column() + [_cell(0.3, 7, 0.3, None)]
    violations = check_cells(cells)
    assert [(c.alpha, c.omega) for c in violations] == [(0.2, 5)]
    by_alpha = {c.alpha: c for c in cells if c.omega == 5}
    assert [by_alpha[a].critical for a in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)] == [
        False,
        False,
        True,
        True,
        True,
        False,
    ]
    assert by_alpha[0.1].passed is True
    assert by_alpha[0.4].passed is None
    assert cells[-1].passed is None


def test_compare_report():
    report = compare_report(_cell(0.2, 2, 0.5, 0.49, sd=0.02, reps=16))
    assert report["gap"] == pytest.approx(0.01)
    assert report["z_score"] == pytest.approx(2.0)
    assert report["tolerance"] == pytest.approx(0.015)
    assert report["passed"] is True
    assert report["reliable"] is True

    exact = compare_report(_cell(0.2, 2, 0.5, 0.5))
    assert exact["z_score"] == 0.0

    unreliable = compare_report(_cell(0.2, 2, 0.5, None))
    assert unreliable["reliable"] is False
    assert unreliable["passed"] is None


def test_concentration_when_everyone_is_seeded():
    report = trajectory_concentration_study(_regular3(), CascadeParams(2, 1.0), [50, 100], reps=3, master_seed=1)
    assert [row.n for row in report.rows] == [50, 100]
    for row in report.rows:
        assert row.median_F < 1e-9
        assert row.q90_F < 1e-9
    data = report.to_dict()
    assert data["alpha"] == 1.0
    assert len(data["rows"]) == 2


def test_concentration_rejects_bad_sizes():
    with pytest.raises(PlanError):
        trajectory_concentration_study(_regular3(), CascadeParams(2, 0.1), [100, 50], reps=2, master_seed=1)
    with pytest.raises(PlanError):
        trajectory_concentration_study(_regular3(), CascadeParams(2, 0.1), [], reps=2, master_seed=1)


@pytest.mark.slow
def test_poisson_cell_tracks_theory():
    plan = ExperimentPlan(
        dist=_poisson5(), alpha_grid=(0.2,), omega_grid=(2,), n=100_000, reps=20, master_seed=2024, threads=4
    )
    cell = run_sweep(plan)[0]
    fine = find_y_star(plan.dist, CascadeParams(2, 0.2), grid_step=1e-6)
    assert cell.branch == "regular-crossing"
    assert fine.phi_pred == pytest.approx(cell.phi_theory, abs=1e-6)
    assert abs(cell.phi_mean - cell.phi_theory) < 0.01


@pytest.mark.slow
def test_concentration_medians_shrink():
    report = trajectory_concentration_study(
        _regular3(), CascadeParams(2, 0.3), [1_000, 10_000, 100_000], reps=10, master_seed=3, threads=4
    )
    assert report.medians_decreasing
    assert report.rows[-1].median_F < 0.02


@pytest.mark.slow
def test_gaussian_phase_surface():
    law = make_gaussian_in_degree(50, 15, support_max=140)
    dist = make_product_distribution(law, law)
    alphas = tuple(np.round(np.arange(0.0, 0.301, 0.01), 2))
    plan = ExperimentPlan(
        dist=dist,
        alpha_grid=alphas,
        omega_grid=(5, 20, 35),
        n=10_000,
        reps=10,
        master_seed=11,
        threads=4,
    )
    cells = run_sweep(plan)
    theory = {(c.alpha, c.omega): c.phi_theory for c in cells}
    for (alpha, omega), phi in theory.items():
        if phi is None:
            continue
        if omega != 35 and theory.get((alpha, omega + 15)) is not None:
            assert theory[(alpha, omega + 15)] <= phi + 1e-9
    for omega in plan.omega_grid:
        column = [theory[(a, omega)] for a in alphas if theory[(a, omega)] is not None]
        assert all(b >= a - 1e-9 for a, b in zip(column, column[1:]))

    found = {omega: a for omega, a in critical_alphas(cells).items() if a is not None}
    assert found
    fine = np.round(np.arange(0.0, 0.3005, 0.001), 3)
    for omega, alpha_c in found.items():
        fine_c, fine_jump = locate_jump(fine, [o.phi_pred for o in scan_alpha(dist, omega, fine)])
        assert fine_jump > 0.4
        assert abs(alpha_c - fine_c) <= 0.01 + 1e-9
    assert check_cells(cells) == []
