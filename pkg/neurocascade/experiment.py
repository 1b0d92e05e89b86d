"""Monte Carlo replications, (alpha, omega) sweeps and the concentration study.

Every replication gets its own random stream keyed by the cell coordinates
and the replication index, so results do not depend on cell order or on the
number of worker threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .cascade import (
    CascadeParams,
    CascadeResult,
    Engine,
    PickOrder,
    run_sequential,
    run_synchronous,
    seed_initial,
)
from .degree_model import DegreeSequence, JointDegreeDistribution, sample_degree_sequence
from .graph import StubMatching, build_matching
from .theory import (
    GRID_STEP,
    ROOT_TOL,
    TANGENCY_TOL,
    TheoryOutcome,
    find_y_star,
    locate_jump,
    trajectory_curves,
)

logger = logging.getLogger(__name__)

MIN_TOLERANCE = 0.01
# a theory jump larger than this marks the critical alpha of an omega column
JUMP_THRESHOLD = 0.5
ALPHA_KEY_SCALE = 10**9


class PlanError(ValueError):
    """Raised when an experiment plan is malformed."""


class ReplicationError(RuntimeError):
    """Raised when one replication of a cell fails."""

    def __init__(self, alpha: float, omega: int, rep: int, cause: BaseException) -> None:
        super().__init__(f"Replication {rep} of cell (alpha={alpha}, omega={omega}) failed: {cause}")
        self.alpha = alpha
        self.omega = omega
        self.rep = rep


@dataclass(frozen=True)
class ExperimentPlan:
    dist: JointDegreeDistribution
    alpha_grid: tuple[float, ...]
    omega_grid: tuple[int, ...]
    n: int
    reps: int
    master_seed: int
    engine: Engine = Engine.SYNCHRONOUS
    record_trajectories: bool = False
    threads: int = 1
    grid_step: float = GRID_STEP
    root_tol: float = ROOT_TOL
    tangency_tol: float = TANGENCY_TOL

    def __post_init__(self) -> None:
        if not self.alpha_grid or not self.omega_grid:
            raise PlanError("alpha and omega grids must be non-empty.")
        if self.reps < 1:
            raise PlanError("reps must be >= 1.")
        if self.n < 1:
            raise PlanError("n must be >= 1.")
        if self.master_seed < 0:
            raise PlanError("seed must be >= 0.")
        if self.threads < 1:
            raise PlanError("threads must be >= 1.")
        for alpha in self.alpha_grid:
            if not 0.0 <= alpha <= 1.0:
                raise PlanError(f"alpha {alpha!r} outside [0, 1].")
        for omega in self.omega_grid:
            if int(omega) != omega or omega < 0:
                raise PlanError(f"omega {omega!r} must be a nonnegative integer.")
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        object.__setattr__(self, "omega_grid", tuple(int(w) for w in self.omega_grid))
        object.__setattr__(self, "engine", Engine(self.engine))

    def cells(self) -> list[tuple[float, int]]:
        """(alpha, omega) pairs, omega-major."""
        return [(alpha, omega) for omega in self.omega_grid for alpha in self.alpha_grid]

    def theory_options(self) -> dict[str, float]:
        return {"grid_step": self.grid_step, "root_tol": self.root_tol, "tangency_tol": self.tangency_tol}


@dataclass
class CellResult:
    alpha: float
    omega: int
    n: int
    reps: int
    phi_mean: float
    phi_sd: float
    phi_min: float
    phi_max: float
    phi_theory: Optional[float]
    branch: str
    seed_min: float
    tolerance: float = MIN_TOLERANCE
    critical: bool = False
    passed: Optional[bool] = None
    trajectories: list[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data.pop("trajectories")
        return data


@dataclass(frozen=True)
class SimulationRun:
    seq: DegreeSequence
    matching: Optional[StubMatching]
    result: CascadeResult


def replication_stream(
    master_seed: int, alpha: float, omega: int, rep: int, *extra: int
) -> np.random.Generator:
    """Independent generator for one replication, keyed by its coordinates."""
    key = [int(master_seed), int(omega), int(round(alpha * ALPHA_KEY_SCALE)), int(rep), *map(int, extra)]
    return np.random.default_rng(np.random.SeedSequence(key))


def simulate_once(
    dist: JointDegreeDistribution,
    n: int,
    params: CascadeParams,
    rng: np.random.Generator,
    engine: Engine = Engine.SYNCHRONOUS,
    *,
    record_trajectory: bool = False,
    debug_check: bool = False,
    order: PickOrder = PickOrder.FIFO,
) -> SimulationRun:
    """Degree sequence, matching, seeding and cascade from one stream."""
    engine = Engine(engine)
    seq = sample_degree_sequence(dist, n, rng)
    matching = None if engine is Engine.ONFLY else build_matching(seq, rng)
    state = seed_initial(seq, params, rng)
    if engine is Engine.SYNCHRONOUS:
        result = run_synchronous(matching, state, params)
    else:
        result = run_sequential(
            matching,
            state,
            params,
            rng,
            debug_check=debug_check,
            order=order,
            record_trajectory=record_trajectory,
        )
    return SimulationRun(seq, matching, result)


def _map_ordered(fn: Callable[..., Any], items: Sequence[tuple], threads: int) -> list[Any]:
    """fn(*item) for every item, results in item order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(*item) for item in items]
    results: list[Any] = [None] * len(items)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(fn, *item): idx for idx, item in enumerate(items)}
        for fut in as_completed(futures):
            results[futures[fut]] = fut.result()
    return results


def _replicate(
    plan: ExperimentPlan, alpha: float, omega: int, rep: int
) -> tuple[float, float, Optional[np.ndarray]]:
    """(phi, seeded fraction, trajectory) of one replication."""
    rng = replication_stream(plan.master_seed, alpha, omega, rep)
    try:
        run = simulate_once(
            plan.dist,
            plan.n,
            CascadeParams(omega, alpha),
            rng,
            plan.engine,
            record_trajectory=plan.record_trajectories and plan.engine is not Engine.SYNCHRONOUS,
        )
    except Exception as exc:
        raise ReplicationError(alpha, omega, rep, exc) from exc
    result = run.result
    logger.debug("cell (%s, %d) rep %d: phi=%.6f", alpha, omega, rep, result.phi)
    return result.phi, result.seed_fraction, result.trajectory


def _theory(plan: ExperimentPlan, alpha: float, omega: int) -> TheoryOutcome:
    return find_y_star(plan.dist, CascadeParams(omega, alpha), **plan.theory_options())


def _aggregate(
    plan: ExperimentPlan, alpha: float, omega: int, results: list[tuple], theory: TheoryOutcome
) -> CellResult:
    phis = np.array([phi for phi, _, _ in results])
    sd = float(phis.std(ddof=1)) if phis.size > 1 else 0.0
    return CellResult(
        alpha=alpha,
        omega=omega,
        n=plan.n,
        reps=plan.reps,
        phi_mean=float(phis.mean()),
        phi_sd=sd,
        phi_min=float(phis.min()),
        phi_max=float(phis.max()),
        phi_theory=theory.phi_pred,
        branch=theory.branch.value,
        seed_min=min(seeded for _, seeded, _ in results),
        tolerance=tolerance_for(sd, plan.reps),
        trajectories=[t for _, _, t in results if t is not None],
    )


def run_sweep(plan: ExperimentPlan) -> list[CellResult]:
    """Every (alpha, omega) cell of the plan, in `plan.cells()` order."""
    cells = plan.cells()
    tasks = [(plan, alpha, omega, rep) for alpha, omega in cells for rep in range(plan.reps)]
    logger.debug("sweep: %d cells x %d reps on %d threads", len(cells), plan.reps, plan.threads)
    outcomes = _map_ordered(_theory, [(plan, a, w) for a, w in cells], plan.threads)
    runs = _map_ordered(_replicate, tasks, plan.threads)
    return [
        _aggregate(plan, alpha, omega, runs[i * plan.reps : (i + 1) * plan.reps], outcomes[i])
        for i, (alpha, omega) in enumerate(cells)
    ]


def run_cell(plan: ExperimentPlan, alpha: float, omega: int) -> CellResult:
    """One cell of the plan; identical to the same cell of a sweep."""
    single = ExperimentPlan(**{**_plan_fields(plan), "alpha_grid": (alpha,), "omega_grid": (omega,)})
    return run_sweep(single)[0]


def _plan_fields(plan: ExperimentPlan) -> dict[str, Any]:
    return {name: getattr(plan, name) for name in plan.__dataclass_fields__}


# ------------------------------ checking --------------------------------


def tolerance_for(phi_sd: float, reps: int, floor: float = MIN_TOLERANCE) -> float:
    return max(floor, 3.0 * phi_sd / math.sqrt(reps))


def critical_alphas(cells: Sequence[CellResult]) -> dict[int, Optional[float]]:
    """Per omega, the alpha just past a theory jump > JUMP_THRESHOLD, if any."""
    columns: dict[int, list[CellResult]] = {}
    for cell in cells:
        columns.setdefault(cell.omega, []).append(cell)
    found: dict[int, Optional[float]] = {}
    for omega, column in columns.items():
        column = sorted(column, key=lambda c: c.alpha)
        alpha_c, jump = locate_jump([c.alpha for c in column], [c.phi_theory for c in column])
        found[omega] = alpha_c if jump > JUMP_THRESHOLD else None
    return found


def _grid_step(alphas: Sequence[float]) -> float:
    values = sorted(set(alphas))
    if len(values) < 2:
        return 0.0
    return float(min(b - a for a, b in zip(values, values[1:])))


def check_cells(cells: Sequence[CellResult], floor: float = MIN_TOLERANCE) -> list[CellResult]:
    """Annotate cells with tolerance and pass flag; return the violations.

    Cells within one alpha grid step of the critical alpha, and cells
    without a theory value, are not judged.
    """
    step = _grid_step([c.alpha for c in cells])
    alpha_c = critical_alphas(cells)
    violations = []
    for cell in cells:
        cell.tolerance = tolerance_for(cell.phi_sd, cell.reps, floor)
        critical_at = alpha_c.get(cell.omega)
        cell.critical = critical_at is not None and abs(cell.alpha - critical_at) <= step * (1 + 1e-9)
        if cell.critical or cell.phi_theory is None:
            cell.passed = None
            continue
        cell.passed = abs(cell.phi_mean - cell.phi_theory) <= cell.tolerance
        if not cell.passed:
            violations.append(cell)
    return violations


def compare_report(cell: CellResult, floor: float = MIN_TOLERANCE) -> dict[str, Any]:
    """Gap between simulation and theory for a single cell."""
    report: dict[str, Any] = {
        "alpha": cell.alpha,
        "omega": cell.omega,
        "n": cell.n,
        "reps": cell.reps,
        "branch": cell.branch,
        "phi_theory": cell.phi_theory,
        "phi_mean": cell.phi_mean,
        "phi_sd": cell.phi_sd,
        "phi_min": cell.phi_min,
        "phi_max": cell.phi_max,
        "tolerance": tolerance_for(cell.phi_sd, cell.reps, floor),
        "reliable": cell.phi_theory is not None,
    }
    if cell.phi_theory is None:
        report.update(gap=None, z_score=None, passed=None)
        return report
    gap = cell.phi_mean - cell.phi_theory
    stderr = cell.phi_sd / math.sqrt(cell.reps)
    if stderr > 0:
        z = gap / stderr
    else:
        z = 0.0 if gap == 0 else math.copysign(math.inf, gap)
    report.update(gap=gap, z_score=z, passed=abs(gap) <= report["tolerance"])
    return report


# ------------------------------ concentration ---------------------------


@dataclass(frozen=True)
class ConcentrationRow:
    n: int
    reps: int
    median_F: float
    q10_F: float
    q90_F: float
    median_F_out: float
    q10_F_out: float
    q90_F_out: float


@dataclass(frozen=True)
class ConcentrationReport:
    alpha: float
    omega: int
    rows: tuple[ConcentrationRow, ...]

    @property
    def medians_decreasing(self) -> bool:
        medians = [row.median_F for row in self.rows]
        return all(b < a for a, b in zip(medians, medians[1:]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "omega": self.omega,
            "medians_decreasing": self.medians_decreasing,
            "rows": [asdict(row) for row in self.rows],
        }


def trajectory_deviation(
    trajectory: np.ndarray, n: int, dist: JointDegreeDistribution, params: CascadeParams
) -> tuple[float, float]:
    """sup_t |F(t)/n - f(t/n)| and sup_t |F_out(t)/n - f_out(t/n)| over recorded t."""
    taus = trajectory[:, 0] / n
    f, f_out = trajectory_curves(dist, params, taus)
    dev_f = float(np.max(np.abs(trajectory[:, 1] / n - f)))
    dev_out = float(np.max(np.abs(trajectory[:, 2] / n - f_out)))
    return dev_f, dev_out


def _concentration_run(
    dist: JointDegreeDistribution, params: CascadeParams, n: int, rep: int, master_seed: int
) -> tuple[float, float]:
    rng = replication_stream(master_seed, params.alpha, params.omega, rep, n)
    try:
        run = simulate_once(dist, n, params, rng, Engine.ONFLY, record_trajectory=True)
    except Exception as exc:
        raise ReplicationError(params.alpha, params.omega, rep, exc) from exc
    return trajectory_deviation(run.result.trajectory, n, dist, params)


def trajectory_concentration_study(
    dist: JointDegreeDistribution,
    params: CascadeParams,
    n_list: Sequence[int],
    reps: int,
    master_seed: int,
    threads: int = 1,
) -> ConcentrationReport:
    """Sup-deviation of on-the-fly trajectories from the ODE curves, per n."""
    n_list = [int(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
        raise PlanError("n_list must be a non-empty strictly increasing list of sizes >= 1.")
    if reps < 1:
        raise PlanError("reps must be >= 1.")
    tasks = [(dist, params, n, rep, master_seed) for n in n_list for rep in range(reps)]
    deviations = _map_ordered(_concentration_run, tasks, threads)
    rows = []
    for i, n in enumerate(n_list):
        block = np.array(deviations[i * reps : (i + 1) * reps])
        q_f = np.quantile(block[:, 0], [0.1, 0.5, 0.9])
        q_out = np.quantile(block[:, 1], [0.1, 0.5, 0.9])
        rows.append(
            ConcentrationRow(
                n=n,
                reps=reps,
                median_F=float(q_f[1]),
                q10_F=float(q_f[0]),
                q90_F=float(q_f[2]),
                median_F_out=float(q_out[1]),
                q10_F_out=float(q_out[0]),
                q90_F_out=float(q_out[2]),
            )
        )
        logger.debug("concentration n=%d: median sup|F/n - f| = %.5f", n, rows[-1].median_F)
    return ConcentrationReport(params.alpha, params.omega, tuple(rows))
