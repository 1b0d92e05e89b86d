"""Fluid-limit prediction for the final fired fraction.

f_alpha(y) = lam*y - (1 - alpha) * E[D_out * 1(Bin(D_in, 1 - y) < omega)] is
scanned from y = 1 downward for its largest root y*, and the closed-form
solution of the counter ODEs gives the whole trajectory up to that point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import gammaln, logsumexp
from scipy.stats import binom

from .cascade import CascadeParams
from .degree_model import JointDegreeDistribution

logger = logging.getLogger(__name__)

GRID_STEP = 1e-3
ROOT_TOL = 1e-9
TANGENCY_TOL = 1e-6
# below y* by this many grid steps f must be clearly negative
TANGENCY_PROBE_STEPS = 10

# past this degree (or when q**j underflows) the tail is summed in log space
LOG_SPACE_DEGREE = 2000
_UNDERFLOW_LOG = -700.0
_SCAN_CHUNK = 2048


class TheoryError(ValueError):
    """Raised for inputs outside the domain of the fluid limit."""


class TheoryInapplicableError(RuntimeError):
    """Raised when y* looks tangential and no prediction is made."""

    def __init__(self, outcome: "TheoryOutcome") -> None:
        super().__init__(
            f"Root y*={outcome.y_star:.6g} is tangential at alpha={outcome.alpha}, "
            f"omega={outcome.omega}; the limit theorem does not apply."
        )
        self.outcome = outcome


class Branch(str, Enum):
    FULL = "full-activation"
    REGULAR = "regular-crossing"
    TANGENTIAL = "tangential"


@dataclass(frozen=True)
class TheoryOutcome:
    alpha: float
    omega: int
    y_star: float
    phi_pred: Optional[float]
    branch: Branch
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def applicable(self) -> bool:
        return self.branch is not Branch.TANGENTIAL

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "omega": self.omega,
            "y_star": self.y_star,
            "phi": self.phi_pred,
            "branch": self.branch.value,
            "diagnostics": dict(self.diagnostics),
        }


@dataclass(frozen=True, eq=False)
class TrajectoryPoint:
    """Closed-form ODE state at rescaled time tau.

    Rows of `n_table` and entries of `f_table` follow the support order of
    the distribution; columns of `n_table` are i = 0..omega-1.
    """

    tau: float
    y: float
    n_table: np.ndarray
    f_table: np.ndarray
    f_out: float
    f_total_vertices: float
    f_total_outmass: float


# ------------------------------ binomial tail ---------------------------


def _tail_below_grid(js: Any, ps: Any, omega: int) -> np.ndarray:
    """P(Bin(j, p) < omega) broadcast over arrays of j and p."""
    jj, pp = np.broadcast_arrays(np.asarray(js, dtype=float), np.asarray(ps, dtype=float))
    if omega <= 0:
        return np.zeros(jj.shape)
    out = np.ones(jj.shape)
    need = (jj >= omega) & (pp > 0)
    out[need & (pp >= 1)] = 0.0
    need &= pp < 1
    if not need.any():
        return out

    jn = jj[need]
    pn = pp[need]
    log_q = np.log1p(-pn)
    direct = (jn <= LOG_SPACE_DEGREE) & (jn * log_q > _UNDERFLOW_LOG)
    values = np.empty(jn.shape)

    if direct.any():
        j_d = jn[direct]
        ratio = pn[direct] / (1.0 - pn[direct])
        term = np.exp(j_d * log_q[direct])
        total = term.copy()
        for i in range(omega - 1):
            term = term * (j_d - i) / (i + 1) * ratio
            total += term
        values[direct] = total

    if not direct.all():
        j_l = jn[~direct][:, None]
        i = np.arange(omega, dtype=float)[None, :]
        log_terms = (
            gammaln(j_l + 1.0)
            - gammaln(i + 1.0)
            - gammaln(j_l - i + 1.0)
            + i * np.log(pn[~direct])[:, None]
            + (j_l - i) * log_q[~direct][:, None]
        )
        values[~direct] = np.exp(logsumexp(log_terms, axis=1))

    out[need] = values
    return np.clip(out, 0.0, 1.0)


def binom_tail_below(j: int, p: float, omega: int) -> float:
    """P(Bin(j, p) < omega) by the term recurrence C(j,i+1)/C(j,i)."""
    if not (0.0 <= p <= 1.0):
        raise TheoryError(f"p must lie in [0, 1] (got {p!r}).")
    if j < 0 or omega < 0:
        raise TheoryError("j and omega must be >= 0.")
    return float(_tail_below_grid(j, p, int(omega)))


# ------------------------------ f_alpha and y* --------------------------


def _f_values(ys: np.ndarray, dist: JointDegreeDistribution, alpha: float, omega: int) -> np.ndarray:
    tails = _tail_below_grid(dist.j_values[None, :], (1.0 - ys)[:, None], omega)
    return dist.lam * ys - (1.0 - alpha) * (tails @ dist.out_weight_by_j)


def f_alpha(y: float, dist: JointDegreeDistribution, params: CascadeParams) -> float:
    if not (0.0 <= y <= 1.0):
        raise TheoryError(f"y must lie in [0, 1] (got {y!r}).")
    return float(_f_values(np.array([float(y)]), dist, params.alpha, params.omega)[0])


def _phi_at(y: float, dist: JointDegreeDistribution, alpha: float, omega: int) -> float:
    """1 - (1-alpha) E[1(Bin(D_in, 1-y) < omega)], written so y = 1 gives alpha exactly."""
    tails = _tail_below_grid(dist.j_values, 1.0 - y, omega)
    reached = float(np.dot(dist.mass_by_j, 1.0 - tails))
    return min(1.0, max(0.0, alpha + (1.0 - alpha) * reached))


def _scan_grid(grid_step: float) -> np.ndarray:
    steps = int(math.ceil(1.0 / grid_step - 1e-9))
    return np.clip(1.0 - grid_step * np.arange(steps + 1), 0.0, 1.0)


def _bisect(f, lo: float, hi: float, root_tol: float) -> tuple[float, float]:
    """Shrink [lo, hi] with f(lo) < 0 <= f(hi) to width root_tol."""
    while hi - lo > root_tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if f(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return lo, hi


def find_y_star(
    dist: JointDegreeDistribution,
    params: CascadeParams,
    grid_step: float = GRID_STEP,
    root_tol: float = ROOT_TOL,
    tangency_tol: float = TANGENCY_TOL,
) -> TheoryOutcome:
    """Largest root of f_alpha on [0, 1] and the branch it falls on."""
    if not (0.0 < grid_step <= 0.1):
        raise TheoryError(f"grid_step must lie in (0, 0.1] (got {grid_step!r}).")
    if root_tol <= 0 or tangency_tol <= 0:
        raise TheoryError("root_tol and tangency_tol must be > 0.")
    alpha, omega = params.alpha, params.omega

    def f(y: float) -> float:
        return float(_f_values(np.array([y]), dist, alpha, omega)[0])

    def outcome(y_star: float, branch: Branch, **diagnostics: Any) -> TheoryOutcome:
        formula = _phi_at(y_star, dist, alpha, omega)
        diagnostics["phi_formula"] = formula
        if branch is Branch.FULL:
            phi: Optional[float] = 1.0
        elif branch is Branch.REGULAR:
            phi = formula
        else:
            phi = None
            logger.warning(
                "Tangential root near y=%.6g (alpha=%s, omega=%d); no prediction.", y_star, alpha, omega
            )
        return TheoryOutcome(alpha, omega, float(y_star), phi, branch, diagnostics)

    if alpha == 0.0 and omega >= 1:
        # f_0(1) = 0 exactly; nothing fires beyond the (empty) seed set
        return outcome(1.0, Branch.REGULAR, f_at_root=0.0, f_below=f(max(0.0, 1.0 - grid_step)), bracket_width=0.0)

    ys = _scan_grid(grid_step)
    prev_y: Optional[float] = None
    grid_min, grid_min_y = math.inf, 1.0
    for start in range(0, ys.size, _SCAN_CHUNK):
        chunk = ys[start : start + _SCAN_CHUNK]
        values = _f_values(chunk, dist, alpha, omega)
        negative = np.flatnonzero(values < 0)
        if negative.size:
            idx = int(negative[0])
            if idx == 0 and prev_y is None:
                # f(1) = lam*alpha > 0 unless the balance is off by rounding
                return outcome(1.0, Branch.REGULAR, f_at_root=float(values[0]), bracket_width=0.0)
            hi = float(chunk[idx - 1]) if idx > 0 else prev_y
            lo = float(chunk[idx])
            lo, hi = _bisect(f, lo, hi, root_tol)
            y_star = hi
            probe = max(y_star - TANGENCY_PROBE_STEPS * grid_step, 0.5 * y_star)
            f_probe = f(probe)
            branch = Branch.REGULAR if f_probe < -tangency_tol else Branch.TANGENTIAL
            return outcome(
                y_star,
                branch,
                f_at_root=f(y_star),
                f_above=f(min(1.0, y_star + TANGENCY_PROBE_STEPS * root_tol)),
                f_below=f_probe,
                bracket_low=lo,
                bracket_width=hi - lo,
            )
        positive_y = chunk > 0
        if positive_y.any():
            k = int(np.argmin(np.where(positive_y, values, math.inf)))
            if values[k] < grid_min:
                grid_min, grid_min_y = float(values[k]), float(chunk[k])
        prev_y = float(chunk[-1])

    if grid_min > tangency_tol:
        return outcome(0.0, Branch.FULL, grid_min=grid_min, grid_min_y=grid_min_y)
    return outcome(grid_min_y, Branch.TANGENTIAL, grid_min=grid_min, grid_min_y=grid_min_y)


def predicted_phi(dist: JointDegreeDistribution, params: CascadeParams, **scan: Any) -> float:
    result = find_y_star(dist, params, **scan)
    if result.phi_pred is None:
        raise TheoryInapplicableError(result)
    return result.phi_pred


def scan_alpha(
    dist: JointDegreeDistribution, omega: int, alphas: Sequence[float], **scan: Any
) -> list[TheoryOutcome]:
    return [find_y_star(dist, CascadeParams(omega, a), **scan) for a in alphas]


def locate_jump(
    alphas: Sequence[float], phis: Sequence[Optional[float]]
) -> tuple[Optional[float], float]:
    """Largest increase of phi between neighbouring grid alphas.

    Returns (alpha just after the jump, jump size). Cells without a
    prediction are skipped.
    """
    points = [(a, p) for a, p in zip(alphas, phis) if p is not None]
    best_alpha, best_jump = None, 0.0
    for (_, left), (a_right, right) in zip(points, points[1:]):
        if right - left > best_jump:
            best_alpha, best_jump = a_right, right - left
    return best_alpha, best_jump


# ------------------------------ ODE trajectory --------------------------


def _y_of(tau: float, dist: JointDegreeDistribution) -> float:
    if not (0.0 <= tau < dist.lam):
        raise TheoryError(f"tau must lie in [0, {dist.lam}) (got {tau!r}).")
    return 1.0 - tau / dist.lam


def _point(
    tau: float, y: float, n_table: np.ndarray, f_table: np.ndarray, dist: JointDegreeDistribution
) -> TrajectoryPoint:
    outmass = float(np.dot(dist.k, f_table))
    return TrajectoryPoint(
        tau=tau,
        y=y,
        n_table=n_table,
        f_table=f_table,
        f_out=outmass - tau,
        f_total_vertices=float(f_table.sum()),
        f_total_outmass=outmass,
    )


def ode_trajectory(tau: float, dist: JointDegreeDistribution, params: CascadeParams) -> TrajectoryPoint:
    """Evaluate the closed-form ODE solution at tau, with y = 1 - tau/lam.

    n_i(tau) = P(j,k)(1-alpha) C(j,i) y^(j-i) (1-y)^i and
    f(tau) = P(j,k)[alpha + (1-alpha) P(Bin(j, 1-y) >= omega)].
    """
    y = _y_of(float(tau), dist)
    alpha, omega = params.alpha, params.omega
    i = np.arange(omega)
    n_table = (1.0 - alpha) * dist.p[:, None] * binom.pmf(i[None, :], dist.j[:, None], 1.0 - y)
    reached = 1.0 - _tail_below_grid(dist.j, 1.0 - y, omega)
    f_table = dist.p * (alpha + (1.0 - alpha) * reached)
    return _point(float(tau), y, n_table.reshape(dist.size, omega), f_table, dist)


def trajectory_curves(
    dist: JointDegreeDistribution, params: CascadeParams, taus: Any
) -> tuple[np.ndarray, np.ndarray]:
    """(f(tau), f_out(tau)) over an array of tau; y is clamped to [0, 1]."""
    taus = np.asarray(taus, dtype=float)
    ys = np.clip(1.0 - taus / dist.lam, 0.0, 1.0)
    tails = _tail_below_grid(dist.j_values[None, :], (1.0 - ys)[:, None], params.omega)
    fired_share = params.alpha + (1.0 - params.alpha) * (1.0 - tails)
    return fired_share @ dist.mass_by_j, fired_share @ dist.out_weight_by_j - taus


def de_rhs(tau: float, z: np.ndarray, dist: JointDegreeDistribution, params: CascadeParams) -> np.ndarray:
    """Right-hand side of the counter ODEs; z = [n_table.ravel(), f_table]."""
    omega = params.omega
    s = dist.size
    n = z[: s * omega].reshape(s, omega)
    j = dist.j[:, None].astype(float)
    i = np.arange(omega, dtype=float)[None, :]
    rate = 1.0 / (dist.lam - tau)
    outflow = (j - i) * n
    dn = -outflow
    dn[:, 1:] += outflow[:, :-1]
    df = outflow[:, -1]
    return np.concatenate((dn.ravel(), df)) * rate


def integrate_de(
    dist: JointDegreeDistribution, params: CascadeParams, taus: Sequence[float]
) -> list[TrajectoryPoint]:
    """Integrate the counter ODEs numerically from the seeded initial state."""
    if params.omega < 1:
        raise TheoryError("The ODE system needs omega >= 1.")
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0 or np.any(np.diff(taus) < 0):
        raise TheoryError("taus must be a non-empty nondecreasing sequence.")
    for tau in (taus[0], taus[-1]):
        _y_of(float(tau), dist)

    s, omega = dist.size, params.omega
    n0 = np.zeros((s, omega))
    n0[:, 0] = (1.0 - params.alpha) * dist.p
    z0 = np.concatenate((n0.ravel(), params.alpha * dist.p))
    if taus[-1] == 0.0:
        states = z0[:, None].repeat(taus.size, axis=1)
    else:
        sol = solve_ivp(
            de_rhs,
            (0.0, float(taus[-1])),
            z0,
            t_eval=taus,
            args=(dist, params),
            rtol=1e-10,
            atol=1e-12,
        )
        if not sol.success:
            raise TheoryError(f"ODE integration failed: {sol.message}")
        states = sol.y

    points = []
    for col, tau in enumerate(taus):
        z = states[:, col]
        points.append(
            _point(float(tau), 1.0 - tau / dist.lam, z[: s * omega].reshape(s, omega), z[s * omega :].copy(), dist)
        )
    return points
