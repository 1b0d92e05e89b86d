"""Bootstrap percolation to its fixed point.

Two engines share one counter layout:

* `run_synchronous` applies the round rule X_i(t+1) = X_i(t) + (1 - X_i(t)) *
  1(sum_j A_ij X_j(t) >= omega) until nothing changes, vectorised over stubs.
* `run_sequential` is the edge-deletion chain: take an out-stub of a fired
  vertex, reveal its partner in-stub, delete both, and fire the partner on its
  omega-th deleted in-stub. It either replays a prebuilt matching or draws each
  partner uniformly from the in-stubs still unrevealed.

Counters follow the chain's notation: N[c, i] is the number of non-fired
vertices of degree class c = (j, k) with i revealed in-edges from fired
vertices, Fjk[c] the fired count of class c, and F, N_in, F_in, F_out, t the
totals.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .degree_model import DegreeSequence
from .graph import StubMatching

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t", "F", "F_out", "N_in", "F_in")
TRAJECTORY_POINTS = 1000


class CascadeError(ValueError):
    """Raised for invalid cascade inputs."""


class CascadeInvariantError(RuntimeError):
    """Raised by the debug check when a counter identity breaks."""

    def __init__(self, identity: str, t: int, detail: str) -> None:
        super().__init__(f"{identity} violated at t={t}: {detail}")
        self.identity = identity
        self.t = t


class Engine(str, Enum):
    SYNCHRONOUS = "synchronous"
    REPLAY = "sequential-replay"
    ONFLY = "sequential-onfly"


class PickOrder(str, Enum):
    """Which fired out-stub the sequential engine consumes next."""

    FIFO = "fifo"
    LIFO = "lifo"
    RANDOM = "random"


@dataclass(frozen=True)
class CascadeParams:
    omega: int
    alpha: float

    def __post_init__(self) -> None:
        if int(self.omega) != self.omega or self.omega < 0:
            raise CascadeError(f"omega must be a nonnegative integer (got {self.omega!r}).")
        if not (0.0 <= self.alpha <= 1.0):
            raise CascadeError(f"alpha must lie in [0, 1] (got {self.alpha!r}).")
        object.__setattr__(self, "omega", int(self.omega))
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass
class CascadeState:
    """Mutable cascade state; confined to one worker at a time.

    `received[v]` is meaningful for non-fired vertices: the number of their
    in-stubs already revealed from fired sources.
    """

    n: int
    m: int
    omega: int
    d_in: np.ndarray
    d_out: np.ndarray
    classes: np.ndarray
    cls: np.ndarray
    class_size: np.ndarray
    fired: np.ndarray
    received: np.ndarray
    N: np.ndarray
    Fjk: np.ndarray
    F: int
    N_in: int
    F_in: int
    F_out: int
    t: int = 0
    seeded: int = 0
    done: bool = False


@dataclass
class CascadeResult:
    fired_final: int
    phi: float
    T_f: int
    fired: np.ndarray
    seeded: int
    engine: Engine
    trajectory: Optional[np.ndarray] = None

    @property
    def seed_fraction(self) -> float:
        return self.seeded / self.fired.size if self.fired.size else 0.0


def seed_from_mask(seq: DegreeSequence, params: CascadeParams, fired: np.ndarray) -> CascadeState:
    """Initial state with exactly the vertices in `fired` switched on."""
    fired = np.asarray(fired, dtype=bool).copy()
    if fired.shape != (seq.n,):
        raise CascadeError(f"Seed mask must have length {seq.n}.")
    classes, cls = seq.class_table()
    class_size = np.bincount(cls, minlength=len(classes)).astype(np.int64)
    Fjk = np.bincount(cls[fired], minlength=len(classes)).astype(np.int64)
    N = np.zeros((len(classes), params.omega), dtype=np.int64)
    if params.omega > 0:
        N[:, 0] = class_size - Fjk
    n_in = int(seq.d_in[~fired].sum())
    seeded = int(fired.sum())
    return CascadeState(
        n=seq.n,
        m=seq.m,
        omega=params.omega,
        d_in=seq.d_in,
        d_out=seq.d_out,
        classes=classes,
        cls=cls,
        class_size=class_size,
        fired=fired,
        received=np.zeros(seq.n, dtype=np.int64),
        N=N,
        Fjk=Fjk,
        F=seeded,
        N_in=n_in,
        F_in=seq.m - n_in,
        F_out=int(seq.d_out[fired].sum()),
        seeded=seeded,
    )


def seed_initial(seq: DegreeSequence, params: CascadeParams, rng: np.random.Generator) -> CascadeState:
    """Fire each vertex independently with probability alpha."""
    return seed_from_mask(seq, params, rng.random(seq.n) < params.alpha)


# ------------------------------ invariants ------------------------------


def _verify(
    classes: list,
    class_size: list,
    N: list,
    Fjk: list,
    F: int,
    N_in: int,
    F_in: int,
    F_out: int,
    t: int,
    m: int,
) -> None:
    if F_in + N_in != m - t:
        raise CascadeInvariantError("F_in + N_in = m - t", t, f"{F_in} + {N_in} != {m - t}")
    n_in = 0
    f_total = 0
    out_mass = 0
    for c, (j, k) in enumerate(classes):
        row = N[c]
        for i, count in enumerate(row):
            if count < 0:
                raise CascadeInvariantError("N_i >= 0", t, f"N[{i}] of class ({j},{k}) is {count}")
            if count and i > j:
                raise CascadeInvariantError(
                    "N_i^{j,k} = 0 for i > j", t, f"N[{i}] of class ({j},{k}) is {count}"
                )
            n_in += (j - i) * count
        if sum(row) + Fjk[c] != class_size[c]:
            raise CascadeInvariantError(
                "class conservation", t, f"class ({j},{k}) holds {sum(row) + Fjk[c]} of {class_size[c]}"
            )
        f_total += Fjk[c]
        out_mass += k * Fjk[c]
    if N_in != n_in:
        raise CascadeInvariantError("N_in = sum (j - i) N_i^{j,k}", t, f"{N_in} != {n_in}")
    if F_out != out_mass - t:
        raise CascadeInvariantError("F_out = sum k F^{j,k} - t", t, f"{F_out} != {out_mass - t}")
    if F != f_total:
        raise CascadeInvariantError("F = sum F^{j,k}", t, f"{F} != {f_total}")


def check_counters(state: CascadeState) -> None:
    """Raise CascadeInvariantError if any counter identity fails."""
    _verify(
        state.classes.tolist(),
        state.class_size.tolist(),
        state.N.tolist(),
        state.Fjk.tolist(),
        state.F,
        state.N_in,
        state.F_in,
        state.F_out,
        state.t,
        state.m,
    )


def _require_fresh(state: CascadeState, params: CascadeParams) -> None:
    if state.done or state.t != 0:
        raise CascadeError("Cascade state has already been run; seed a fresh one.")
    if state.omega != params.omega:
        raise CascadeError(f"State was seeded for omega={state.omega}, not {params.omega}.")


# ------------------------------ synchronous -----------------------------


def _stubs_of(vertices: np.ndarray, offsets: np.ndarray, degrees: np.ndarray) -> np.ndarray:
    """Concatenated stub indices owned by `vertices`."""
    lens = degrees[vertices]
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    starts = offsets[vertices]
    return np.repeat(starts - (np.cumsum(lens) - lens), lens) + np.arange(total)


def run_synchronous(matching: StubMatching, state: CascadeState, params: CascadeParams) -> CascadeResult:
    """Round-by-round closure; multi-edges count with multiplicity.

    At the fixed point the counters are rebuilt as the sequential chain would
    leave them: every out-stub of a fired vertex consumed.
    """
    _require_fresh(state, params)
    if matching.n != state.n or matching.m != state.m:
        raise CascadeError("Matching does not belong to this degree sequence.")
    n, omega = state.n, params.omega
    targets = matching.targets
    fired = state.fired.copy()
    received = np.zeros(n, dtype=np.int64)
    frontier = np.flatnonzero(fired)
    rounds = 0
    while True:
        stubs = _stubs_of(frontier, matching.out_offsets, state.d_out)
        hit = np.empty(0, dtype=np.int64)
        if stubs.size:
            hit, counts = np.unique(targets[stubs], return_counts=True)
            received[hit] += counts
        # only vertices hit this round can newly cross omega >= 1
        candidates = np.flatnonzero(~fired) if omega == 0 else hit
        new = candidates[~fired[candidates] & (received[candidates] >= omega)]
        if not new.size:
            break
        fired[new] = True
        frontier = new
        rounds += 1
        logger.debug("round %d: %d newly fired", rounds, frontier.size)

    _rebuild_counters(state, fired, received)
    return CascadeResult(
        fired_final=state.F,
        phi=phi_of(state.F, n),
        T_f=rounds,
        fired=fired,
        seeded=state.seeded,
        engine=Engine.SYNCHRONOUS,
    )


def _rebuild_counters(state: CascadeState, fired: np.ndarray, received: np.ndarray) -> None:
    idle = ~fired
    N = np.zeros_like(state.N)
    if state.omega > 0:
        np.add.at(N, (state.cls[idle], received[idle]), 1)
    state.fired = fired
    state.received = received
    state.N = N
    state.Fjk = np.bincount(state.cls[fired], minlength=len(state.classes)).astype(np.int64)
    state.F = int(fired.sum())
    state.t = int(state.d_out[fired].sum())
    state.N_in = int((state.d_in[idle] - received[idle]).sum())
    state.F_in = state.m - state.t - state.N_in
    state.F_out = 0
    state.done = True


# ------------------------------ sequential ------------------------------


def run_sequential(
    matching: Optional[StubMatching],
    state: CascadeState,
    params: CascadeParams,
    rng: Optional[np.random.Generator] = None,
    *,
    debug_check: bool = False,
    order: PickOrder = PickOrder.FIFO,
    record_trajectory: bool = False,
    record_every: Optional[int] = None,
) -> CascadeResult:
    """Run the edge-deletion chain until no fired out-stub is left.

    With `matching=None` the partner of each consumed out-stub is drawn
    uniformly from the in-stubs not yet revealed (on-the-fly mode); `rng` is
    then required. `debug_check` verifies every counter identity after each
    step.
    """
    _require_fresh(state, params)
    order = PickOrder(order)
    onfly = matching is None
    if (onfly or order is PickOrder.RANDOM) and rng is None:
        raise CascadeError("This mode of the sequential engine needs a random stream.")
    n, m, omega = state.n, state.m, params.omega

    d_in = state.d_in.tolist()
    d_out = state.d_out.tolist()
    cls = state.cls.tolist()
    fired = state.fired.tolist()
    received = state.received.tolist()
    N = state.N.tolist()
    Fjk = state.Fjk.tolist()
    F, N_in, F_in, F_out, t = state.F, state.N_in, state.F_in, state.F_out, 0

    if onfly:
        owner_in = np.repeat(np.arange(n, dtype=np.int64), state.d_in)
        # the t-th revealed in-stub is uniform over those still unrevealed
        partner = owner_in[rng.permutation(m)].tolist()
        out_offsets = np.concatenate(([0], np.cumsum(state.d_out))).tolist()
    else:
        if matching.n != n or matching.m != m:
            raise CascadeError("Matching does not belong to this degree sequence.")
        targets = matching.targets.tolist()
        out_offsets = matching.out_offsets.tolist()

    if omega == 0:
        # the threshold is met before any edge is revealed
        for v in range(n):
            if not fired[v]:
                fired[v] = True
                F += 1
                Fjk[cls[v]] += 1
                N_in -= d_in[v]
                F_in += d_in[v]
                F_out += d_out[v]

    classes = state.classes.tolist() if debug_check else None
    class_size = state.class_size.tolist() if debug_check else None
    if debug_check:
        _verify(classes, class_size, N, Fjk, F, N_in, F_in, F_out, t, m)

    every = record_every or max(1, math.ceil(m / TRAJECTORY_POINTS))
    samples: list[tuple[int, int, int, int, int]] = []
    if record_trajectory:
        samples.append((t, F, F_out, N_in, F_in))

    stubs: list[int] = []
    for v in range(n):
        if fired[v]:
            stubs.extend(range(out_offsets[v], out_offsets[v + 1]))
    pool = deque(stubs) if order is PickOrder.FIFO else stubs
    take = pool.popleft if order is PickOrder.FIFO else pool.pop
    uniforms = iter(())

    while pool:
        if order is PickOrder.RANDOM:
            u = next(uniforms, None)
            if u is None:
                uniforms = iter(rng.random(4096).tolist())
                u = next(uniforms)
            idx = int(u * len(pool))
            pool[idx], pool[-1] = pool[-1], pool[idx]
        s = take()
        b = partner[t] if onfly else targets[s]
        t += 1
        F_out -= 1
        if fired[b]:
            F_in -= 1
        else:
            i = received[b]
            received[b] = i + 1
            N_in -= 1
            row = N[cls[b]]
            row[i] -= 1
            if i + 1 < omega:
                row[i + 1] += 1
            else:
                fired[b] = True
                F += 1
                Fjk[cls[b]] += 1
                rest = d_in[b] - omega
                N_in -= rest
                F_in += rest
                F_out += d_out[b]
                pool.extend(range(out_offsets[b], out_offsets[b + 1]))
        if debug_check:
            _verify(classes, class_size, N, Fjk, F, N_in, F_in, F_out, t, m)
        if record_trajectory and t % every == 0:
            samples.append((t, F, F_out, N_in, F_in))

    if record_trajectory and samples[-1][0] != t:
        samples.append((t, F, F_out, N_in, F_in))

    state.fired = np.array(fired, dtype=bool)
    state.received = np.array(received, dtype=np.int64)
    state.N = np.array(N, dtype=np.int64).reshape(state.N.shape)
    state.Fjk = np.array(Fjk, dtype=np.int64)
    state.F, state.N_in, state.F_in, state.F_out, state.t = F, N_in, F_in, F_out, t
    state.done = True
    logger.debug("sequential run stopped at T_f=%d with F=%d of n=%d", t, F, n)

    return CascadeResult(
        fired_final=F,
        phi=phi_of(F, n),
        T_f=t,
        fired=state.fired,
        seeded=state.seeded,
        engine=Engine.ONFLY if onfly else Engine.REPLAY,
        trajectory=np.array(samples, dtype=np.int64) if record_trajectory else None,
    )


def phi_of(fired: int, n: int) -> float:
    return fired / n if n > 0 else 0.0


def phi_hat(result: CascadeResult, n: int) -> float:
    """Empirical final fraction F(T_f) / n."""
    return phi_of(result.fired_final, n)
