"""Joint in/out-degree laws P(j,k) and degree-sequence sampling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import numpy as np
from scipy.stats import poisson

logger = logging.getLogger(__name__)

MASS_TOL = 1e-12
BALANCE_TOL = 1e-9
# Hand-written tables are accepted this far from unit mass, then renormalized.
TABLE_MASS_TOL = 1e-9


class DegreeModelError(ValueError):
    """Raised when a degree law or sequence is malformed."""


class BalanceViolationError(DegreeModelError):
    """Raised when mean in-degree and mean out-degree differ."""


class DistributionConfigError(DegreeModelError):
    """Raised when a distribution config does not match the schema."""


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class DiscreteLaw:
    """One-dimensional law with masses on {0, ..., support_max}."""

    masses: np.ndarray

    def __post_init__(self) -> None:
        masses = np.asarray(self.masses, dtype=float).copy()
        if masses.ndim != 1 or masses.size == 0:
            raise DegreeModelError("A discrete law needs a non-empty 1-D mass vector.")
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise DegreeModelError("Masses must be finite and nonnegative.")
        total = float(masses.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise DegreeModelError(f"Masses must sum to 1 (got {total!r}).")
        object.__setattr__(self, "masses", _frozen(masses))

    @property
    def support_max(self) -> int:
        return int(self.masses.size - 1)

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.masses.size), self.masses))

    def pmf(self, k: int) -> float:
        if 0 <= k < self.masses.size:
            return float(self.masses[k])
        return 0.0


def _normalized_law(weights: np.ndarray) -> DiscreteLaw:
    total = float(weights.sum())
    if not math.isfinite(total) or total <= 0:
        raise DegreeModelError("Law has no mass on its support.")
    return DiscreteLaw(weights / total)


def make_gaussian_in_degree(
    mean: float, sd: float, support_max: Optional[int] = None
) -> DiscreteLaw:
    """Discretized Gaussian on {0, ..., support_max}, renormalized.

    The default support is ceil(mean + 6*sd), which loses < 1e-8 of the mass.
    """
    if not (math.isfinite(mean) and math.isfinite(sd)):
        raise DegreeModelError("Gaussian parameters must be finite.")
    if sd <= 0:
        raise DegreeModelError("Gaussian sd must be > 0.")
    if support_max is None:
        support_max = int(math.ceil(mean + 6 * sd))
    if support_max < mean:
        raise DegreeModelError("support_max must be >= mean.")
    k = np.arange(support_max + 1, dtype=float)
    # shift by the peak so tiny sd does not underflow every weight
    log_w = -((k - mean) ** 2) / (2.0 * sd * sd)
    return _normalized_law(np.exp(log_w - log_w.max()))


def make_poisson_law(mean: float, support_max: Optional[int] = None) -> DiscreteLaw:
    if not math.isfinite(mean) or mean <= 0:
        raise DegreeModelError("Poisson mean must be finite and > 0.")
    if support_max is None:
        support_max = int(math.ceil(mean + 10 * math.sqrt(mean) + 10))
    if support_max < 0:
        raise DegreeModelError("support_max must be >= 0.")
    return _normalized_law(poisson.pmf(np.arange(support_max + 1), mean))


def make_point_mass_law(value: int) -> DiscreteLaw:
    if value < 0:
        raise DegreeModelError("Degree must be >= 0.")
    masses = np.zeros(value + 1)
    masses[value] = 1.0
    return DiscreteLaw(masses)


def law_from_pairs(pairs: Iterable[Iterable[float]]) -> DiscreteLaw:
    """Build a law from `[[k, p], ...]` rows (duplicates summed)."""
    rows = [tuple(row) for row in pairs]
    if not rows:
        raise DegreeModelError("Law table is empty.")
    try:
        ks = [int(k) for k, _ in rows]
        ps = [float(p) for _, p in rows]
    except (TypeError, ValueError) as exc:
        raise DegreeModelError("Law rows must be [k, p] pairs.") from exc
    if min(ks) < 0:
        raise DegreeModelError("Degrees must be >= 0.")
    masses = np.zeros(max(ks) + 1)
    np.add.at(masses, ks, ps)
    if np.any(masses < 0) or abs(float(masses.sum()) - 1.0) > TABLE_MASS_TOL:
        raise DegreeModelError("Law table masses must be nonnegative and sum to 1.")
    return _normalized_law(masses)


@dataclass(frozen=True, eq=False)
class JointDegreeDistribution:
    """The law P(j,k) of (D_in, D_out) on a finite support.

    `j`, `k`, `p` are parallel arrays over the support points with p > 0.
    `lam` is the common mean degree. Instances are immutable and safe to
    share between worker threads.
    """

    j: np.ndarray
    k: np.ndarray
    p: np.ndarray
    lam: float = field(init=False)
    # per distinct in-degree: values, Σ_k P(j,k), Σ_k k·P(j,k)
    j_values: np.ndarray = field(init=False, repr=False)
    mass_by_j: np.ndarray = field(init=False, repr=False)
    out_weight_by_j: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        j = np.asarray(self.j, dtype=np.int64).copy()
        k = np.asarray(self.k, dtype=np.int64).copy()
        p = np.asarray(self.p, dtype=float).copy()
        if not (j.shape == k.shape == p.shape) or j.ndim != 1 or j.size == 0:
            raise DegreeModelError("j, k and p must be non-empty arrays of one shape.")
        if np.any(j < 0) or np.any(k < 0):
            raise DegreeModelError("Degrees must be >= 0.")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DegreeModelError("Probabilities must be finite and nonnegative.")
        total = float(p.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise DegreeModelError(f"Probabilities must sum to 1 (got {total!r}).")
        mean_in = float(np.dot(j, p))
        mean_out = float(np.dot(k, p))
        if abs(mean_in - mean_out) > BALANCE_TOL:
            raise BalanceViolationError(
                f"Mean in-degree {mean_in!r} differs from mean out-degree {mean_out!r}."
            )
        if mean_in <= 0:
            raise DegreeModelError("Mean degree must be > 0.")

        j_values, inverse = np.unique(j, return_inverse=True)
        mass_by_j = np.bincount(inverse, weights=p, minlength=j_values.size)
        out_weight_by_j = np.bincount(inverse, weights=k * p, minlength=j_values.size)

        object.__setattr__(self, "j", _frozen(j))
        object.__setattr__(self, "k", _frozen(k))
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "lam", mean_in)
        object.__setattr__(self, "j_values", _frozen(j_values))
        object.__setattr__(self, "mass_by_j", _frozen(mass_by_j))
        object.__setattr__(self, "out_weight_by_j", _frozen(out_weight_by_j))

    @property
    def size(self) -> int:
        return int(self.p.size)

    def triples(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.j, self.k, self.p)]


def make_product_distribution(in_law: DiscreteLaw, out_law: DiscreteLaw) -> JointDegreeDistribution:
    """P(j,k) = p_j * q_k for independent in- and out-degree laws."""
    if abs(in_law.mean - out_law.mean) > BALANCE_TOL:
        raise BalanceViolationError(
            f"In-law mean {in_law.mean!r} differs from out-law mean {out_law.mean!r}."
        )
    jj, kk = np.meshgrid(
        np.arange(in_law.masses.size), np.arange(out_law.masses.size), indexing="ij"
    )
    pp = np.outer(in_law.masses, out_law.masses)
    keep = pp > 0
    p = pp[keep]
    return JointDegreeDistribution(jj[keep], kk[keep], p / p.sum())


def make_table_distribution(triples: Iterable[Iterable[float]]) -> JointDegreeDistribution:
    """Explicit (j, k, p) triples; duplicate (j, k) rows are summed."""
    mass: dict[tuple[int, int], float] = {}
    for row in triples:
        try:
            j, k, p = row
            key = (int(j), int(k))
            value = float(p)
        except (TypeError, ValueError) as exc:
            raise DegreeModelError(f"Bad table row {row!r}; expected [j, k, p].") from exc
        mass[key] = mass.get(key, 0.0) + value
    if not mass:
        raise DegreeModelError("Distribution table is empty.")
    keys = sorted(mass)
    p = np.array([mass[key] for key in keys])
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > TABLE_MASS_TOL:
        raise DegreeModelError("Table probabilities must be nonnegative and sum to 1.")
    keep = p > 0
    j = np.array([key[0] for key in keys])[keep]
    k = np.array([key[1] for key in keys])[keep]
    p = p[keep]
    return JointDegreeDistribution(j, k, p / p.sum())


def moments(dist: JointDegreeDistribution, omega: int) -> tuple[float, float]:
    """Return (lambda, E[D_out * 1(D_in < omega)])."""
    below = dist.j < omega
    return dist.lam, float(np.dot(dist.k[below], dist.p[below]))


# ------------------------------ sequences -------------------------------


@dataclass(frozen=True, eq=False)
class DegreeSequence:
    """Per-vertex (d_in, d_out) with equal totals."""

    d_in: np.ndarray
    d_out: np.ndarray

    def __post_init__(self) -> None:
        d_in = np.asarray(self.d_in, dtype=np.int64).copy()
        d_out = np.asarray(self.d_out, dtype=np.int64).copy()
        if d_in.shape != d_out.shape or d_in.ndim != 1:
            raise DegreeModelError("d_in and d_out must be 1-D arrays of one length.")
        if np.any(d_in < 0) or np.any(d_out < 0):
            raise DegreeModelError("Degrees must be >= 0.")
        if int(d_in.sum()) != int(d_out.sum()):
            raise BalanceViolationError(
                f"Total in-degree {int(d_in.sum())} != total out-degree {int(d_out.sum())}."
            )
        object.__setattr__(self, "d_in", _frozen(d_in))
        object.__setattr__(self, "d_out", _frozen(d_out))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "DegreeSequence":
        rows = list(pairs)
        return cls(
            np.array([a for a, _ in rows], dtype=np.int64),
            np.array([b for _, b in rows], dtype=np.int64),
        )

    @property
    def n(self) -> int:
        return int(self.d_in.size)

    @property
    def m(self) -> int:
        return int(self.d_in.sum())

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.d_in.tolist(), self.d_out.tolist()))

    @property
    def is_empty(self) -> bool:
        return self.m == 0

    def __len__(self) -> int:
        return self.n

    def class_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct (j, k) classes, sorted, and each vertex's class id."""
        stacked = np.stack([self.d_in, self.d_out], axis=1)
        classes, ids = np.unique(stacked, axis=0, return_inverse=True)
        return classes, ids.reshape(-1)


def sample_degree_sequence(
    dist: JointDegreeDistribution, n: int, rng: np.random.Generator
) -> DegreeSequence:
    """Draw n iid (d_in, d_out) pairs from P(j,k), then balance the totals.

    While total in-degree is short of total out-degree, a uniformly random
    vertex gets one more in-stub (and symmetrically), so the repair adds
    exactly the initial deficit.
    """
    if n < 1:
        raise DegreeModelError("n must be >= 1.")
    picks = rng.choice(dist.size, size=n, p=dist.p)
    d_in = dist.j[picks].copy()
    d_out = dist.k[picks].copy()

    deficit = int(d_out.sum()) - int(d_in.sum())
    if deficit > 0:
        np.add.at(d_in, rng.integers(0, n, size=deficit), 1)
    elif deficit < 0:
        np.add.at(d_out, rng.integers(0, n, size=-deficit), 1)
    if deficit:
        logger.debug("Balanced degree sequence: deficit %d over n=%d", deficit, n)

    seq = DegreeSequence(d_in, d_out)
    if seq.is_empty:
        logger.warning("Sampled degree sequence has no stubs (n=%d); the cascade is trivial.", n)
    return seq


# ------------------------------ config ----------------------------------

_TYPE_KEYS: dict[str, set[str]] = {
    "gaussian": {"mean", "sd", "support_max"},
    "poisson": {"mean", "support_max"},
    "regular": {"degree"},
    "table": {"table"},
}
_COMMON_KEYS = {"type", "out_degree", "out_law"}


def _require(config: dict, key: str) -> Any:
    if key not in config:
        raise DistributionConfigError(f"Distribution config is missing {key!r}.")
    return config[key]


def _in_law(config: dict) -> DiscreteLaw:
    kind = config["type"]
    if kind == "gaussian":
        return make_gaussian_in_degree(
            float(_require(config, "mean")),
            float(_require(config, "sd")),
            config.get("support_max"),
        )
    if kind == "poisson":
        return make_poisson_law(float(_require(config, "mean")), config.get("support_max"))
    return make_point_mass_law(int(_require(config, "degree")))


def load_distribution(config: dict) -> JointDegreeDistribution:
    """Build a distribution from the JSON config schema.

    {"type": "gaussian"|"poisson"|"regular"|"table", parameters...,
     "out_degree": "same_independent"|"table"}
    """
    if not isinstance(config, dict):
        raise DistributionConfigError("Distribution config must be a JSON object.")
    kind = config.get("type")
    if kind not in _TYPE_KEYS:
        raise DistributionConfigError(
            f"Unknown distribution type {kind!r}. Use one of: {', '.join(sorted(_TYPE_KEYS))}."
        )
    unknown = set(config) - _COMMON_KEYS - _TYPE_KEYS[kind]
    if unknown:
        raise DistributionConfigError(f"Unknown distribution keys: {', '.join(sorted(unknown))}.")

    try:
        if kind == "table":
            if config.get("out_degree", "table") != "table":
                raise DistributionConfigError('A "table" distribution takes out_degree "table".')
            return make_table_distribution(_require(config, "table"))

        in_law = _in_law(config)
        out_mode = config.get("out_degree", "same_independent")
        if out_mode == "same_independent":
            out_law = in_law
        elif out_mode == "table":
            out_law = law_from_pairs(_require(config, "out_law"))
        else:
            raise DistributionConfigError(f"Unknown out_degree mode {out_mode!r}.")
        return make_product_distribution(in_law, out_law)
    except DistributionConfigError:
        raise
    except DegreeModelError as exc:
        raise DistributionConfigError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise DistributionConfigError(f"Bad distribution parameter: {exc}") from exc


def load_distribution_file(path: Union[str, Path]) -> JointDegreeDistribution:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            config = json.load(handle)
    except OSError as exc:
        raise DistributionConfigError(f"Cannot read distribution config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DistributionConfigError(f"Invalid JSON in {path}: {exc}") from exc
    return load_distribution(config)
