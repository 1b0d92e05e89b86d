"""Directed configuration model: a uniform matching of out-stubs to in-stubs."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .degree_model import DegreeSequence

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    """Raised for invalid graph queries."""


@dataclass(frozen=True, eq=False)
class StubMatching:
    """The multigraph as a stub permutation.

    Stubs are numbered vertex by vertex, so vertex v owns the in-stubs
    `in_offsets[v]:in_offsets[v+1]` and likewise for out-stubs. Out-stub s
    is paired with in-stub `mate[s]`. Self-loops and parallel edges are kept.
    """

    owner_in: np.ndarray
    owner_out: np.ndarray
    mate: np.ndarray
    in_offsets: np.ndarray
    out_offsets: np.ndarray
    _in_partner: Optional[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for name in ("owner_in", "owner_out", "mate", "in_offsets", "out_offsets"):
            getattr(self, name).setflags(write=False)
        # out-stub paired with each in-stub, built on first use
        object.__setattr__(self, "_in_partner", None)

    @property
    def n(self) -> int:
        return int(self.in_offsets.size - 1)

    @property
    def m(self) -> int:
        return int(self.mate.size)

    @property
    def in_partner(self) -> np.ndarray:
        if self._in_partner is None:
            partner = np.empty_like(self.mate)
            partner[self.mate] = np.arange(self.m, dtype=self.mate.dtype)
            partner.setflags(write=False)
            object.__setattr__(self, "_in_partner", partner)
        return self._in_partner

    @property
    def targets(self) -> np.ndarray:
        """Vertex receiving each out-stub's edge."""
        return self.owner_in[self.mate]


def _offsets(degrees: np.ndarray) -> np.ndarray:
    offsets = np.zeros(degrees.size + 1, dtype=np.int64)
    np.cumsum(degrees, out=offsets[1:])
    return offsets


def build_matching(seq: DegreeSequence, rng: np.random.Generator) -> StubMatching:
    """Pair out-stubs with in-stubs by a uniformly random permutation."""
    vertices = np.arange(seq.n, dtype=np.int64)
    owner_in = np.repeat(vertices, seq.d_in)
    owner_out = np.repeat(vertices, seq.d_out)
    mate = rng.permutation(seq.m).astype(np.int64)
    if seq.m == 0:
        logger.warning("Degree sequence has no stubs; the matching is empty.")
    return StubMatching(
        owner_in=owner_in,
        owner_out=owner_out,
        mate=mate,
        in_offsets=_offsets(seq.d_in),
        out_offsets=_offsets(seq.d_out),
    )


def in_neighbors_multiset(matching: StubMatching, v: int) -> Counter:
    """Sources of the edges into v, with multiplicity."""
    if not 0 <= v < matching.n:
        raise GraphError(f"Vertex {v} out of range for n={matching.n}.")
    start, stop = matching.in_offsets[v], matching.in_offsets[v + 1]
    sources = matching.owner_out[matching.in_partner[start:stop]]
    return Counter(sources.tolist())


def count_self_loops(matching: StubMatching) -> int:
    return int(np.count_nonzero(matching.owner_out == matching.targets))


def expected_self_loops(seq: DegreeSequence) -> float:
    """Mean self-loop count of the configuration model, sum(d_in * d_out) / m."""
    if seq.m == 0:
        return 0.0
    return float(np.dot(seq.d_in, seq.d_out)) / seq.m


def matching_degrees(matching: StubMatching) -> DegreeSequence:
    """Recount (d_in, d_out) from the pairs themselves."""
    d_out = np.bincount(matching.owner_out, minlength=matching.n)
    d_in = np.bincount(matching.targets, minlength=matching.n)
    return DegreeSequence(d_in, d_out)


def edge_list(matching: StubMatching) -> tuple[np.ndarray, np.ndarray]:
    """(out_vertex, in_vertex) per stub pair, in out-stub order."""
    return matching.owner_out, matching.targets
