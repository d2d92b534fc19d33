"""Reverse nearest-neighbour matching.

Every stored descriptor looks for its two nearest observations in the
incoming frame and is matched when the ratio of the two distances falls
strictly below ``rho_bar``. Observations then inherit the identity of the
closest memory element that picked them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .core import Config, DimensionError, Frame, Memory
from .knn import NearestPairs, TwoNearest, batch_two_nearest_arrays, two_nearest

NO_NEIGHBOUR = -1


@dataclass
class MatchSet:
    """Memory elements that passed the ratio test, with their neighbour records."""

    memory_index: np.ndarray
    pairs: NearestPairs

    def __len__(self) -> int:
        return len(self.memory_index)

    def __iter__(self) -> Iterator[tuple[int, TwoNearest]]:
        for k in range(len(self)):
            yield int(self.memory_index[k]), self.pairs.row(k)

    @property
    def ratios(self) -> np.ndarray:
        return distance_ratio(self.pairs.first_distance, self.pairs.second_distance)

    @classmethod
    def empty(cls) -> "MatchSet":
        i = np.empty(0, dtype=np.int64)
        d = np.empty(0, dtype=np.float64)
        return cls(i, NearestPairs(i.copy(), d, i.copy(), d.copy()))


@dataclass(frozen=True)
class Assignment:
    """Outcome for one observation. ``identity`` is None for a new identity."""

    identity: Optional[int]
    memory_index: Optional[int] = None
    distance: Optional[float] = None

    @property
    def is_new(self) -> bool:
        return self.identity is None


NEW_IDENTITY = Assignment(None)


@dataclass
class AssignmentResult:
    assignments: list[Assignment]
    # observation index -> [(competing identity, its closest distance), ...]
    conflicts: dict[int, list[tuple[int, float]]] = field(default_factory=dict)

    @property
    def unassigned(self) -> list[int]:
        return [k for k, a in enumerate(self.assignments) if a.is_new]


def distance_ratio(d1, d2) -> np.ndarray:
    """``d1 / d2`` with ``0 / 0`` defined as 0 (an exact duplicate)."""
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    safe = np.where(d2 > 0.0, d2, 1.0)
    return np.where(d2 > 0.0, d1 / safe, 0.0)


def _frame_observations(memory: Memory, frame: Frame) -> np.ndarray:
    obs = frame.observations
    if len(obs) and obs.shape[1] != memory.dimension:
        raise DimensionError(
            f"frame {frame.index}: dimension {obs.shape[1]}, memory expects {memory.dimension}"
        )
    return obs


def nearest_pairs(memory: Memory, frame: Frame, workers: int = 1) -> NearestPairs:
    """TwoNearest records for every memory element against the frame's observations."""
    obs = _frame_observations(memory, frame)
    return batch_two_nearest_arrays(memory.descriptors, obs, workers=workers)


def renn_match(memory: Memory, frame: Frame, config: Config, workers: int = 1) -> MatchSet:
    if len(frame) < 2:
        raise ValueError("renn_match needs at least two observations; use fallback_match")
    pairs = nearest_pairs(memory, frame, workers)
    passed = np.flatnonzero(distance_ratio(pairs.first_distance, pairs.second_distance) < config.rho_bar)
    return MatchSet(
        memory_index=passed.astype(np.int64),
        pairs=NearestPairs(
            pairs.first_index[passed],
            pairs.first_distance[passed],
            pairs.second_index[passed],
            pairs.second_distance[passed],
        ),
    )


def fallback_match(memory: Memory, frame: Frame, config: Config) -> MatchSet:
    """Absolute-distance gate for frames holding a single observation.

    Without ``abs_gate`` nothing matches. Matched records carry an infinite
    second distance and ``NO_NEIGHBOUR`` as second index.
    """
    if len(frame) != 1:
        raise ValueError("fallback_match expects exactly one observation")
    obs = _frame_observations(memory, frame)
    if config.abs_gate is None or len(memory) == 0:
        return MatchSet.empty()
    diff = memory.descriptors - obs[0]
    d = np.sqrt((diff * diff).sum(axis=-1))
    passed = np.flatnonzero(d <= config.abs_gate)
    n = len(passed)
    return MatchSet(
        memory_index=passed.astype(np.int64),
        pairs=NearestPairs(
            np.zeros(n, dtype=np.int64),
            d[passed],
            np.full(n, NO_NEIGHBOUR, dtype=np.int64),
            np.full(n, np.inf),
        ),
    )


def match_frame(memory: Memory, frame: Frame, config: Config, workers: int = 1) -> MatchSet:
    """Dispatch on observation count: ReNN for two or more, the gate for one."""
    if len(frame) >= 2:
        return renn_match(memory, frame, config, workers)
    if len(frame) == 1:
        return fallback_match(memory, frame, config)
    return MatchSet.empty()


def assign_identities(match_set: MatchSet, memory: Memory, frame: Frame) -> AssignmentResult:
    """Give each observation the identity of the closest element that matched it.

    Ties on distance go to the lowest memory index. Other identities that
    also matched the observation are reported as conflicts, never merged.
    """
    assignments = [NEW_IDENTITY] * len(frame)
    conflicts: dict[int, list[tuple[int, float]]] = {}
    if len(match_set) == 0:
        return AssignmentResult(assignments, conflicts)

    obs = match_set.pairs.first_index
    dist = match_set.pairs.first_distance
    mem = match_set.memory_index
    ids = memory.identities[mem]
    order = np.lexsort((mem, dist, obs))

    start = 0
    while start < len(order):
        o = int(obs[order[start]])
        stop = start
        while stop < len(order) and obs[order[stop]] == o:
            stop += 1
        best = order[start]
        winner = int(ids[best])
        assignments[o] = Assignment(winner, int(mem[best]), float(dist[best]))
        seen = {winner}
        competing = []
        for k in order[start + 1:stop]:
            ident = int(ids[k])
            if ident not in seen:
                seen.add(ident)
                competing.append((ident, float(dist[k])))
        if competing:
            conflicts[o] = competing
        start = stop
    return AssignmentResult(assignments, conflicts)


def forward_nn_ratio(memory: Memory, observation) -> float:
    """Classic forward ratio test value for one observation against the memory.

    Kept for comparison with the reverse direction; the engine never uses it.
    """
    tn = two_nearest(observation, memory.descriptors)
    return float(distance_ratio(tn.first_distance, tn.second_distance))
