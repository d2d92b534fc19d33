"""Eligibility decay and the two pruning rules.

A matched element's eligibility is multiplied by
``eta = (d1 / d2) ** alpha / rho_bar``. Because a match requires
``d1 / d2 < rho_bar <= 1`` and ``alpha >= 1``, ``eta < rho_bar ** (alpha - 1) <= 1``,
so repeated matching is a contraction towards 0. Elements whose eligibility
drops strictly below ``e_bar`` are removed, as are elements left unmatched
for more than ``max_stale`` frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Config, Memory
from .renn import MatchSet, distance_ratio

# keeps an exact duplicate from zeroing an element in one step
ETA_FLOOR = 1e-3


@dataclass(frozen=True)
class DecayEvent:
    memory_index: int
    eta: float
    eligibility_before: float
    eligibility_after: float


@dataclass
class PruneReport:
    removed_by_eligibility: list[int] = field(default_factory=list)
    removed_by_staleness: list[int] = field(default_factory=list)

    @property
    def removed(self) -> int:
        return len(self.removed_by_eligibility) + len(self.removed_by_staleness)


def decay_factor(d1, d2, config: Config):
    """Raw decay factor; ``d2`` may be ``inf`` (gate matches) or 0 together with ``d1``."""
    eta = distance_ratio(d1, d2) ** config.alpha / config.rho_bar
    return float(eta) if np.ndim(eta) == 0 else eta


def clamped_decay_factor(d1, d2, config: Config):
    return np.maximum(decay_factor(d1, d2, config), ETA_FLOOR)


def apply_decay(memory: Memory, match_set: MatchSet, config: Config) -> list[DecayEvent]:
    """Multiply each matched element's eligibility by its (floored) decay factor.

    Mutates ``memory`` in place and stamps ``last_matched_at`` with
    ``memory.frame_counter``, which the caller sets to the current frame.
    """
    if len(match_set) == 0:
        return []
    idx = match_set.memory_index
    if len(np.unique(idx)) != len(idx):
        raise ValueError("match set lists a memory element twice")
    eta = np.atleast_1d(
        clamped_decay_factor(match_set.pairs.first_distance, match_set.pairs.second_distance, config)
    )
    before = memory.eligibility[idx].copy()
    after = eta * before
    memory.eligibility[idx] = after
    memory.last_matched_at[idx] = memory.frame_counter
    return [
        DecayEvent(int(i), float(h), float(b), float(a))
        for i, h, b, a in zip(idx, eta, before, after)
    ]


def eligibility_mask(memory: Memory, config: Config) -> np.ndarray:
    return memory.eligibility < config.e_bar


def stale_mask(memory: Memory, config: Config) -> np.ndarray:
    return (memory.frame_counter - memory.last_matched_at) > config.max_stale


def prune_eligibility(memory: Memory, config: Config) -> PruneReport:
    mask = eligibility_mask(memory, config)
    memory.keep(~mask)
    return PruneReport(removed_by_eligibility=np.flatnonzero(mask).tolist())


def prune_stale(memory: Memory, config: Config) -> PruneReport:
    mask = stale_mask(memory, config)
    memory.keep(~mask)
    return PruneReport(removed_by_staleness=np.flatnonzero(mask).tolist())


def prune(memory: Memory, config: Config) -> PruneReport:
    """Both rules in one pass; indices refer to the memory as passed in.

    An element failing both rules is reported under eligibility only.
    """
    by_elig = eligibility_mask(memory, config)
    by_stale = stale_mask(memory, config) & ~by_elig
    memory.keep(~(by_elig | by_stale))
    return PruneReport(np.flatnonzero(by_elig).tolist(), np.flatnonzero(by_stale).tolist())
