"""Unsupervised identity memory built on reverse nearest-neighbour matching."""

from .core import (
    Config,
    ConfigError,
    DimensionError,
    Frame,
    Memory,
    MemoryElement,
    ReNNError,
    StreamOrderError,
    new_memory,
)
from .engine import Engine, FrameReport, SnapshotError, observe, restore, snapshot, stats
from .knn import TwoNearest, batch_two_nearest, distance, two_nearest
from .renn import MatchSet, assign_identities, fallback_match, renn_match

__all__ = [
    "Config",
    "ConfigError",
    "DimensionError",
    "Engine",
    "Frame",
    "FrameReport",
    "MatchSet",
    "Memory",
    "MemoryElement",
    "ReNNError",
    "SnapshotError",
    "StreamOrderError",
    "TwoNearest",
    "assign_identities",
    "batch_two_nearest",
    "distance",
    "fallback_match",
    "new_memory",
    "observe",
    "renn_match",
    "restore",
    "snapshot",
    "stats",
    "two_nearest",
]
