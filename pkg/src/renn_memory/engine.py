"""Per-frame orchestration, snapshots and memory statistics.

Snapshot layout (all integers little-endian)::

    magic       8 bytes   b"RENNMEM\\x00"
    header_len  uint32
    header      header_len bytes of UTF-8 JSON, sorted keys, no spaces:
                {format_version, dimension, config, config_digest,
                 element_count, next_identity, frame_counter, frames_observed}
    records     element_count records of
                identity int64, inserted_at int64, last_matched_at int64,
                eligibility float64, descriptor float64[dimension]
    crc32       uint32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Config, ConfigError, DimensionError, Frame, Memory, ReNNError, StreamOrderError, l2_normalize, new_memory
from .memctl import DecayEvent, PruneReport, apply_decay, prune
from .renn import assign_identities, match_frame

SNAPSHOT_MAGIC = b"RENNMEM\x00"
SNAPSHOT_VERSION = 1


class SnapshotError(ReNNError):
    pass


@dataclass
class FrameReport:
    frame_index: int
    assignments: list[int]
    new_identities: list[int]
    decay_events: list[DecayEvent]
    prune_report: PruneReport
    memory_size_before: int
    memory_size_after: int
    conflicts: dict[int, list[tuple[int, float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame_index,
            "assignments": self.assignments,
            "new_identities": self.new_identities,
            "decay": [
                [e.memory_index, e.eta, e.eligibility_before, e.eligibility_after]
                for e in self.decay_events
            ],
            "removed_by_eligibility": self.prune_report.removed_by_eligibility,
            "removed_by_staleness": self.prune_report.removed_by_staleness,
            "memory_size_before": self.memory_size_before,
            "memory_size": self.memory_size_after,
            "conflicts": {str(k): [list(c) for c in v] for k, v in sorted(self.conflicts.items())},
        }


def prepare_observations(frame: Frame, config: Config) -> Frame:
    if len(frame) and frame.dimension != config.dimension:
        raise DimensionError(
            f"frame {frame.index}: dimension {frame.dimension}, session dimension {config.dimension}"
        )
    if config.normalize and len(frame):
        return Frame(frame.index, l2_normalize(frame.observations), frame.labels)
    return frame


def observe(memory: Memory, frame: Frame, config: Optional[Config] = None, workers: int = 1) -> FrameReport:
    """Run one frame through match, assign, decay, prune and insert.

    All changes are computed on a working copy and committed at the end, so
    an exception leaves ``memory`` untouched.
    """
    config = memory.config if config is None else config
    if config != memory.config:
        raise ConfigError("config does not match the memory's session config")
    if memory.frames_observed and frame.index <= memory.frame_counter:
        raise StreamOrderError(
            f"frame index {frame.index} does not follow last frame {memory.frame_counter}"
        )
    frame = prepare_observations(frame, config)

    work = memory.copy()
    work.frame_counter = frame.index
    size_before = len(work)

    match_set = match_frame(work, frame, config, workers)
    result = assign_identities(match_set, work, frame)
    decay_events = apply_decay(work, match_set, config)
    prune_report = prune(work, config)

    identities = []
    new_ids = []
    for a in result.assignments:
        if a.is_new:
            identities.append(work.next_identity)
            new_ids.append(work.next_identity)
            work.next_identity += 1
        else:
            identities.append(a.identity)
    if len(frame):
        work.append(frame.observations, identities, frame.index)
    work.frames_observed += 1

    memory.assign_from(work)
    return FrameReport(
        frame_index=frame.index,
        assignments=identities,
        new_identities=new_ids,
        decay_events=decay_events,
        prune_report=prune_report,
        memory_size_before=size_before,
        memory_size_after=len(memory),
        conflicts=result.conflicts,
    )


class Engine:
    """A memory bound to its config, with a fixed search worker count."""

    def __init__(self, config: Config, memory: Optional[Memory] = None, workers: int = 1):
        if memory is not None and memory.config != config:
            raise ConfigError("memory was built with a different config")
        self.config = config
        self.memory = memory if memory is not None else new_memory(config)
        self.workers = workers

    def observe(self, frame: Frame) -> FrameReport:
        return observe(self.memory, frame, self.config, self.workers)

    def run(self, frames: Iterable[Frame]) -> list[FrameReport]:
        return [self.observe(f) for f in frames]

    def next_frame_index(self) -> int:
        return self.memory.frame_counter + 1 if self.memory.frames_observed else 0

    def snapshot(self) -> bytes:
        return snapshot(self.memory)

    @classmethod
    def restore(cls, data: bytes, config: Optional[Config] = None, workers: int = 1) -> "Engine":
        memory = restore(data, config)
        return cls(memory.config, memory, workers)


_RECORD_HEAD = np.dtype([("identity", "<i8"), ("inserted_at", "<i8"), ("last_matched_at", "<i8"), ("eligibility", "<f8")])


def _record_dtype(dimension: int) -> np.dtype:
    return np.dtype(_RECORD_HEAD.descr + [("descriptor", "<f8", (dimension,))])


def snapshot(memory: Memory) -> bytes:
    config = memory.config
    header = {
        "format_version": SNAPSHOT_VERSION,
        "dimension": config.dimension,
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "element_count": len(memory),
        "next_identity": int(memory.next_identity),
        "frame_counter": int(memory.frame_counter),
        "frames_observed": int(memory.frames_observed),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    records = np.zeros(len(memory), dtype=_record_dtype(config.dimension))
    records["identity"] = memory.identities
    records["inserted_at"] = memory.inserted_at
    records["last_matched_at"] = memory.last_matched_at
    records["eligibility"] = memory.eligibility
    records["descriptor"] = memory.descriptors
    body = SNAPSHOT_MAGIC + struct.pack("<I", len(head)) + head + records.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def restore(data: bytes, config: Optional[Config] = None) -> Memory:
    """Rebuild a memory from :func:`snapshot` bytes.

    When ``config`` is given it must match the stored one (dimension first,
    then the full digest).
    """
    if len(data) < len(SNAPSHOT_MAGIC) + 8 or not data.startswith(SNAPSHOT_MAGIC):
        raise SnapshotError("not a memory snapshot")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise SnapshotError("snapshot checksum mismatch")
    offset = len(SNAPSHOT_MAGIC)
    (head_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    if offset + head_len > len(body):
        raise SnapshotError("snapshot header is truncated")
    try:
        header = json.loads(body[offset:offset + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"unreadable snapshot header: {exc}") from None
    offset += head_len
    if not isinstance(header, dict) or header.get("format_version") != SNAPSHOT_VERSION:
        version = header.get("format_version") if isinstance(header, dict) else None
        raise SnapshotError(f"unsupported snapshot version {version!r}")
    try:
        stored = Config.from_dict(header["config"])
        counts = [int(header[k]) for k in ("element_count", "next_identity", "frame_counter", "frames_observed")]
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"malformed snapshot header: {exc}") from None
    n, next_identity, frame_counter, frames_observed = counts
    if stored.digest() != header.get("config_digest"):
        raise SnapshotError("snapshot config digest does not match its config")
    if config is not None:
        if config.dimension != stored.dimension:
            raise SnapshotError(
                f"snapshot dimension {stored.dimension} does not match config dimension {config.dimension}"
            )
        if config.digest() != stored.digest():
            raise SnapshotError("snapshot was written under a different config")
    dtype = _record_dtype(stored.dimension)
    if n < 0 or len(body) - offset != n * dtype.itemsize:
        raise SnapshotError("snapshot record section has the wrong length")
    records = np.frombuffer(body, dtype=dtype, count=n, offset=offset)
    return Memory(
        config=config if config is not None else stored,
        descriptors=records["descriptor"].reshape(n, stored.dimension).astype(np.float64),
        identities=records["identity"].astype(np.int64),
        eligibility=records["eligibility"].astype(np.float64),
        inserted_at=records["inserted_at"].astype(np.int64),
        last_matched_at=records["last_matched_at"].astype(np.int64),
        next_identity=next_identity,
        frame_counter=frame_counter,
        frames_observed=frames_observed,
    )


@dataclass
class MemoryStats:
    size: int
    identity_counts: dict[int, int]
    eligibility_edges: list[float]
    eligibility_counts: list[int]
    age_edges: list[float]
    age_counts: list[int]

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "identity_counts": {str(k): v for k, v in self.identity_counts.items()},
            "eligibility_histogram": {"edges": self.eligibility_edges, "counts": self.eligibility_counts},
            "age_histogram": {"edges": self.age_edges, "counts": self.age_counts},
        }


def stats(
    memory: Memory,
    eligibility_edges: Optional[Sequence[float]] = None,
    age_edges: Optional[Sequence[float]] = None,
) -> MemoryStats:
    """Per-identity counts plus eligibility and age histograms.

    Age is ``frame_counter - inserted_at``. Histogram bins follow numpy's
    convention (half-open, last bin closed).
    """
    if eligibility_edges is None:
        eligibility_edges = np.linspace(0.0, 1.0, 11)
    ages = memory.frame_counter - memory.inserted_at
    if age_edges is None:
        top = int(ages.max()) + 1 if len(ages) else 1
        age_edges = np.linspace(0.0, top, 11)
    counts = Counter(memory.identities.tolist())
    e_counts, e_edges = np.histogram(memory.eligibility, bins=np.asarray(eligibility_edges, dtype=float))
    a_counts, a_edges = np.histogram(ages, bins=np.asarray(age_edges, dtype=float))
    return MemoryStats(
        size=len(memory),
        identity_counts=dict(sorted(counts.items())),
        eligibility_edges=e_edges.tolist(),
        eligibility_counts=e_counts.tolist(),
        age_edges=a_edges.tolist(),
        age_counts=a_counts.tolist(),
    )
