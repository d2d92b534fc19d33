"""Domain types and the memory container.

The memory is stored column-wise (one numpy array per field) so that the
nearest-neighbour scan can run over all stored descriptors at once.
:class:`MemoryElement` is a read-only row view for callers that want records.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterator, Optional, Sequence

import numpy as np


class ReNNError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ReNNError, ValueError):
    pass


class DimensionError(ReNNError, ValueError):
    pass


class StreamOrderError(ReNNError, ValueError):
    pass


@dataclass(frozen=True)
class Config:
    """Session parameters.

    ``rho_bar`` is the distance-ratio threshold, ``e_bar`` the eligibility
    removal threshold, ``alpha`` the ratio exponent in the decay factor and
    ``max_stale`` the number of frames an element may go unmatched.
    ``abs_gate`` enables absolute-distance matching for single-observation
    frames; ``normalize`` L2-normalizes every descriptor on ingest.
    """

    dimension: int
    rho_bar: float = 0.8
    e_bar: float = 0.1
    alpha: float = 1.0
    max_stale: int = 300
    abs_gate: Optional[float] = None
    normalize: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.dimension, bool) or not isinstance(self.dimension, (int, np.integer)):
            raise ConfigError(f"dimension must be an integer, got {self.dimension!r}")
        if self.dimension < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.dimension}")
        if not (0.0 < self.rho_bar <= 1.0):
            raise ConfigError(f"rho_bar must lie in (0, 1], got {self.rho_bar}")
        if not (0.0 < self.e_bar < 1.0):
            raise ConfigError(f"e_bar must lie in (0, 1), got {self.e_bar}")
        if not (math.isfinite(self.alpha) and self.alpha >= 1.0):
            raise ConfigError(f"alpha must be >= 1, got {self.alpha}")
        if isinstance(self.max_stale, bool) or int(self.max_stale) != self.max_stale or self.max_stale < 1:
            raise ConfigError(f"max_stale must be a positive integer, got {self.max_stale}")
        if self.abs_gate is not None and not (math.isfinite(self.abs_gate) and self.abs_gate > 0):
            raise ConfigError(f"abs_gate must be a positive real, got {self.abs_gate}")
        # canonical python types keep digests and snapshots stable
        object.__setattr__(self, "dimension", int(self.dimension))
        object.__setattr__(self, "rho_bar", float(self.rho_bar))
        object.__setattr__(self, "e_bar", float(self.e_bar))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "max_stale", int(self.max_stale))
        object.__setattr__(self, "normalize", bool(self.normalize))
        object.__setattr__(self, "seed", int(self.seed))
        if self.abs_gate is not None:
            object.__setattr__(self, "abs_gate", float(self.abs_gate))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def digest(self) -> str:
        """SHA-256 over the learner-relevant fields (``seed`` excluded)."""
        fields = self.to_dict()
        fields.pop("seed")
        blob = json.dumps(fields, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def as_descriptors(values, dimension: Optional[int] = None) -> np.ndarray:
    """Coerce ``values`` to a C-contiguous ``(n, D)`` float64 array and validate it."""
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.size == 0:
        return np.empty((0, dimension or 0), dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dimension == 1 else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"descriptors must be a 2-D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("descriptors must be finite")
    if dimension is not None and arr.shape[1] != dimension:
        raise DimensionError(f"expected dimension {dimension}, got {arr.shape[1]}")
    return arr


def l2_normalize(descriptors: np.ndarray) -> np.ndarray:
    norms = np.sqrt((descriptors * descriptors).sum(axis=-1, keepdims=True))
    norms[norms == 0.0] = 1.0
    return descriptors / norms


@dataclass
class Frame:
    """A timestamped batch of observed descriptors.

    ``labels`` are ground-truth tags for evaluation; the learner never reads them.
    """

    index: int
    observations: np.ndarray
    labels: Optional[list] = None

    def __post_init__(self):
        if int(self.index) != self.index or self.index < 0:
            raise ValueError(f"frame index must be a non-negative integer, got {self.index}")
        self.index = int(self.index)
        self.observations = as_descriptors(self.observations)
        if self.labels is not None:
            self.labels = list(self.labels)
            if len(self.labels) != len(self.observations):
                raise ValueError(
                    f"frame {self.index}: {len(self.labels)} labels for "
                    f"{len(self.observations)} observations"
                )

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def dimension(self) -> int:
        return self.observations.shape[1]


@dataclass(frozen=True)
class MemoryElement:
    descriptor: tuple
    identity: int
    eligibility: float
    inserted_at: int
    last_matched_at: int


@dataclass(eq=False)
class Memory:
    """Descriptor collection ``{(x_i, Id_i, e_i)}`` plus bookkeeping.

    ``frame_counter`` is the index of the last committed frame and
    ``frames_observed`` counts commits (it distinguishes a fresh memory
    from one that has seen frame 0).
    """

    config: Config
    descriptors: np.ndarray = None
    identities: np.ndarray = None
    eligibility: np.ndarray = None
    inserted_at: np.ndarray = None
    last_matched_at: np.ndarray = None
    next_identity: int = 0
    frame_counter: int = 0
    frames_observed: int = 0

    def __post_init__(self):
        d = self.config.dimension
        if self.descriptors is None:
            self.descriptors = np.empty((0, d), dtype=np.float64)
        self.descriptors = np.ascontiguousarray(self.descriptors, dtype=np.float64).reshape(-1, d)
        n = len(self.descriptors)
        self.identities = _column(self.identities, n, np.int64)
        self.eligibility = _column(self.eligibility, n, np.float64)
        self.inserted_at = _column(self.inserted_at, n, np.int64)
        self.last_matched_at = _column(self.last_matched_at, n, np.int64)

    def __len__(self) -> int:
        return len(self.descriptors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Memory):
            return NotImplemented
        return (
            self.config == other.config
            and self.next_identity == other.next_identity
            and self.frame_counter == other.frame_counter
            and self.frames_observed == other.frames_observed
            and np.array_equal(self.descriptors, other.descriptors)
            and np.array_equal(self.identities, other.identities)
            and np.array_equal(self.eligibility, other.eligibility)
            and np.array_equal(self.inserted_at, other.inserted_at)
            and np.array_equal(self.last_matched_at, other.last_matched_at)
        )

    @property
    def dimension(self) -> int:
        return self.config.dimension

    def element(self, i: int) -> MemoryElement:
        return MemoryElement(
            descriptor=tuple(self.descriptors[i].tolist()),
            identity=int(self.identities[i]),
            eligibility=float(self.eligibility[i]),
            inserted_at=int(self.inserted_at[i]),
            last_matched_at=int(self.last_matched_at[i]),
        )

    @property
    def elements(self) -> list[MemoryElement]:
        return [self.element(i) for i in range(len(self))]

    def __iter__(self) -> Iterator[MemoryElement]:
        return (self.element(i) for i in range(len(self)))

    def copy(self) -> "Memory":
        return Memory(
            config=self.config,
            descriptors=self.descriptors.copy(),
            identities=self.identities.copy(),
            eligibility=self.eligibility.copy(),
            inserted_at=self.inserted_at.copy(),
            last_matched_at=self.last_matched_at.copy(),
            next_identity=self.next_identity,
            frame_counter=self.frame_counter,
            frames_observed=self.frames_observed,
        )

    def keep(self, mask: np.ndarray) -> None:
        """Retain only the elements where ``mask`` is true, preserving order."""
        self.descriptors = self.descriptors[mask]
        self.identities = self.identities[mask]
        self.eligibility = self.eligibility[mask]
        self.inserted_at = self.inserted_at[mask]
        self.last_matched_at = self.last_matched_at[mask]

    def append(self, descriptors: np.ndarray, identities: Sequence[int], frame_index: int) -> None:
        """Insert new elements with eligibility 1 at ``frame_index``."""
        k = len(descriptors)
        self.descriptors = np.concatenate([self.descriptors, descriptors])
        self.identities = np.concatenate([self.identities, np.asarray(identities, dtype=np.int64)])
        self.eligibility = np.concatenate([self.eligibility, np.ones(k)])
        stamp = np.full(k, frame_index, dtype=np.int64)
        self.inserted_at = np.concatenate([self.inserted_at, stamp])
        self.last_matched_at = np.concatenate([self.last_matched_at, stamp])

    def assign_from(self, other: "Memory") -> None:
        self.__dict__.update(other.__dict__)


def _column(values, n: int, dtype) -> np.ndarray:
    if values is None:
        return np.empty(0, dtype=dtype)
    arr = np.ascontiguousarray(values, dtype=dtype).reshape(-1)
    if len(arr) != n:
        raise ValueError(f"column length {len(arr)} does not match {n} descriptors")
    return arr


def new_memory(config: Config) -> Memory:
    if not isinstance(config, Config):
        raise ConfigError("new_memory expects a Config")
    return Memory(config=config)
