"""Synthetic streams and the two desk-scale experiments.

``stability_experiment`` runs the learner over a two-Gaussian stream
(inliers plus wider outliers) and summarises what the memory has kept.
``multipass_train`` / ``pr_eval`` replay a labeled descriptor set several
times and score a held-out set after each pass.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import Config, Frame, Memory
from .engine import Engine, FrameReport, prepare_observations
from .renn import assign_identities, match_frame

INLIER = "inlier"
OUTLIER = "outlier"

# outlier means for the three separation regimes of the standard benchmark
STANDARD_PRESETS = {"separated": 3.0, "medium": 1.0, "overlapping": 0.5}


def stability_config(**overrides) -> Config:
    """Learner settings for the 1-D stability benchmark.

    With ``e_bar = 0.1`` a single outlier frame wipes the inlier memory
    (every inlier element matches with ratio near 0), leaving a handful of
    elements; a tiny ``e_bar`` lets eligibility accumulate many matches.
    """
    params = dict(dimension=1, rho_bar=0.5, e_bar=1e-20)
    params.update(overrides)
    return Config(**params)


@dataclass(frozen=True)
class GaussianStreamSpec:
    inlier_mean: float = 0.0
    inlier_std: float = 0.1
    outlier_mean: float = 3.0
    outlier_std: float = 0.5
    outlier_fraction: float = 0.2
    iterations: int = 1000
    dimension: int = 1
    observations_per_frame: int = 2
    seed: int = 0

    def __post_init__(self):
        if not (self.inlier_std > 0 and self.outlier_std > 0):
            raise ValueError("standard deviations must be positive")
        if not (0.0 <= self.outlier_fraction < 1.0):
            raise ValueError("outlier_fraction must lie in [0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.observations_per_frame < 2:
            raise ValueError("observations_per_frame must be >= 2")

    @classmethod
    def standard(cls, preset: str, **overrides) -> "GaussianStreamSpec":
        return cls(outlier_mean=STANDARD_PRESETS[preset], **overrides)


def gen_gaussian_stream(spec: GaussianStreamSpec, start_index: int = 0) -> Iterator[Frame]:
    rng = np.random.default_rng(spec.seed)
    k, d = spec.observations_per_frame, spec.dimension
    for t in range(spec.iterations):
        is_out = rng.random(k) < spec.outlier_fraction
        inl = rng.normal(spec.inlier_mean, spec.inlier_std, size=(k, d))
        out = rng.normal(spec.outlier_mean, spec.outlier_std, size=(k, d))
        obs = np.where(is_out[:, None], out, inl)
        labels = [OUTLIER if o else INLIER for o in is_out]
        yield Frame(start_index + t, obs, labels)


def gen_two_identity_stream(
    frames: int,
    dimension: int = 64,
    separation: float = 4.0,
    spread: float = 1.0,
    seed: int = 0,
) -> Iterator[Frame]:
    """Stationary stream: every frame shows one draw from each of two identities.

    Both identities are isotropic Gaussians with RMS radius ``spread``;
    their centres are ``separation * spread`` apart.
    """
    rng = np.random.default_rng(seed)
    sigma = spread / np.sqrt(dimension)
    axis = rng.normal(size=dimension)
    axis *= separation * spread / (2 * np.linalg.norm(axis))
    centres = np.vstack([-axis, axis])
    for t in range(frames):
        obs = centres + rng.normal(0.0, sigma, size=(2, dimension))
        yield Frame(t, obs, ["a", "b"])


def gen_drift_stream(
    frames: int,
    dimension: int = 8,
    step: float = 0.01,
    gap: float = 10.0,
    seed: int = 0,
) -> Iterator[Frame]:
    """One subject random-walking with step size ``step`` next to a static
    second subject ``gap`` away. Labels are ``"drift"`` and ``"static"``."""
    rng = np.random.default_rng(seed)
    pos = np.zeros(dimension)
    anchor = np.zeros(dimension)
    anchor[0] = gap
    for t in range(frames):
        if t:
            move = rng.normal(size=dimension)
            pos = pos + step * move / np.linalg.norm(move)
        yield Frame(t, np.vstack([pos, anchor]), ["drift", "static"])


def kde_mode(values: np.ndarray, grid_points: int = 2048) -> float:
    """Mode of a Gaussian kernel density estimate (Silverman bandwidth)."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return float("nan")
    std = values.std()
    if len(values) == 1 or std == 0.0:
        return float(np.median(values))
    bw = 1.06 * std * len(values) ** (-1 / 5)
    grid = np.linspace(values.min() - 3 * bw, values.max() + 3 * bw, grid_points)
    density = np.exp(-0.5 * ((grid[:, None] - values[None, :]) / bw) ** 2).sum(axis=1)
    return float(grid[np.argmax(density)])


@dataclass
class StabilityReport:
    """What the memory learned from a two-Gaussian stream.

    ``histogram_counts`` covers every live element, so its mass equals the
    memory size. The learned inlier distribution (``learned_counts``,
    ``mode``, ``std``) is the union of the subject identities: those whose
    live elements mostly came from inlier draws. The learner can split one
    subject over several identities (two inliers in the same frame are
    indistinguishable from two people), so a single identity under-covers
    it; the largest identity is reported separately as ``dominant_*``.
    ``scatter`` rows are ``(value, eligibility, identity)`` on coordinate 0.
    """

    histogram_edges: list[float]
    histogram_counts: list[int]
    learned_counts: list[int]
    scatter: list[tuple[float, float, int]]
    subject_identities: list[int]
    mode: float
    std: float
    robust_std: float
    dominant_identity: Optional[int]
    dominant_mode: float
    dominant_std: float
    inlier_mean: float
    inlier_std: float
    memory_size: int
    identity_count: int

    @property
    def learned_size(self) -> int:
        return int(sum(self.learned_counts))

    def summary(self) -> dict:
        return {
            "learned_mode": self.mode,
            "learned_std": self.std,
            "learned_robust_std": self.robust_std,
            "learned_size": self.learned_size,
            "subject_identities": self.subject_identities,
            "dominant_identity": self.dominant_identity,
            "dominant_mode": self.dominant_mode,
            "dominant_std": self.dominant_std,
            "inlier_mean": self.inlier_mean,
            "inlier_std": self.inlier_std,
            "memory_size": self.memory_size,
            "identity_count": self.identity_count,
        }


def stability_experiment(
    spec: GaussianStreamSpec,
    config: Config,
    workers: int = 1,
    bin_width: Optional[float] = None,
) -> StabilityReport:
    if config.dimension != spec.dimension:
        raise ValueError("config and stream dimensions differ")
    engine = Engine(config, workers=workers)
    # ground-truth label of every live element, kept outside the learner
    origin: list[str] = []
    for frame in gen_gaussian_stream(spec):
        report = engine.observe(frame)
        origin = track_labels(origin, report, frame.labels)
    return summarize_memory(engine.memory, spec, origin, bin_width)


def track_labels(origin: list, report: FrameReport, labels: Sequence) -> list:
    """Mirror the engine's prune-then-append on a parallel list of labels."""
    removed = set(report.prune_report.removed_by_eligibility)
    removed.update(report.prune_report.removed_by_staleness)
    kept = [lab for i, lab in enumerate(origin) if i not in removed]
    return kept + list(labels)


def _spread(values: np.ndarray) -> tuple[float, float]:
    if len(values) == 0:
        return float("nan"), float("nan")
    mad = np.median(np.abs(values - np.median(values)))
    return float(values.std()), float(1.4826 * mad)


def summarize_memory(
    memory: Memory,
    spec: GaussianStreamSpec,
    origin: Sequence[str],
    bin_width: Optional[float] = None,
) -> StabilityReport:
    if len(origin) != len(memory):
        raise ValueError("one origin label per memory element is required")
    values = memory.descriptors[:, 0]
    width = bin_width if bin_width is not None else spec.inlier_std / 2
    if len(values):
        lo = np.floor(values.min() / width) * width
        hi = np.ceil(values.max() / width) * width
        edges = np.arange(lo, hi + width * 1.5, width)
    else:
        edges = np.array([spec.inlier_mean - width, spec.inlier_mean + width])
    counts, edges = np.histogram(values, bins=edges)

    labels = np.asarray(origin, dtype=object)
    ident_counts = Counter(memory.identities.tolist())
    subject = sorted(
        i for i in ident_counts
        if (labels[memory.identities == i] == INLIER).mean() > 0.5
    )
    learned = values[np.isin(memory.identities, subject)]
    learned_counts, _ = np.histogram(learned, bins=edges)
    std, robust = _spread(learned)

    dominant = min(ident_counts, key=lambda i: (-ident_counts[i], i)) if ident_counts else None
    dom_values = values[memory.identities == dominant]

    return StabilityReport(
        histogram_edges=edges.tolist(),
        histogram_counts=counts.tolist(),
        learned_counts=learned_counts.tolist(),
        scatter=[
            (float(v), float(e), int(i))
            for v, e, i in zip(values, memory.eligibility, memory.identities)
        ],
        subject_identities=subject,
        mode=kde_mode(learned),
        std=std,
        robust_std=robust,
        dominant_identity=dominant,
        dominant_mode=kde_mode(dom_values),
        dominant_std=_spread(dom_values)[0],
        inlier_mean=spec.inlier_mean,
        inlier_std=spec.inlier_std,
        memory_size=len(memory),
        identity_count=len(ident_counts),
    )


TARGET = "target"


@dataclass
class PrCurvePoint:
    pass_number: int
    precision: float
    recall: float
    true_positives: int
    false_positives: int
    false_negatives: int
    # set when there were no positive predictions and precision defaulted to 1
    precision_undefined: bool = False

    def to_dict(self) -> dict:
        return {
            "pass": self.pass_number,
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.true_positives,
            "fp": self.false_positives,
            "fn": self.false_negatives,
            "precision_undefined": self.precision_undefined,
        }


@dataclass
class IdentityBenchmark:
    """Labeled descriptor sets for the multipass experiment.

    ``video`` is a temporally coherent stream of the target (with one
    distractor per frame) used to bootstrap the target identity; ``subset_a``
    and ``subset_b`` are independent "image" sets, each image holding two
    descriptors (the target plus a distractor, or two distractors).
    """

    video: list[Frame]
    subset_a: list[Frame]
    subset_b: list[Frame]
    dimension: int
    target_label: str = TARGET


def make_identity_benchmark(
    dimension: int = 64,
    separation: float = 6.0,
    spread: float = 1.0,
    video_offset: float = 3.0,
    distractors: int = 20,
    video_frames: int = 200,
    video_step: float = 0.05,
    images: int = 400,
    target_fraction: float = 0.5,
    seed: int = 0,
) -> IdentityBenchmark:
    """Build the synthetic stand-in for the video + two image subsets setup.

    Every identity is an isotropic Gaussian whose RMS distance from its
    centre is ``spread`` (per-coordinate std ``spread / sqrt(dimension)``).
    Distractor centres sit ``separation * spread`` from the target centre.
    The video shows the target shifted by ``video_offset * spread`` (video
    frames look different from still images), drifting slowly.
    """
    rng = np.random.default_rng(seed)
    d = dimension
    sigma = spread / np.sqrt(d)

    def unit(n):
        v = rng.normal(size=(n, d))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    centres = unit(distractors) * separation * spread
    names = [f"distractor{j}" for j in range(distractors)]

    def distractor_sample(j):
        return centres[j] + rng.normal(0.0, sigma, size=d)

    video = []
    pos = unit(1)[0] * video_offset * spread
    for t in range(video_frames):
        pos = pos + rng.normal(0.0, video_step * sigma, size=d)
        j = int(rng.integers(distractors))
        obs = np.vstack([pos + rng.normal(0.0, 0.1 * sigma, size=d), distractor_sample(j)])
        video.append(Frame(t, obs, [TARGET, names[j]]))

    def image_set(n):
        frames = []
        for t in range(n):
            if rng.random() < target_fraction:
                j = int(rng.integers(distractors))
                obs = np.vstack([rng.normal(0.0, sigma, size=d), distractor_sample(j)])
                labels = [TARGET, names[j]]
            else:
                j, k = rng.choice(distractors, size=2, replace=False)
                obs = np.vstack([distractor_sample(int(j)), distractor_sample(int(k))])
                labels = [names[j], names[k]]
            order = rng.permutation(2)
            frames.append(Frame(t, obs[order], [labels[i] for i in order]))
        return frames

    return IdentityBenchmark(video, image_set(images), image_set(images), d)


def reindexed(frames: Iterable[Frame], start: int) -> Iterator[Frame]:
    for k, f in enumerate(frames):
        yield Frame(start + k, f.observations, f.labels)


class LabelTally:
    """Counts which identities the learner gave to each ground-truth label."""

    def __init__(self):
        self.counts: dict[str, Counter] = {}

    def update(self, report: FrameReport, labels: Optional[Sequence]) -> None:
        if labels is None:
            return
        for ident, lab in zip(report.assignments, labels):
            self.counts.setdefault(lab, Counter())[ident] += 1

    def majority(self, label: str) -> Optional[int]:
        c = self.counts.get(label)
        if not c:
            return None
        return min(c, key=lambda i: (-c[i], i))


def train(engine: Engine, frames: Iterable[Frame], tally: Optional[LabelTally] = None) -> list[FrameReport]:
    reports = []
    for frame in reindexed(frames, engine.next_frame_index()):
        report = engine.observe(frame)
        if tally is not None:
            tally.update(report, frame.labels)
        reports.append(report)
    return reports


def multipass_train(
    engine: Engine,
    subset_a: Sequence[Frame],
    passes: int,
    tally: Optional[LabelTally] = None,
) -> Engine:
    """Present ``subset_a`` to the engine ``passes`` times, re-indexing frames monotonically."""
    if passes < 1:
        raise ValueError("passes must be >= 1")
    for _ in range(passes):
        train(engine, subset_a, tally)
    return engine


def predict_identities(engine: Engine, frame: Frame) -> list[Optional[int]]:
    """Identity each observation would receive, without touching the memory."""
    frame = prepare_observations(frame, engine.config)
    match_set = match_frame(engine.memory, frame, engine.config, engine.workers)
    result = assign_identities(match_set, engine.memory, frame)
    return [a.identity for a in result.assignments]


def pr_eval(
    engine: Engine,
    subset_b: Sequence[Frame],
    target: Optional[int],
    target_label: str = TARGET,
    pass_number: int = 0,
) -> PrCurvePoint:
    tp = fp = fn = 0
    for frame in subset_b:
        if frame.labels is None:
            raise ValueError(f"frame {frame.index} of the evaluation set has no labels")
        predicted = predict_identities(engine, frame) if target is not None else [None] * len(frame)
        for ident, lab in zip(predicted, frame.labels):
            positive = target is not None and ident == target
            if positive and lab == target_label:
                tp += 1
            elif positive:
                fp += 1
            elif lab == target_label:
                fn += 1
    undefined = tp + fp == 0
    precision = 1.0 if undefined else tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn else 0.0
    return PrCurvePoint(pass_number, precision, recall, tp, fp, fn, undefined)


def multipass_eval(
    config: Config,
    subset_a: Sequence[Frame],
    subset_b: Sequence[Frame],
    passes: int = 3,
    video: Optional[Sequence[Frame]] = None,
    target_label: str = TARGET,
    workers: int = 1,
) -> list[PrCurvePoint]:
    """Alternate one training pass over A with read-only scoring on B.

    With a ``video`` the learner is bootstrapped on it first and the target
    identity is frozen as the one it gave most often to ``target_label``.
    Without one, the target is re-derived after each pass from everything
    the learner has labelled so far.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    engine = Engine(config, workers=workers)
    tally = LabelTally()
    target = None
    if video is not None:
        train(engine, video, tally)
        target = tally.majority(target_label)
    points = []
    for p in range(1, passes + 1):
        multipass_train(engine, subset_a, 1, tally)
        if video is None:
            target = tally.majority(target_label)
        points.append(pr_eval(engine, subset_b, target, target_label, p))
    return points


def multipass_experiment(
    config: Config,
    bench: IdentityBenchmark,
    passes: int = 3,
    workers: int = 1,
    pretrain: bool = True,
) -> list[PrCurvePoint]:
    video = bench.video if pretrain else None
    return multipass_eval(
        config, bench.subset_a, bench.subset_b, passes, video, bench.target_label, workers
    )
