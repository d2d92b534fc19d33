"""Command-line entry point.

Stream files are JSON Lines. The first line is a header
``{"format": "renn-stream", "version": 1, "dimension": D}``; every following
line is one frame ``{"frame": int, "observations": [[...], ...], "labels": [...]}``
with ``labels`` optional. Reports are JSON Lines as well, one object per
frame (``run``) or per pass (``eval``).

Every config flag can also be set through an environment variable named
``RENN_`` plus the flag name in upper case with dashes turned into
underscores (``--rho-bar`` -> ``RENN_RHO_BAR``). A flag beats the
environment, which beats a snapshot's stored config, which beats the
built-in default.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Iterator, Optional, Sequence

from . import synth
from .core import Config, ConfigError, Frame, ReNNError, StreamOrderError
from .engine import Engine, restore, stats

STREAM_FORMAT = "renn-stream"
STREAM_VERSION = 1
ENV_PREFIX = "RENN_"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class StreamFormatError(ReNNError, ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_float(text: str) -> Optional[float]:
    return None if str(text).strip().lower() in ("", "none") else float(text)


# flag name -> (Config field, value parser)
CONFIG_FLAGS = {
    "rho-bar": ("rho_bar", float),
    "e-bar": ("e_bar", float),
    "alpha": ("alpha", float),
    "max-stale": ("max_stale", int),
    "abs-gate": ("abs_gate", _parse_optional_float),
    "normalize": ("normalize", _parse_bool),
    "seed": ("seed", int),
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("learner config")
    for flag, (name, conv) in CONFIG_FLAGS.items():
        group.add_argument(f"--{flag}", dest=name, type=str, default=None, metavar=name.upper())
    parser.add_argument("--workers", type=int, default=None, help="search threads (outputs do not depend on it)")


def _env_name(flag: str) -> str:
    return ENV_PREFIX + flag.upper().replace("-", "_")


def resolve_config(
    args: argparse.Namespace,
    dimension: int,
    base: Optional[dict] = None,
    env: Optional[dict] = None,
) -> Config:
    """Merge flag > environment > ``base`` (snapshot or preset) > defaults."""
    env = os.environ if env is None else env
    values = dict(base or {})
    values["dimension"] = dimension
    for flag, (name, conv) in CONFIG_FLAGS.items():
        raw = getattr(args, name, None)
        source = f"--{flag}"
        if raw is None and _env_name(flag) in env:
            raw, source = env[_env_name(flag)], _env_name(flag)
        if raw is None:
            continue
        try:
            values[name] = conv(raw)
        except ValueError:
            raise UsageError(f"{source}: invalid value {raw!r}") from None
    try:
        return Config.from_dict(values)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def resolve_workers(args: argparse.Namespace, env: Optional[dict] = None) -> int:
    env = os.environ if env is None else env
    raw = args.workers if args.workers is not None else env.get(_env_name("workers"), 1)
    try:
        workers = int(raw)
    except ValueError:
        raise UsageError(f"workers: invalid value {raw!r}") from None
    if workers < 1:
        raise UsageError("workers must be >= 1")
    return workers


# ---- stream files ----------------------------------------------------------


def _open_text(path: str, mode: str):
    if path == "-":
        return sys.stdin if "r" in mode else sys.stdout
    return open(path, mode, encoding="utf-8", newline="\n")


def read_stream_header(lines: Iterator[str]) -> int:
    try:
        header = json.loads(next(lines))
    except StopIteration:
        raise StreamFormatError("line 1: missing stream header") from None
    except json.JSONDecodeError as exc:
        raise StreamFormatError(f"line 1: invalid JSON ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != STREAM_FORMAT:
        raise StreamFormatError(f"line 1: expected a {STREAM_FORMAT!r} header")
    if header.get("version") != STREAM_VERSION:
        raise StreamFormatError(f"line 1: unsupported stream version {header.get('version')!r}")
    dim = header.get("dimension")
    if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
        raise StreamFormatError(f"line 1: dimension must be a positive integer, got {dim!r}")
    return dim


def parse_frame_line(line: str, lineno: int, dimension: int) -> Frame:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise StreamFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict) or "frame" not in rec or "observations" not in rec:
        raise StreamFormatError(f"line {lineno}: expected an object with 'frame' and 'observations'")
    index, obs, labels = rec["frame"], rec["observations"], rec.get("labels")
    if isinstance(index, bool) or not isinstance(index, int) or index < 0:
        raise StreamFormatError(f"line {lineno}: frame must be a non-negative integer")
    if not isinstance(obs, list) or any(not isinstance(o, list) or len(o) != dimension for o in obs):
        raise StreamFormatError(f"line {lineno}: every observation must be a list of {dimension} numbers")
    if labels is not None and (not isinstance(labels, list) or not all(isinstance(x, str) for x in labels)):
        raise StreamFormatError(f"line {lineno}: labels must be a list of strings")
    try:
        return Frame(index, obs, labels)
    except (ValueError, TypeError) as exc:
        raise StreamFormatError(f"line {lineno}: {exc}") from None


def iter_stream(path: str) -> tuple[int, Iterator[Frame]]:
    """Open a stream file; return its dimension and a lazy frame iterator.

    Blank lines are skipped. Errors name the offending line.
    """
    fh = _open_text(path, "r")
    lines = iter(fh)
    try:
        dimension = read_stream_header(lines)
    except StreamFormatError:
        if fh is not sys.stdin:
            fh.close()
        raise

    def frames() -> Iterator[Frame]:
        last = None
        try:
            for lineno, line in enumerate(lines, start=2):
                if not line.strip():
                    continue
                frame = parse_frame_line(line, lineno, dimension)
                if last is not None and frame.index <= last:
                    raise StreamOrderError(
                        f"line {lineno}: frame {frame.index} does not follow frame {last}"
                    )
                last = frame.index
                yield frame
        finally:
            if fh is not sys.stdin:
                fh.close()

    return dimension, frames()


def load_stream(path: str) -> tuple[int, list[Frame]]:
    dimension, frames = iter_stream(path)
    return dimension, list(frames)


def frame_record(frame: Frame) -> dict:
    rec = {"frame": frame.index, "observations": frame.observations.tolist()}
    if frame.labels is not None:
        rec["labels"] = list(frame.labels)
    return rec


def write_stream(path: str, frames, dimension: int) -> int:
    n = 0
    fh = _open_text(path, "w")
    try:
        fh.write(_dumps({"format": STREAM_FORMAT, "version": STREAM_VERSION, "dimension": dimension}) + "\n")
        for frame in frames:
            fh.write(_dumps(frame_record(frame)) + "\n")
            n += 1
    finally:
        if fh is not sys.stdout:
            fh.close()
    return n


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---- commands --------------------------------------------------------------


def cmd_run(args) -> int:
    dimension, frames = iter_stream(args.stream)
    if args.snapshot_in:
        data = Path(args.snapshot_in).read_bytes()
        stored = restore(data)
        config = resolve_config(args, dimension, base=stored.config.to_dict())
        if stored.config.dimension != dimension:
            raise StreamFormatError(
                f"stream dimension {dimension} does not match snapshot dimension {stored.config.dimension}"
            )
        engine = Engine.restore(data, config, workers=resolve_workers(args))
    else:
        config = resolve_config(args, dimension)
        engine = Engine(config, workers=resolve_workers(args))

    out = _open_text(args.report, "w")
    try:
        for frame in frames:
            report = engine.observe(frame)
            out.write(_dumps(report.to_dict()) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.snapshot_out:
        Path(args.snapshot_out).write_bytes(engine.snapshot())
    return EXIT_OK


def _spec_from_args(args, preset: Optional[str]) -> synth.GaussianStreamSpec:
    fields = dict(
        inlier_mean=args.inlier_mean,
        inlier_std=args.inlier_std,
        outlier_std=args.outlier_std,
        outlier_fraction=args.outlier_fraction,
        iterations=args.iterations,
        observations_per_frame=args.observations_per_frame,
        seed=args.stream_seed,
    )
    if preset:
        fields["outlier_mean"] = synth.STANDARD_PRESETS[preset]
    elif args.outlier_mean is not None:
        fields["outlier_mean"] = args.outlier_mean
    try:
        return synth.GaussianStreamSpec(**fields)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_stability(outdir: Path, report: synth.StabilityReport, spec: synth.GaussianStreamSpec, config: Config):
    outdir.mkdir(parents=True, exist_ok=True)
    edges = report.histogram_edges
    with open(outdir / "histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count", "learned_count"])
        for k, (c, lc) in enumerate(zip(report.histogram_counts, report.learned_counts)):
            w.writerow([repr(edges[k]), repr(edges[k + 1]), c, lc])
    with open(outdir / "scatter.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "eligibility", "identity"])
        for v, e, i in report.scatter:
            w.writerow([repr(v), repr(e), i])
    # NaN (e.g. no subject identity survived) is written as null
    summary = {k: (None if isinstance(v, float) and v != v else v) for k, v in report.summary().items()}
    summary["spec"] = {k: getattr(spec, k) for k in spec.__dataclass_fields__}
    summary["config"] = config.to_dict()
    (outdir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def cmd_simulate(args) -> int:
    base = synth.stability_config().to_dict()
    config = resolve_config(args, 1, base=base)
    workers = resolve_workers(args)
    if args.outlier_mean is not None:
        if args.preset:
            raise UsageError("--outlier-mean and --preset are mutually exclusive")
        cases = [("custom", None)]
    else:
        names = args.preset or list(synth.STANDARD_PRESETS)
        cases = [(name, name) for name in names]
    root = Path(args.out)
    for name, preset in cases:
        spec = _spec_from_args(args, preset)
        report = synth.stability_experiment(spec, config, workers=workers)
        _write_stability(root / name, report, spec, config)
        print(f"{name}: mode={report.mode:.4f} std={report.std:.4f} memory={report.memory_size}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.passes < 1:
        raise UsageError("--passes must be >= 1")
    dim_a, subset_a = load_stream(args.subset_a)
    dim_b, subset_b = load_stream(args.subset_b)
    if any(f.labels is None for f in subset_b):
        raise UsageError(f"{args.subset_b}: every evaluation frame needs labels")
    if dim_a != dim_b:
        raise StreamFormatError(f"subset dimensions differ ({dim_a} vs {dim_b})")
    video = None
    if args.video:
        dim_v, video = load_stream(args.video)
        if dim_v != dim_a:
            raise StreamFormatError(f"video dimension {dim_v} does not match subsets ({dim_a})")
    config = resolve_config(args, dim_a)
    points = synth.multipass_eval(
        config, subset_a, subset_b, args.passes, video, args.target_label, resolve_workers(args)
    )
    out = _open_text(args.out, "w")
    try:
        for p in points:
            out.write(_dumps(p.to_dict()) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def format_stats(memory) -> str:
    s = stats(memory)
    cfg = memory.config
    lines = [
        f"elements        {s.size}",
        f"identities      {len(s.identity_counts)} (next id {memory.next_identity})",
        f"frame counter   {memory.frame_counter} ({memory.frames_observed} frames observed)",
        f"config          dimension={cfg.dimension} rho_bar={cfg.rho_bar} e_bar={cfg.e_bar} "
        f"alpha={cfg.alpha} max_stale={cfg.max_stale} abs_gate={cfg.abs_gate} normalize={cfg.normalize}",
        "per identity:",
    ]
    lines += [f"  {ident:>6}  {count}" for ident, count in s.identity_counts.items()]
    lines.append("eligibility histogram:")
    e = s.eligibility_edges
    lines += [_bin_line(e, k, c, ".2f") for k, c in enumerate(s.eligibility_counts)]
    lines.append("age histogram (frames since insertion):")
    a = s.age_edges
    lines += [_bin_line(a, k, c, ".1f") for k, c in enumerate(s.age_counts)]
    return "\n".join(lines)


def _bin_line(edges, k, count, fmt) -> str:
    # numpy histograms close the last bin on the right
    close = "]" if k == len(edges) - 2 else ")"
    return f"  [{edges[k]:{fmt}}, {edges[k + 1]:{fmt}}{close}  {count}"


def cmd_inspect(args) -> int:
    memory = restore(Path(args.snapshot).read_bytes())
    if args.json:
        print(_dumps(stats(memory).to_dict()))
    else:
        print(format_stats(memory))
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.kind == "benchmark":
        bench = synth.make_identity_benchmark(
            dimension=args.dimension or 64,
            separation=args.separation,
            video_offset=args.video_offset,
            images=args.frames or 400,
            seed=args.stream_seed,
        )
        root = Path(args.out)
        root.mkdir(parents=True, exist_ok=True)
        for name, frames in (("video", bench.video), ("subset_a", bench.subset_a), ("subset_b", bench.subset_b)):
            write_stream(str(root / f"{name}.jsonl"), frames, bench.dimension)
    elif args.kind == "gaussian":
        spec = _spec_from_args(args, args.preset[0] if args.preset else None)
        write_stream(args.out, synth.gen_gaussian_stream(spec), spec.dimension)
    else:
        dim = args.dimension or 64
        frames = synth.gen_two_identity_stream(args.frames or 2000, dim, args.separation, seed=args.stream_seed)
        write_stream(args.out, frames, dim)
    return EXIT_OK


def _add_stream_spec_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic stream")
    g.add_argument("--preset", action="append", choices=list(synth.STANDARD_PRESETS))
    g.add_argument("--outlier-mean", type=float, default=None)
    g.add_argument("--inlier-mean", type=float, default=0.0)
    g.add_argument("--inlier-std", type=float, default=0.1)
    g.add_argument("--outlier-std", type=float, default=0.5)
    g.add_argument("--outlier-fraction", type=float, default=0.2)
    g.add_argument("--iterations", type=int, default=1000)
    g.add_argument("--observations-per-frame", type=int, default=2)
    g.add_argument("--stream-seed", type=int, default=0, help="seed of the synthetic generator")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="renn-memory", description="Unsupervised identity memory over descriptor streams.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="stream frames through the learner")
    p.add_argument("stream", help="stream file ('-' for stdin)")
    p.add_argument("--report", default="-", help="per-frame report output (default stdout)")
    p.add_argument("--snapshot-in")
    p.add_argument("--snapshot-out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="two-Gaussian stability experiment")
    p.add_argument("--out", required=True, help="output directory (one subdirectory per case)")
    _add_stream_spec_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="multipass precision/recall")
    p.add_argument("subset_a")
    p.add_argument("subset_b")
    p.add_argument("--passes", type=int, default=3)
    p.add_argument("--video", help="optional bootstrap stream; fixes the target identity")
    p.add_argument("--target-label", default=synth.TARGET)
    p.add_argument("--out", default="-")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarise a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gen", help="write a synthetic stream file")
    p.add_argument("kind", choices=["benchmark", "gaussian", "two-identity"])
    p.add_argument("--out", required=True, help="file, or directory for 'benchmark'")
    p.add_argument("--dimension", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--separation", type=float, default=None)
    p.add_argument("--video-offset", type=float, default=3.0)
    _add_stream_spec_flags(p)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gen" and args.separation is None:
            args.separation = 6.0 if args.kind == "benchmark" else 4.0
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ReNNError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
