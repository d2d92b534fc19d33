import json
import os
import subprocess
import sys

import pytest

from renn_memory.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, load_stream, main, write_stream
from renn_memory.engine import restore
from renn_memory.synth import gen_two_identity_stream

HEADER = {"format": "renn-stream", "version": 1, "dimension": 1}


def write_lines(path, records, header=HEADER):
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps(header) + "\n")
        for rec in records:
            fh.write((rec if isinstance(rec, str) else json.dumps(rec)) + "\n")
    return str(path)


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@pytest.fixture
def toy(tmp_path):
    return write_lines(
        tmp_path / "toy.jsonl",
        [
            {"frame": 0, "observations": [[0.0], [5.0]]},
            {"frame": 1, "observations": [[0.1], [5.2]]},
        ],
    )


@pytest.fixture
def stream64(tmp_path):
    path = tmp_path / "two.jsonl"
    write_stream(str(path), gen_two_identity_stream(60, dimension=8, separation=2.0), 8)
    return str(path)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("RENN_"):
            monkeypatch.delenv(key)


class TestRun:
    def test_toy_smoke(self, tmp_path, toy):
        rc = main(["run", toy, "--report", str(tmp_path / "r.jsonl"), "--snapshot-out", str(tmp_path / "s.bin")])
        assert rc == EXIT_OK
        reports = read_jsonl(tmp_path / "r.jsonl")
        assert [r["frame"] for r in reports] == [0, 1]
        memory = restore((tmp_path / "s.bin").read_bytes())
        assert len(memory) == reports[-1]["memory_size"]
        # frame 1 re-identifies both subjects and replaces them
        assert reports[1]["assignments"] == [0, 1] and len(memory) == 2

    def test_report_to_stdout(self, toy, capsys):
        assert main(["run", toy]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2 and json.loads(lines[0])["frame"] == 0

    def test_invalid_flag_value(self, toy, capsys):
        assert main(["run", toy, "--rho-bar", "1.5"]) == EXIT_USAGE
        assert "rho_bar" in capsys.readouterr().err
        assert main(["run", toy, "--max-stale", "soon"]) == EXIT_USAGE

    def test_unknown_flag_and_missing_command(self, toy):
        assert main(["run", toy, "--bogus"]) == EXIT_USAGE
        assert main([]) == EXIT_USAGE

    def test_malformed_line_names_line(self, tmp_path, capsys):
        path = write_lines(tmp_path / "bad.jsonl", [{"frame": 0, "observations": [[0.0], [1.0]]}, "{not json"])
        assert main(["run", path]) == EXIT_DATA
        assert "line 3" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "record",
        [
            {"frame": 0, "observations": [[0.0, 1.0]]},
            {"frame": -1, "observations": [[0.0]]},
            {"frame": 0, "observations": [[0.0]], "labels": ["a", "b"]},
            {"frame": 0},
            [1, 2],
        ],
    )
    def test_bad_records(self, tmp_path, record):
        assert main(["run", write_lines(tmp_path / "bad.jsonl", [record])]) == EXIT_DATA

    def test_non_finite_rejected(self, tmp_path):
        path = write_lines(tmp_path / "nan.jsonl", ['{"frame": 0, "observations": [[NaN], [1.0]]}'])
        assert main(["run", path]) == EXIT_DATA

    @pytest.mark.parametrize("header", [None, {"format": "other"}, {**HEADER, "version": 9}, {**HEADER, "dimension": 0}])
    def test_bad_header(self, tmp_path, header):
        path = write_lines(tmp_path / "h.jsonl", [], header=header)
        assert main(["run", path]) == EXIT_DATA

    def test_stream_order(self, tmp_path, capsys):
        path = write_lines(
            tmp_path / "o.jsonl",
            [{"frame": 3, "observations": [[0.0], [1.0]]}, {"frame": 3, "observations": [[0.0], [1.0]]}],
        )
        assert main(["run", path]) == EXIT_DATA
        assert "does not follow" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.jsonl")]) == EXIT_DATA

    def test_split_resume_matches_single_run(self, tmp_path, stream64):
        _, frames = load_stream(stream64)
        head, tail = tmp_path / "head.jsonl", tmp_path / "tail.jsonl"
        write_stream(str(head), frames[:25], 8)
        write_stream(str(tail), frames[25:], 8)

        main(["run", stream64, "--report", str(tmp_path / "full.jsonl"), "--snapshot-out", str(tmp_path / "full.bin")])
        main(["run", str(head), "--report", str(tmp_path / "a.jsonl"), "--snapshot-out", str(tmp_path / "mid.bin")])
        rc = main([
            "run", str(tail), "--snapshot-in", str(tmp_path / "mid.bin"),
            "--report", str(tmp_path / "b.jsonl"), "--snapshot-out", str(tmp_path / "end.bin"),
        ])
        assert rc == EXIT_OK
        assert read_jsonl(tmp_path / "a.jsonl") + read_jsonl(tmp_path / "b.jsonl") == read_jsonl(tmp_path / "full.jsonl")
        assert (tmp_path / "end.bin").read_bytes() == (tmp_path / "full.bin").read_bytes()

    def test_resume_rejects_replayed_frames(self, tmp_path, stream64):
        snap = str(tmp_path / "s.bin")
        main(["run", stream64, "--report", str(tmp_path / "r.jsonl"), "--snapshot-out", snap])
        assert main(["run", stream64, "--snapshot-in", snap, "--report", str(tmp_path / "r2.jsonl")]) == EXIT_DATA

    def test_resume_with_conflicting_config(self, tmp_path, stream64, toy):
        snap = str(tmp_path / "s.bin")
        _, frames = load_stream(stream64)
        write_stream(str(tmp_path / "head.jsonl"), frames[:10], 8)
        write_stream(str(tmp_path / "tail.jsonl"), frames[10:], 8)
        main(["run", str(tmp_path / "head.jsonl"), "--rho-bar", "0.6", "--report", str(tmp_path / "r.jsonl"), "--snapshot-out", snap])
        out = str(tmp_path / "r2.jsonl")
        # the stored config is picked up when no flag overrides it
        assert main(["run", str(tmp_path / "tail.jsonl"), "--snapshot-in", snap, "--report", out]) == EXIT_OK
        assert main(["run", str(tmp_path / "tail.jsonl"), "--snapshot-in", snap, "--rho-bar", "0.7", "--report", out]) == EXIT_DATA
        # wrong stream dimension for this snapshot
        assert main(["run", toy, "--snapshot-in", snap, "--report", out]) == EXIT_DATA

    def test_environment_and_flag_precedence(self, tmp_path, toy, monkeypatch):
        snap = tmp_path / "s.bin"
        monkeypatch.setenv("RENN_RHO_BAR", "0.6")
        monkeypatch.setenv("RENN_MAX_STALE", "12")
        monkeypatch.setenv("RENN_NORMALIZE", "no")
        main(["run", toy, "--report", str(tmp_path / "r.jsonl"), "--snapshot-out", str(snap), "--max-stale", "40"])
        cfg = restore(snap.read_bytes()).config
        assert (cfg.rho_bar, cfg.max_stale, cfg.normalize) == (0.6, 40, False)
        monkeypatch.setenv("RENN_E_BAR", "lots")
        assert main(["run", toy]) == EXIT_USAGE

    def test_abs_gate_flag(self, tmp_path, toy):
        snap = tmp_path / "s.bin"
        main(["run", toy, "--abs-gate", "0.25", "--report", str(tmp_path / "r.jsonl"), "--snapshot-out", str(snap)])
        assert restore(snap.read_bytes()).config.abs_gate == 0.25

    def test_workers_do_not_change_output(self, tmp_path, stream64):
        outs = []
        for w in ("1", "4"):
            rep, snap = tmp_path / f"r{w}.jsonl", tmp_path / f"s{w}.bin"
            assert main(["run", stream64, "--workers", w, "--report", str(rep), "--snapshot-out", str(snap)]) == 0
            outs.append((rep.read_bytes(), snap.read_bytes()))
        assert outs[0] == outs[1]
        assert main(["run", stream64, "--workers", "0"]) == EXIT_USAGE


class TestSimulate:
    def test_three_presets(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path / "sim"), "--iterations", "200"]) == EXIT_OK
        dirs = sorted(p.name for p in (tmp_path / "sim").iterdir())
        assert dirs == ["medium", "overlapping", "separated"]
        for d in dirs:
            files = sorted(p.name for p in (tmp_path / "sim" / d).iterdir())
            assert files == ["histogram.csv", "scatter.csv", "summary.json"]
            summary = json.loads((tmp_path / "sim" / d / "summary.json").read_text())
            counts = [int(line.split(",")[2]) for line in (tmp_path / "sim" / d / "histogram.csv").read_text().splitlines()[1:]]
            assert sum(counts) == summary["memory_size"]

    def test_seeded_outputs_are_byte_identical(self, tmp_path):
        for run in ("a", "b"):
            main(["simulate", "--out", str(tmp_path / run), "--preset", "medium", "--iterations", "150", "--stream-seed", "3"])
        for name in ("histogram.csv", "scatter.csv", "summary.json"):
            assert (tmp_path / "a" / "medium" / name).read_bytes() == (tmp_path / "b" / "medium" / name).read_bytes()

    def test_single_iteration(self, tmp_path):
        main(["simulate", "--out", str(tmp_path), "--preset", "separated", "--iterations", "1", "--observations-per-frame", "3"])
        summary = json.loads((tmp_path / "separated" / "summary.json").read_text())
        assert summary["memory_size"] == 3

    def test_custom_outlier_mean(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--outlier-mean", "2.0", "--iterations", "50"]) == EXIT_OK
        assert (tmp_path / "custom" / "summary.json").exists()
        assert main(["simulate", "--out", str(tmp_path), "--outlier-mean", "2.0", "--preset", "medium"]) == EXIT_USAGE

    def test_bad_spec(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--iterations", "0"]) == EXIT_USAGE
        assert main(["simulate", "--out", str(tmp_path), "--preset", "nope"]) == EXIT_USAGE


class TestEval:
    @pytest.fixture
    def bench(self, tmp_path):
        assert main(["gen", "benchmark", "--out", str(tmp_path / "b"), "--separation", "5", "--frames", "200"]) == 0
        return tmp_path / "b"

    def test_three_passes(self, tmp_path, bench):
        out = tmp_path / "pr.jsonl"
        rc = main([
            "eval", str(bench / "subset_a.jsonl"), str(bench / "subset_b.jsonl"),
            "--video", str(bench / "video.jsonl"), "--passes", "3", "--out", str(out),
        ])
        assert rc == EXIT_OK
        rows = read_jsonl(out)
        assert [r["pass"] for r in rows] == [1, 2, 3]
        recalls = [r["recall"] for r in rows]
        assert recalls == sorted(recalls)
        assert all(r["precision"] >= 0.9 for r in rows)

    def test_unlabeled_subset_b(self, tmp_path, bench):
        path = write_lines(tmp_path / "b.jsonl", [{"frame": 0, "observations": [[0.0], [1.0]]}])
        a = write_lines(tmp_path / "a.jsonl", [{"frame": 0, "observations": [[0.0], [1.0]], "labels": ["x", "y"]}])
        assert main(["eval", a, path]) == EXIT_USAGE

    def test_empty_subset_a(self, tmp_path, bench, capsys):
        empty = write_lines(tmp_path / "empty.jsonl", [], header={**HEADER, "dimension": 64})
        assert main(["eval", empty, str(bench / "subset_b.jsonl"), "--passes", "1"]) == EXIT_OK
        (row,) = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert row["recall"] == 0.0 and row["pass"] == 1

    def test_dimension_mismatch(self, tmp_path, bench):
        a = write_lines(tmp_path / "a.jsonl", [])
        assert main(["eval", a, str(bench / "subset_b.jsonl")]) == EXIT_DATA

    def test_bad_passes(self, bench):
        assert main(["eval", str(bench / "subset_a.jsonl"), str(bench / "subset_b.jsonl"), "--passes", "0"]) == EXIT_USAGE


class TestInspect:
    def test_prints_stats_and_is_read_only(self, tmp_path, stream64, capsys):
        snap = tmp_path / "s.bin"
        main(["run", stream64, "--report", str(tmp_path / "r.jsonl"), "--snapshot-out", str(snap)])
        before = snap.read_bytes()
        capsys.readouterr()
        assert main(["inspect", str(snap)]) == EXIT_OK
        text = capsys.readouterr().out
        assert "elements" in text and "eligibility histogram" in text
        assert main(["inspect", str(snap), "--json"]) == EXIT_OK
        stats = json.loads(capsys.readouterr().out)
        assert stats["size"] == len(restore(before))
        assert snap.read_bytes() == before

    def test_corrupt_snapshot(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"not a snapshot")
        assert main(["inspect", str(bad)]) == EXIT_DATA


class TestGen:
    def test_streams_round_trip(self, tmp_path):
        assert main(["gen", "two-identity", "--out", str(tmp_path / "t.jsonl"), "--frames", "5", "--dimension", "3"]) == 0
        dim, frames = load_stream(str(tmp_path / "t.jsonl"))
        assert dim == 3 and len(frames) == 5
        assert main(["gen", "gaussian", "--out", str(tmp_path / "g.jsonl"), "--iterations", "7"]) == 0
        dim, frames = load_stream(str(tmp_path / "g.jsonl"))
        assert dim == 1 and len(frames) == 7 and frames[0].labels is not None


def test_console_script_runs(tmp_path, toy):
    proc = subprocess.run(
        [sys.executable, "-m", "renn_memory.cli", "run", toy, "--rho-bar", "2"],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_USAGE and "usage error" in proc.stderr
