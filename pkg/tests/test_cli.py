import hashlib
import json
from pathlib import Path

import pytest

from castline import cli


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


def _tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    assert run_cli(
        "synth", "--out", out, "--seed", 7, "--characters", 4, "--episodes", 2,
        "--segments", 25,
    ) == 0
    return out / "series.yaml"


class TestExitCodes:
    def test_usage_error_is_one(self, capsys):
        assert run_cli("exemplars") == 1  # missing required --config and --out

    def test_unknown_subcommand_is_one(self):
        assert run_cli("frobnicate") == 1

    def test_missing_input_is_two(self, tmp_path, capsys):
        assert run_cli("exemplars", "--config", tmp_path / "nope.yaml", "--out", tmp_path) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_feature_file_named(self, corpus, tmp_path, capsys):
        # break the corpus copy by removing a voice file
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(corpus.parent, broken)
        victim = broken / "ep01" / "voice_embeddings.ndjson"
        victim.unlink()
        code = run_cli("run", "--config", broken / "series.yaml", "--out", tmp_path / "o")
        assert code == 2
        assert "voice_embeddings.ndjson" in capsys.readouterr().err

    def test_ok_is_zero(self, corpus, tmp_path):
        assert run_cli("validate", "--config", corpus) == 0


class TestValidate:
    def test_reports_counts(self, corpus, capsys):
        assert run_cli("validate", "--config", corpus) == 0
        out = capsys.readouterr().out
        assert "ep01: OK" in out and "ep02: OK" in out

    def test_rejects_corrupted_file(self, corpus, tmp_path, capsys):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(corpus.parent, broken)
        words = broken / "ep01" / "words.ndjson"
        lines = words.read_text().splitlines()
        record = json.loads(lines[0])
        record["e"] = record["s"] - 1.0
        lines[0] = json.dumps(record)
        words.write_text("".join(l + "\n" for l in lines))
        assert run_cli("validate", "--config", broken / "series.yaml") == 2
        assert "words.ndjson:1" in capsys.readouterr().err


class TestPipeline:
    def test_run_then_individual_commands_match(self, corpus, tmp_path):
        run_out = tmp_path / "run"
        assert run_cli("run", "--config", corpus, "--out", run_out) == 0

        step_out = tmp_path / "steps"
        assert run_cli("exemplars", "--config", corpus, "--out", step_out) == 0
        assert run_cli(
            "assign", "--config", corpus, "--exemplars", step_out / "exemplars.ndjson",
            "--out", step_out,
        ) == 0
        assert run_cli(
            "emit", "--config", corpus, "--assignments", step_out / "assignments.ndjson",
            "--out", step_out, "--format", "srt",
        ) == 0
        assert run_cli(
            "eval", "--config", corpus, "--assignments", step_out / "assignments.ndjson",
            "--out", step_out,
        ) == 0
        assert _tree_digest(run_out) == _tree_digest(step_out)

    def test_run_idempotent(self, corpus, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("run", "--config", corpus, "--out", a) == 0
        assert run_cli("run", "--config", corpus, "--out", b) == 0
        assert _tree_digest(a) == _tree_digest(b)

    def test_run_emits_expected_files(self, corpus, tmp_path):
        out = tmp_path / "out"
        assert run_cli("run", "--config", corpus, "--out", out) == 0
        for name in (
            "exemplars.ndjson", "yield.txt", "yield.tsv", "yield.png",
            "assignments.ndjson", "report.txt", "report.tsv",
            "per_character.tsv", "per_character.png",
        ):
            assert (out / name).exists(), name
        assert (out / "subtitles" / "ep01.srt").exists()
        assert (out / "subtitles" / "ep02.srt").exists()

    def test_vtt_format(self, corpus, tmp_path):
        out = tmp_path / "out"
        assert run_cli("run", "--config", corpus, "--out", out, "--format", "vtt") == 0
        text = (out / "subtitles" / "ep01.vtt").read_text()
        assert text.startswith("WEBVTT\n")

    def test_align_and_eval_with_gt_dir(self, corpus, tmp_path):
        gt_dir = tmp_path / "gt"
        assert run_cli("align", "--config", corpus, "--out", gt_dir) == 0
        assert (gt_dir / "ep01.gt.ndjson").exists()
        assert (gt_dir / "ep01.review.txt").exists()

        out = tmp_path / "steps"
        assert run_cli("exemplars", "--config", corpus, "--out", out) == 0
        assert run_cli(
            "assign", "--config", corpus, "--exemplars", out / "exemplars.ndjson",
            "--out", out,
        ) == 0
        assert run_cli(
            "eval", "--config", corpus, "--assignments", out / "assignments.ndjson",
            "--out", out, "--gt-dir", gt_dir,
        ) == 0
        report = (out / "report.tsv").read_text().splitlines()
        series_row = [r for r in report if r.startswith("series")][0]
        assert float(series_row.split("\t")[3]) >= 0.9  # accuracy on the easy corpus

    def test_sweep_outputs(self, corpus, tmp_path):
        out = tmp_path / "steps"
        assert run_cli("exemplars", "--config", corpus, "--out", out) == 0
        sweep_out = tmp_path / "sweep"
        assert run_cli(
            "sweep", "--config", corpus, "--exemplars", out / "exemplars.ndjson",
            "--out", sweep_out,
        ) == 0
        rows = (sweep_out / "curves.tsv").read_text().splitlines()[1:]
        all_rows = [r.split("\t") for r in rows if r.endswith("\tall")]
        pocs = [float(r[1]) for r in all_rows]
        assert pocs == sorted(pocs)
        assert pocs[-1] == 1.0
        assert (sweep_out / "precision_pocs.png").exists()

    def test_sweep_long_only(self, corpus, tmp_path):
        out = tmp_path / "steps2"
        assert run_cli("exemplars", "--config", corpus, "--out", out) == 0
        sweep_out = tmp_path / "sweep_long"
        assert run_cli(
            "sweep", "--config", corpus, "--exemplars", out / "exemplars.ndjson",
            "--out", sweep_out, "--long-only",
        ) == 0
        rows = (sweep_out / "curves.tsv").read_text().splitlines()[1:]
        assert all(r.endswith("\tlong") for r in rows)

    def test_unknown_distance_flag(self, corpus, tmp_path):
        out = tmp_path / "steps3"
        assert run_cli("exemplars", "--config", corpus, "--out", out) == 0
        strict = tmp_path / "strict"
        assert run_cli(
            "assign", "--config", corpus, "--exemplars", out / "exemplars.ndjson",
            "--out", strict, "--unknown-distance", "0.0000001",
        ) == 0
        rows = (strict / "assignments.ndjson").read_text().splitlines()
        labels = {json.loads(r)["label"] for r in rows}
        assert labels == {"UNKNOWN"}

    def test_jobs_flag_matches_serial(self, corpus, tmp_path):
        a, b = tmp_path / "serial", tmp_path / "parallel"
        assert run_cli("run", "--config", corpus, "--out", a) == 0
        assert run_cli("run", "--config", corpus, "--out", b, "--jobs", 2) == 0
        assert _tree_digest(a) == _tree_digest(b)
