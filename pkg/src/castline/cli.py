"""Command-line entry point: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 usage error, 2 data error. All outputs are written
atomically (temp file + rename) and are byte-deterministic for identical
inputs and config.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import aligner as aligner_mod
from . import assigner as assigner_mod
from . import exemplars as exemplars_mod
from . import ingest, metrics, report, subtitles, synth
from .core import DataError, PipelineConfig

log = logging.getLogger("castline")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _atomic_write(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, bytes):
        tmp.write_bytes(data)
    else:
        tmp.write_text(data, encoding="utf-8")
    os.replace(tmp, path)


def _setup_logging() -> None:
    level = os.environ.get("CASTLINE_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s %(message)s",
    )


def _apply_overrides(config: PipelineConfig, args) -> PipelineConfig:
    overrides = {}
    if getattr(args, "unknown_distance", None) is not None:
        overrides["unknown_distance_d"] = args.unknown_distance
    if getattr(args, "collar", None) is not None:
        overrides["der_collar"] = args.collar
    return config.replace(**overrides) if overrides else config


def _load_series(args) -> ingest.SeriesConfig:
    series = ingest.load_series(args.config)
    config = _apply_overrides(series.config, args)
    return ingest.SeriesConfig(
        series_id=series.series_id,
        cast=series.cast,
        manifests=series.manifests,
        config=config,
        root=series.root,
    )


def _load_episodes(series: ingest.SeriesConfig, jobs: int) -> list[ingest.Episode]:
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(
                pool.map(lambda m: ingest.load_episode(m, series.config), series.manifests)
            )
    return [ingest.load_episode(m, series.config) for m in series.manifests]


def _truths(series: ingest.SeriesConfig, gt_dir: Optional[str]):
    """Ground truth per episode id, from --gt-dir files or manifest truth paths."""
    truths = {}
    for manifest in series.manifests:
        if gt_dir is not None:
            path = Path(gt_dir) / f"{manifest.episode_id}.gt.ndjson"
            if not path.exists():
                raise DataError(f"missing ground truth file {path}")
        else:
            path = manifest.truth
            if path is None:
                continue
            if not path.exists():
                raise DataError(f"manifest names missing truth file {path}")
        truths[manifest.episode_id] = ingest.parse_gt(
            path.read_text(encoding="utf-8").splitlines(), where=str(path)
        )
    return truths


def _run_exemplars(series, episodes, outdir: Path):
    records, yields = exemplars_mod.build_exemplars(episodes, series.cast, series.config)
    _atomic_write(outdir / "exemplars.ndjson", ingest.serialize_exemplars(records))
    report.write_yield_report(outdir, yields)
    return records, yields


def _run_assign(series, episodes, records, outdir: Path):
    bank = assigner_mod.build_centroids(records)
    rows = []
    per_episode = {}
    for episode in episodes:
        assignments = assigner_mod.assign_episode(episode, bank, series.config)
        per_episode[episode.episode_id] = assignments
        rows.extend((episode.episode_id, a) for a in assignments)
    _atomic_write(outdir / "assignments.ndjson", assigner_mod.serialize_assignments(rows))
    return bank, per_episode


def _run_emit(series, episodes, per_episode, fmt: str, outdir: Path):
    names = series.display_names()
    for episode in episodes:
        assignments = per_episode.get(episode.episode_id)
        if assignments is None:
            raise DataError(f"no assignments for episode {episode.episode_id}")
        by_id = {seg.id: seg for seg in episode.segments}
        segments, labels = [], []
        for a in assignments:
            if a.segment_id not in by_id:
                raise DataError(
                    f"{episode.episode_id}: assignment references unknown segment {a.segment_id}"
                )
            segments.append(by_id[a.segment_id])
            labels.append(a.label)
        cues = subtitles.cues_from_labels(segments, labels, names)
        text = subtitles.format_subtitles(cues, fmt, voice_spans=series.config.vtt_voice_spans)
        _atomic_write(outdir / "subtitles" / f"{episode.episode_id}.{fmt}", text)


def _hyp_segments(episode, assignments) -> list[metrics.HypSegment]:
    by_id = {seg.id: seg for seg in episode.segments}
    unknown_ids = [a.segment_id for a in assignments if a.segment_id not in by_id]
    if unknown_ids:
        raise DataError(
            f"{episode.episode_id}: assignments reference unknown segments {unknown_ids}"
        )
    return [
        metrics.HypSegment(by_id[a.segment_id].start, by_id[a.segment_id].end, a.label)
        for a in assignments
    ]


def _run_eval(
    series, episodes, per_episode, truths, outdir: Path,
    unknown_as_miss: bool, score_overlap: bool = True,
):
    reports = []
    groups = []
    texts = []
    for episode in episodes:
        if episode.episode_id not in truths:
            raise DataError(f"no ground truth for episode {episode.episode_id}")
        ref = truths[episode.episode_id]
        assignments = per_episode[episode.episode_id]
        hyp = _hyp_segments(episode, assignments)
        by_id = {seg.id: seg for seg in episode.segments}
        hyp_text = " ".join(by_id[a.segment_id].text for a in assignments)
        ref_text = " ".join(seg.text for seg in ref)
        reports.append(
            metrics.evaluate_episode(
                episode.episode_id,
                hyp,
                ref,
                collar=series.config.der_collar,
                unknown_as_miss=unknown_as_miss,
                ref_text=ref_text,
                hyp_text=hyp_text,
                score_overlap=score_overlap,
            )
        )
        groups.append((hyp, ref))
        texts.append((ref_text, hyp_text))
    series_report = metrics.evaluate_series(
        "series",
        groups,
        collar=series.config.der_collar,
        unknown_as_miss=unknown_as_miss,
        texts=texts,
        score_overlap=score_overlap,
    )
    reports.append(series_report)
    report.write_metrics_report(outdir, reports)
    return reports


def cmd_synth(args) -> int:
    preset = synth.easy_config if args.preset == "easy" else synth.noisy_config
    config = preset(seed=args.seed)
    overrides = {}
    for name in ("characters", "episodes", "segments"):
        value = getattr(args, name)
        if value is not None:
            overrides[
                {"characters": "n_characters", "episodes": "n_episodes",
                 "segments": "segments_per_episode"}[name]
            ] = value
    if args.voice_noise is not None:
        overrides["voice_noise"] = args.voice_noise
    if overrides:
        config = config.replace(**overrides)
    series_path = synth.generate(config, Path(args.out))
    print(series_path)
    return 0


def cmd_validate(args) -> int:
    series = _load_series(args)
    for manifest in series.manifests:
        counts = ingest.validate_episode(manifest, series.config)
        summary = " ".join(f"{k}={v}" for k, v in counts.items())
        print(f"{manifest.episode_id}: OK {summary}")
    print(f"{series.series_id}: {len(series.manifests)} episode(s) valid")
    return 0


def cmd_exemplars(args) -> int:
    series = _load_series(args)
    episodes = _load_episodes(series, args.jobs)
    _, yields = _run_exemplars(series, episodes, Path(args.out))
    print(report.render_yield_table(yields), end="")
    return 0


def cmd_assign(args) -> int:
    series = _load_series(args)
    episodes = _load_episodes(series, args.jobs)
    records = ingest.parse_exemplars(
        Path(args.exemplars).read_text(encoding="utf-8").splitlines(),
        dim=series.config.voice_dim,
        where=args.exemplars,
    )
    _run_assign(series, episodes, records, Path(args.out))
    return 0


def cmd_align(args) -> int:
    series = _load_series(args)
    alias_table = series.alias_table()
    outdir = Path(args.out)
    for manifest in series.manifests:
        if manifest.transcript is None:
            raise DataError(f"{manifest.episode_id}: manifest has no transcript path")
        episode = ingest.load_episode(manifest, series.config)
        turns = aligner_mod.parse_transcript(
            manifest.transcript.read_text(encoding="utf-8").splitlines(), alias_table
        )
        alignment = aligner_mod.dtw_align(aligner_mod.transcript_words(turns), episode.words)
        gt, review = aligner_mod.words_to_gt_segments(episode.segments, alignment)
        _atomic_write(outdir / f"{manifest.episode_id}.gt.ndjson", ingest.serialize_gt(gt))
        _atomic_write(
            outdir / f"{manifest.episode_id}.review.txt", aligner_mod.render_review(review)
        )
        log.info(
            "stage=align episode=%s cost=%d gt_segments=%d flagged=%d",
            manifest.episode_id,
            alignment.cost,
            len(gt),
            len(review),
        )
    return 0


def cmd_eval(args) -> int:
    series = _load_series(args)
    episodes = _load_episodes(series, args.jobs)
    truths = _truths(series, args.gt_dir)
    per_episode = assigner_mod.parse_assignments(
        Path(args.assignments).read_text(encoding="utf-8").splitlines()
    )
    missing = [e.episode_id for e in episodes if e.episode_id not in per_episode]
    if missing:
        raise DataError(f"assignments file lacks episodes: {missing}")
    unknown_as_miss = args.unknown_as_miss or series.config.unknown_as_miss
    reports = _run_eval(
        series, episodes, per_episode, truths, Path(args.out), unknown_as_miss,
        score_overlap=args.overlap,
    )
    print(report.render_metrics_table(reports), end="")
    return 0


def cmd_sweep(args) -> int:
    series = _load_series(args)
    episodes = _load_episodes(series, args.jobs)
    truths = _truths(series, args.gt_dir)
    records = ingest.parse_exemplars(
        Path(args.exemplars).read_text(encoding="utf-8").splitlines(),
        dim=series.config.voice_dim,
        where=args.exemplars,
    )
    bank = assigner_mod.build_centroids(records)
    unbounded = series.config.replace(unknown_distance_d=2.0)
    groups = []
    oracle_groups = []
    for episode in episodes:
        if episode.episode_id not in truths:
            raise DataError(f"no ground truth for episode {episode.episode_id}")
        universe = assigner_mod.assignment_universe(episode, series.config)
        assignments = assigner_mod.assign_episode(episode, bank, unbounded)
        groups.append((universe, assignments, truths[episode.episode_id]))
        oracle_groups.append((universe, truths[episode.episode_id]))
    points = assigner_mod.sweep_thresholds(
        groups, series.config.sweep_grid(), long_cutoff=series.config.long_segment_cutoff
    )
    if args.long_only:
        points = [p for p in points if p.segment_class == "long"]
    covered = set(bank.characters())
    oracle_all = assigner_mod.oracle_point(covered, oracle_groups)
    oracle_long = assigner_mod.oracle_point(
        covered, oracle_groups, long_cutoff=series.config.long_segment_cutoff
    )
    report.write_sweep_report(
        Path(args.out),
        points,
        oracle_all=None if args.long_only else oracle_all,
        oracle_long=oracle_long,
    )
    return 0


def cmd_emit(args) -> int:
    series = _load_series(args)
    episodes = _load_episodes(series, args.jobs)
    per_episode = assigner_mod.parse_assignments(
        Path(args.assignments).read_text(encoding="utf-8").splitlines()
    )
    _run_emit(series, episodes, per_episode, args.format, Path(args.out))
    return 0


def cmd_run(args) -> int:
    series = _load_series(args)
    episodes = _load_episodes(series, args.jobs)
    outdir = Path(args.out)
    records, yields = _run_exemplars(series, episodes, outdir)
    print(report.render_yield_table(yields), end="")
    _, per_episode = _run_assign(series, episodes, records, outdir)
    _run_emit(series, episodes, per_episode, args.format, outdir)
    if args.eval:
        truths = _truths(series, args.gt_dir)
        if truths:
            unknown_as_miss = args.unknown_as_miss or series.config.unknown_as_miss
            reports = _run_eval(
                series, episodes, per_episode, truths, outdir, unknown_as_miss,
                score_overlap=args.overlap,
            )
            print(report.render_metrics_table(reports), end="")
        else:
            log.warning("no ground truth available; skipping evaluation")
    return 0


def _add_common(parser, config=True, jobs=True):
    if config:
        parser.add_argument("--config", required=True, help="series config (YAML)")
    if jobs:
        parser.add_argument("--jobs", type=int, default=1, help="episode-level parallelism")
    parser.add_argument(
        "--unknown-distance", type=float, default=None, help="override unknown threshold d"
    )
    parser.add_argument("--collar", type=float, default=None, help="override DER collar seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="castline", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=("easy", "noisy"), default="easy")
    p.add_argument("--characters", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--segments", type=int, default=None)
    p.add_argument("--voice-noise", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="validate feature files against the schemas")
    _add_common(p, jobs=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("exemplars", help="stage 1: build the exemplar set")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_exemplars)

    p = sub.add_parser("assign", help="stage 2: assign characters to segments")
    _add_common(p)
    p.add_argument("--exemplars", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("align", help="build ground truth from transcripts via DTW")
    _add_common(p, jobs=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="score assignments against ground truth")
    _add_common(p)
    p.add_argument("--assignments", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt-dir", default=None, help="use aligned GT files instead of manifest truth")
    p.add_argument(
        "--overlap",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="also score overlap-included DER (the DER(O) column); --no-overlap omits it",
    )
    p.add_argument("--unknown-as-miss", action="store_true",
                   help="score UNKNOWN hypothesis speech as miss instead of confusion")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="precision vs POCS over the threshold grid")
    _add_common(p)
    p.add_argument("--exemplars", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt-dir", default=None)
    p.add_argument("--long-only", action="store_true", help="emit only the long-segment curve")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("emit", help="write character-tagged subtitles")
    _add_common(p)
    p.add_argument("--assignments", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=subtitles.FORMATS, default="srt")
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("run", help="end to end: exemplars, assign, emit, optional eval")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=subtitles.FORMATS, default="srt")
    p.add_argument("--gt-dir", default=None)
    p.add_argument("--eval", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--overlap", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--unknown-as-miss", action="store_true")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"castline: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"castline: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
