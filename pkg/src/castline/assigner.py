"""Stage 2: centroid banks from exemplars, nearest-centroid assignment, threshold sweeps."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    Assignment,
    CharacterBank,
    DataError,
    ExemplarRecord,
    GTSegment,
    PipelineConfig,
    SpeechSegment,
    UNKNOWN,
    VoiceEmbedding,
    l2_normalize,
)
from .exemplars import filter_laughter
from .ingest import Episode
from .metrics import max_overlap_speaker

log = logging.getLogger("castline.assigner")


def build_centroids(exemplars: Sequence[ExemplarRecord]) -> CharacterBank:
    """Mean of the normalized exemplar embeddings per character, re-normalized.

    A character whose exemplars cancel out to the zero vector is dropped with
    a warning; it cannot be represented by a direction.
    """
    if not exemplars:
        raise DataError("cannot build centroids from zero exemplars")
    groups: dict[str, list[np.ndarray]] = {}
    for record in exemplars:
        groups.setdefault(record.character_id, []).append(record.embedding.normalized())
    centroids: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for character_id, vectors in groups.items():
        mean = np.mean(vectors, axis=0)
        norm = float(np.linalg.norm(mean))
        if norm == 0.0:
            log.warning(
                "character %s dropped from bank: exemplar mean has zero norm", character_id
            )
            continue
        centroids[character_id] = mean / norm
        counts[character_id] = len(vectors)
    return CharacterBank(centroids=centroids, counts=counts)


def assign(
    embedding: VoiceEmbedding,
    bank: CharacterBank,
    d: float,
    segment_id: Optional[int] = None,
) -> Assignment:
    """Label a segment with the nearest centroid's character, or UNKNOWN beyond `d`.

    Distances are cosine distances on the normalized embedding. An exact tie
    goes to the lexicographically smallest character id; an empty bank yields
    UNKNOWN at infinite distance.
    """
    ids = bank.characters()
    if not ids:
        return Assignment(segment_id=segment_id, label=UNKNOWN, distance=math.inf)
    centroids = np.stack([bank.centroids[c] for c in ids])
    distances = np.clip(1.0 - centroids @ l2_normalize(embedding.vector), 0.0, 2.0)
    best = int(np.argmin(distances))  # first minimum = smallest id, ids are sorted
    distance = float(distances[best])
    label = ids[best] if distance <= d else UNKNOWN
    return Assignment(segment_id=segment_id, label=label, distance=distance)


def assignment_universe(episode: Episode, config: PipelineConfig) -> list[SpeechSegment]:
    """Segments eligible for assignment: everything except laughter-overlapped ones."""
    return filter_laughter(episode.segments, episode.laughter, config.laughter_threshold)


def assign_episode(
    episode: Episode, bank: CharacterBank, config: PipelineConfig
) -> list[Assignment]:
    """One assignment per non-laughter segment, in segment order."""
    universe = assignment_universe(episode, config)
    missing = [seg.id for seg in universe if seg.id not in episode.voice]
    if missing:
        raise DataError(f"{episode.episode_id}: no voice embedding for segments {missing}")
    assignments = [
        assign(episode.voice[seg.id], bank, config.unknown_distance_d, segment_id=seg.id)
        for seg in universe
    ]
    classified = sum(1 for a in assignments if not a.is_unknown)
    log.info(
        "stage=assign episode=%s segments=%d classified=%d unknown=%d",
        episode.episode_id,
        len(assignments),
        classified,
        len(assignments) - classified,
    )
    return assignments


def serialize_assignments(rows: Sequence[tuple[str, Assignment]]) -> str:
    """Assignments file: one record per (episode, segment), distance null for +inf."""
    lines = []
    for episode_id, a in rows:
        lines.append(
            json.dumps(
                {
                    "episode_id": episode_id,
                    "segment_id": a.segment_id,
                    "label": a.label,
                    "distance": None if math.isinf(a.distance) else a.distance,
                },
                ensure_ascii=False,
                separators=(",", ":"),
            )
        )
    return "".join(line + "\n" for line in lines)


def parse_assignments(stream) -> dict[str, list[Assignment]]:
    """Inverse of serialize_assignments, grouped by episode id."""
    out: dict[str, list[Assignment]] = {}
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            distance = rec["distance"]
            out.setdefault(rec["episode_id"], []).append(
                Assignment(
                    segment_id=int(rec["segment_id"]),
                    label=str(rec["label"]),
                    distance=math.inf if distance is None else float(distance),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"assignments:{lineno}: bad record: {exc}") from None
    return out


@dataclass(frozen=True)
class SweepPoint:
    d: float
    pocs: float
    precision: float
    segment_class: str  # "all" or "long"


SweepGroup = tuple[Sequence[SpeechSegment], Sequence[Assignment], Sequence[GTSegment]]


def sweep_thresholds(
    groups: Sequence[SweepGroup],
    grid: Sequence[float],
    long_cutoff: float = 2.0,
) -> list[SweepPoint]:
    """Precision vs POCS along a grid of unknown-distance thresholds.

    Each group is one episode's (segments, assignments, ground truth), with
    assignments carrying every segment's best label and distance (computed
    with an unbounded threshold) so that varying d only moves the UNKNOWN
    cutoff. Episodes pool into one curve; rows are emitted for all segments
    and for the long ones. With nothing classified, precision is 1.0 by
    convention (nothing has gone wrong yet).
    """
    pooled: list[tuple[float, float, bool]] = []  # (duration, distance, correct)
    for segments, assignments, gt in groups:
        if len(segments) != len(assignments):
            raise DataError("segments and assignments must align one-to-one")
        for seg, a in zip(segments, assignments):
            correct = max_overlap_speaker(seg.start, seg.end, gt) == a.label
            pooled.append((seg.duration, a.distance, correct))
    points = []
    for segment_class, universe in (
        ("all", pooled),
        ("long", [row for row in pooled if row[0] > long_cutoff]),
    ):
        for d in grid:
            classified = [row for row in universe if row[1] <= d]
            pocs = len(classified) / len(universe) if universe else 0.0
            if classified:
                precision = sum(1 for row in classified if row[2]) / len(classified)
            else:
                precision = 1.0
            points.append(
                SweepPoint(d=float(d), pocs=pocs, precision=precision, segment_class=segment_class)
            )
    return points


def oracle_point(
    covered_characters: set[str],
    groups: Sequence[tuple[Sequence[SpeechSegment], Sequence[GTSegment]]],
    long_cutoff: Optional[float] = None,
) -> tuple[float, float]:
    """The operating point of a perfect classifier restricted to covered characters.

    Every segment whose ground-truth speaker has exemplars is classified
    correctly; everything else is UNKNOWN. Precision is 1.0 by construction
    (and by convention when nothing is covered). With `long_cutoff` set, only
    segments longer than the cutoff participate.
    """
    if not covered_characters:
        log.warning("oracle point with no covered characters: POCS=0, precision=1 by convention")
        return (0.0, 1.0)
    total = classified = 0
    for segments, gt in groups:
        for seg in segments:
            if long_cutoff is not None and seg.duration <= long_cutoff:
                continue
            total += 1
            if max_overlap_speaker(seg.start, seg.end, gt) in covered_characters:
                classified += 1
    if total == 0:
        return (0.0, 1.0)
    return (classified / total, 1.0)
