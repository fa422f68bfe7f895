"""Stage 1: funnel speech segments through four filters into per-character exemplars.

The funnel is: laughter removal -> audio-visual single-speaker gate (averaged
heatmap peaks) -> visual character classification against cast prototypes ->
k-NN purification of the pooled voice embeddings. Yields shrink monotonically;
a count that grows indicates a bug and aborts the run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import maximum_filter

from .core import (
    CastEntry,
    DataError,
    ExemplarRecord,
    HeatmapFrame,
    LaughterInterval,
    Peak,
    PeakSet,
    PipelineConfig,
    SpeechSegment,
    cosine_similarity,
    segment_overlap,
)
from .ingest import Episode

log = logging.getLogger("castline.exemplars")


@dataclass(frozen=True)
class StageYield:
    """Segment counts surviving each stage-1 step, series-wide."""

    vad: int
    av_gate: int
    visual: int
    audio_filter: int

    def __post_init__(self):
        counts = (self.vad, self.av_gate, self.visual, self.audio_filter)
        if any(c < 0 for c in counts):
            raise DataError(f"negative yield count: {counts}")
        if not (self.vad >= self.av_gate >= self.visual >= self.audio_filter):
            raise DataError(f"yield counts must be non-increasing, got {counts}")

    def percentages(self) -> tuple[float, float, float, float]:
        if self.vad == 0:
            return (0.0, 0.0, 0.0, 0.0)
        return tuple(
            100.0 * c / self.vad for c in (self.vad, self.av_gate, self.visual, self.audio_filter)
        )


def filter_laughter(
    segments: Sequence[SpeechSegment],
    laughter: Sequence[LaughterInterval],
    threshold: float,
) -> list[SpeechSegment]:
    """Drop segments that temporally overlap any laughter detection at or above threshold."""
    hot = [iv for iv in laughter if iv.score >= threshold]
    if not hot:
        return list(segments)
    kept = []
    for seg in segments:
        if any(segment_overlap(seg.start, seg.end, iv.start, iv.end) > 0 for iv in hot):
            continue
        kept.append(seg)
    return kept


def frames_in_segment(frames, segment: SpeechSegment):
    """Frames whose timestamp falls inside [start, end], endpoints included."""
    return [f for f in frames if segment.start <= _timestamp(f) <= segment.end]


def _timestamp(frame):
    return frame.timestamp if isinstance(frame, HeatmapFrame) else frame[0]


def average_heatmap(
    frames: Sequence[HeatmapFrame], segment: SpeechSegment
) -> Optional[np.ndarray]:
    """Element-wise mean of the heatmap frames inside a segment.

    Returns None when no frame falls inside the segment; such segments leave
    exemplar candidacy but stay in the assignment universe.
    """
    inside = frames_in_segment(frames, segment)
    if not inside:
        return None
    stack = np.stack([f.grid for f in inside])
    return stack.mean(axis=0)


def detect_peaks(heatmap, tau_det: float, peak_count: int, nms_radius: int) -> PeakSet:
    """Find up to `peak_count` peaks via maximum filtering plus greedy NMS.

    A cell is a candidate when it equals the max of its (2r+1)^2 window and is
    the lexicographically smallest such cell there. Candidates are visited by
    (value desc, row, col); an accepted peak suppresses candidates within
    Chebyshev distance `nms_radius`. Only peaks strictly above `tau_det` are
    returned.
    """
    grid = np.asarray(heatmap, dtype=np.float64)
    if grid.ndim != 2:
        raise DataError(f"heatmap must be 2-D, got shape {grid.shape}")
    r = int(nms_radius)
    h, w = grid.shape
    win = maximum_filter(grid, size=2 * r + 1, mode="constant", cval=-np.inf)
    candidates = []
    for i, j in zip(*np.nonzero(grid == win)):
        i, j = int(i), int(j)
        block = grid[max(0, i - r) : i + r + 1, max(0, j - r) : j + r + 1]
        rows, cols = np.nonzero(block == grid[i, j])
        first = (int(rows[0]) + max(0, i - r), int(cols[0]) + max(0, j - r))
        if first == (i, j):
            candidates.append((i, j))
    candidates.sort(key=lambda rc: (-grid[rc], rc[0], rc[1]))

    accepted: list[tuple[int, int]] = []
    for i, j in candidates:
        if len(accepted) == peak_count:
            break
        if all(max(abs(i - ai), abs(j - aj)) > r for ai, aj in accepted):
            accepted.append((i, j))
    peaks = tuple(
        Peak(i, j, float(grid[i, j])) for i, j in accepted if grid[i, j] > tau_det
    )
    return PeakSet(peaks)


def single_speaker_gate(peaks: PeakSet) -> bool:
    """One peak means one visible speaker; zero or several means the segment is unusable."""
    return len(peaks) == 1


def classify_character(
    frame_embeddings: Sequence[np.ndarray],
    cast: Sequence[CastEntry],
    tau_rec: float,
) -> Optional[str]:
    """Name the on-screen character, or None when no confident match exists.

    Per cast member the score is the mean cosine similarity between the
    in-segment frame embeddings and the member's prototype. The best scorer
    wins only with score strictly above `tau_rec`; an exact tie is ambiguous.
    """
    if not frame_embeddings:
        raise DataError("classify_character needs at least one frame embedding")
    if not cast:
        raise DataError("classify_character needs a non-empty cast")
    scores = []
    for entry in cast:
        sims = [cosine_similarity(vec, entry.prototype) for vec in frame_embeddings]
        scores.append((float(np.mean(sims)), entry.character_id))
    best = max(score for score, _ in scores)
    winners = [cid for score, cid in scores if score == best]
    if len(winners) != 1 or best <= tau_rec:
        return None
    return winners[0]


def knn_filter(records: Sequence[ExemplarRecord], k: int) -> list[ExemplarRecord]:
    """Keep a record only when its k nearest neighbours all carry its label.

    Neighbours are searched across every character's records by cosine distance
    (ties broken by episode then segment id). Characters with fewer than k
    records keep everything; their classes are too small to vote on.
    """
    n = len(records)
    if n == 0:
        return []
    labels = [r.character_id for r in records]
    class_size: dict[str, int] = {}
    for label in labels:
        class_size[label] = class_size.get(label, 0) + 1

    vectors = np.stack([r.embedding.normalized() for r in records])
    distances = np.clip(1.0 - vectors @ vectors.T, 0.0, 2.0)
    episode_codes = np.unique([r.episode_id for r in records], return_inverse=True)[1]
    segment_ids = np.array([r.segment_id for r in records])

    kept = []
    for i, record in enumerate(records):
        if class_size[record.character_id] < k:
            kept.append(record)
            continue
        if n - 1 < k:
            # cannot gather k neighbours at all; only reachable when every
            # class is large yet the pool is tiny, so nothing can pass
            continue
        row = distances[i].copy()
        row[i] = np.inf
        order = np.lexsort((segment_ids, episode_codes, row))
        neighbours = order[:k]
        if all(labels[j] == record.character_id for j in neighbours):
            kept.append(record)
    return kept


def build_exemplars(
    episodes: Sequence[Episode],
    cast: Sequence[CastEntry],
    config: PipelineConfig,
) -> tuple[list[ExemplarRecord], StageYield]:
    """Run the full stage-1 funnel over a series, pooling exemplars across episodes."""
    vad = 0
    av_gate = 0
    labelled: list[ExemplarRecord] = []
    for episode in episodes:
        candidates = filter_laughter(episode.segments, episode.laughter, config.laughter_threshold)
        vad += len(candidates)

        gated: list[SpeechSegment] = []
        for seg in candidates:
            mean_map = average_heatmap(episode.heatmaps, seg)
            if mean_map is None:
                log.debug(
                    "stage=av_gate episode=%s segment=%d no heatmap frames, discarded",
                    episode.episode_id,
                    seg.id,
                )
                continue
            radius = config.nms_radius_for(*mean_map.shape)
            peaks = detect_peaks(mean_map, config.tau_det, config.peak_count, radius)
            if single_speaker_gate(peaks):
                gated.append(seg)
        av_gate += len(gated)

        episode_cast = [c for c in cast if c.present_in(episode.episode_id)]
        named: list[tuple[SpeechSegment, str]] = []
        for seg in gated:
            frames = frames_in_segment(episode.face_frames, seg)
            if not frames or not episode_cast:
                continue
            who = classify_character([vec for _, vec in frames], episode_cast, config.tau_rec)
            if who is not None:
                named.append((seg, who))

        missing = [seg.id for seg, _ in named if seg.id not in episode.voice]
        if missing:
            raise DataError(
                f"{episode.episode_id}: no voice embedding for segments {missing}"
            )
        for seg, who in named:
            labelled.append(
                ExemplarRecord(episode.episode_id, seg.id, who, episode.voice[seg.id])
            )
        log.info(
            "stage=exemplars episode=%s vad=%d av_gate=%d visual=%d",
            episode.episode_id,
            len(candidates),
            len(gated),
            len(named),
        )

    filtered = knn_filter(labelled, config.knn_k)
    yields = StageYield(
        vad=vad, av_gate=av_gate, visual=len(labelled), audio_filter=len(filtered)
    )
    log.info(
        "stage=exemplars series vad=%d av_gate=%d visual=%d audio_filter=%d",
        *(yields.vad, yields.av_gate, yields.visual, yields.audio_filter),
    )
    return filtered, yields
