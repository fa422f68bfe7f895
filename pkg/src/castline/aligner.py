"""Ground-truth construction: DTW alignment of speaker-attributed transcripts
against timed ASR words, then per-segment majority voting."""

from __future__ import annotations

import logging
import string
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DataError, GTSegment, SchemaError, SpeechSegment, WordToken

log = logging.getLogger("castline.aligner")

_STRIP_CHARS = string.punctuation + "“”‘’…"


@dataclass(frozen=True)
class TranscriptLine:
    speaker: str
    text: str
    line_index: int

    def __post_init__(self):
        if not self.speaker:
            raise DataError(f"transcript line {self.line_index}: empty speaker")
        if not self.text.strip():
            raise DataError(f"transcript line {self.line_index}: empty text")


def parse_transcript(lines: Sequence[str], alias_table: dict[str, str]) -> list[TranscriptLine]:
    """Parse `SPEAKER: text` turns, resolving speaker names through the alias table."""
    turns: list[TranscriptLine] = []
    unknown_names: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        name, sep, text = line.partition(":")
        if not sep or not name.strip() or not text.strip():
            raise SchemaError(f"transcript:{lineno}: expected 'SPEAKER: text', got {line!r}")
        character = alias_table.get(name.strip().lower())
        if character is None:
            unknown_names.add(name.strip())
            continue
        turns.append(TranscriptLine(speaker=character, text=text.strip(), line_index=lineno))
    if unknown_names:
        raise DataError(
            "transcript speaker names not in the alias table: "
            + ", ".join(sorted(unknown_names))
        )
    return turns


def transcript_words(turns: Sequence[TranscriptLine]) -> list[tuple[str, str]]:
    """Flatten turns into (word, speaker) pairs in spoken order."""
    pairs = []
    for turn in turns:
        for word in turn.text.split():
            pairs.append((word, turn.speaker))
    return pairs


def normalize_word(w: str) -> str:
    """Lowercase and strip edge punctuation; internal apostrophes survive."""
    return w.lower().strip(_STRIP_CHARS)


@dataclass(frozen=True)
class WordAlignment:
    """DTW result: total cost, the path, and the speaker inherited by each timed word."""

    cost: int
    path: tuple[tuple[int, int, str], ...]  # (i, j, move); move in {match, skip_transcript, skip_timed}
    speakers: tuple[Optional[str], ...]
    aligned: tuple[bool, ...]  # True when the timed word was consumed by a diagonal move


def dtw_align(
    transcript: Sequence[tuple[str, str]], timed: Sequence[WordToken]
) -> WordAlignment:
    """Minimal-cost monotone alignment of transcript words onto timed words.

    Local cost is 0/1 on normalized word equality for a diagonal move; each
    skip costs 1. Backtracking prefers match over transcript-skip over
    timed-skip, making the returned path deterministic. Timed words consumed
    by a skip inherit the speaker of the nearest diagonally-aligned timed word
    (the earlier one on ties).
    """
    if not transcript or not timed:
        raise DataError("dtw_align requires two non-empty sequences")
    vocab: dict[str, int] = {}
    ca = np.array([vocab.setdefault(normalize_word(w), len(vocab)) for w, _ in transcript])
    cb = np.array([vocab.setdefault(normalize_word(t.text), len(vocab)) for t in timed])
    m, n = len(ca), len(cb)

    table = np.empty((m + 1, n + 1), dtype=np.int32)
    table[0] = np.arange(n + 1)
    offsets = np.arange(1, n + 1, dtype=np.int32)
    for i in range(1, m + 1):
        best = np.minimum(table[i - 1, :-1] + (cb != ca[i - 1]), table[i - 1, 1:] + 1)
        running = np.minimum.accumulate(np.concatenate(([np.int32(i)], best - offsets)))
        table[i, 0] = i
        table[i, 1:] = running[1:] + offsets

    path: list[tuple[int, int, str]] = []
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and table[i, j] == table[i - 1, j - 1] + (ca[i - 1] != cb[j - 1]):
            path.append((i - 1, j - 1, "match"))
            i, j = i - 1, j - 1
        elif i > 0 and table[i, j] == table[i - 1, j] + 1:
            path.append((i - 1, j, "skip_transcript"))
            i -= 1
        else:
            path.append((i, j - 1, "skip_timed"))
            j -= 1
    path.reverse()

    speakers: list[Optional[str]] = [None] * n
    aligned = [False] * n
    for pi, pj, move in path:
        if move == "match":
            speakers[pj] = transcript[pi][1]
            aligned[pj] = True
    anchors = [j for j in range(n) if aligned[j]]
    if anchors:
        for j in range(n):
            if not aligned[j]:
                nearest = min(anchors, key=lambda a: (abs(a - j), a))
                speakers[j] = speakers[nearest]

    return WordAlignment(
        cost=int(table[m, n]),
        path=tuple(path),
        speakers=tuple(speakers),
        aligned=tuple(aligned),
    )


@dataclass(frozen=True)
class ReviewEntry:
    """A segment whose speaker attribution deserves a human look."""

    segment_id: int
    start: float
    end: float
    reasons: tuple[str, ...]
    detail: str


def words_to_gt_segments(
    segments: Sequence[SpeechSegment],
    alignment: WordAlignment,
    skip_warn_fraction: float = 0.3,
) -> tuple[list[GTSegment], list[ReviewEntry]]:
    """Majority-vote a speaker for every speech segment from its words' speakers.

    Ties go to the speaker heard earliest in the segment. Segments whose words
    carry no speaker at all are dropped with a warning. Segments with mixed
    votes or too many skip-aligned words are listed for review.
    """
    gt: list[GTSegment] = []
    review: list[ReviewEntry] = []
    for seg in segments:
        lo, hi = seg.word_range
        voted = [alignment.speakers[j] for j in range(lo, hi) if alignment.speakers[j]]
        if not voted:
            log.warning(
                "segment %d [%0.2f, %0.2f] dropped: no aligned speaker for any word",
                seg.id,
                seg.start,
                seg.end,
            )
            continue
        counts = Counter(voted)
        top = max(counts.values())
        winner = next(s for s in voted if counts[s] == top)
        gt.append(GTSegment(start=seg.start, end=seg.end, speaker=winner, text=seg.text))

        reasons = []
        if len(counts) > 1:
            reasons.append("mixed-speakers")
        skipped = sum(1 for j in range(lo, hi) if not alignment.aligned[j])
        if skipped / (hi - lo) > skip_warn_fraction:
            reasons.append("skipped-words")
        if reasons:
            review.append(
                ReviewEntry(
                    segment_id=seg.id,
                    start=seg.start,
                    end=seg.end,
                    reasons=tuple(reasons),
                    detail=(
                        f"votes={dict(sorted(counts.items()))} "
                        f"skipped={skipped}/{hi - lo}"
                    ),
                )
            )
    return gt, review


def render_review(entries: Sequence[ReviewEntry]) -> str:
    if not entries:
        return "no segments flagged for review\n"
    lines = ["segments flagged for manual review:"]
    for e in entries:
        lines.append(
            f"  segment {e.segment_id} [{e.start:.2f}, {e.end:.2f}] "
            f"{','.join(e.reasons)} {e.detail}"
        )
    return "\n".join(lines) + "\n"
