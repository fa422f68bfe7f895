"""Evaluation: DER with collar and overlap handling, identity accuracy, per-character
precision/recall, and WER over a simplified, versioned text normalizer.

Identity matching is literal: reference and hypothesis share the character
namespace, so no optimal speaker mapping is performed. That is a deliberate
divergence from anonymous-diarization tooling.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DataError, GTSegment, UNKNOWN

log = logging.getLogger("castline.metrics")


@dataclass(frozen=True)
class HypSegment:
    """A hypothesis span: where the system thinks someone (or UNKNOWN) spoke."""

    start: float
    end: float
    label: str

    def __post_init__(self):
        if self.end <= self.start:
            raise DataError(f"hyp segment end {self.end} <= start {self.start}")


@dataclass(frozen=True)
class CharacterPR:
    character_id: str
    precision: Optional[float]  # None when the character was never predicted
    recall: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    """All rates are stored as fractions; rendering decides the display scale.

    `der` excludes reference-overlap regions (Table-style DER); `der_overlap`
    scores them too and is None when overlap scoring was turned off.
    """

    scope: str
    der: float
    der_overlap: Optional[float]
    accuracy: float
    ppc: float
    rpc: float
    wer: Optional[float]
    per_character: tuple[CharacterPR, ...] = ()


# interval helpers (timeline sets as sorted disjoint [start, end) pairs)

def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    spans = sorted((s, e) for s, e in intervals if e > s)
    merged: list[tuple[float, float]] = []
    for s, e in spans:
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def _subtract(base: list[tuple[float, float]], cuts: list[tuple[float, float]]):
    cuts = _merge(cuts)
    result = []
    for s, e in base:
        cur = s
        for cs, ce in cuts:
            if ce <= cur or cs >= e:
                continue
            if cs > cur:
                result.append((cur, cs))
            cur = max(cur, ce)
            if cur >= e:
                break
        if cur < e:
            result.append((cur, e))
    return result


def _overlap_regions(ref: Sequence[GTSegment]) -> list[tuple[float, float]]:
    """Regions where at least two distinct reference speakers are active."""
    points = sorted({t for seg in ref for t in (seg.start, seg.end)})
    regions = []
    for left, right in zip(points, points[1:]):
        mid = (left + right) / 2.0
        active = {seg.speaker for seg in ref if seg.start < mid < seg.end}
        if len(active) >= 2:
            regions.append((left, right))
    return _merge(regions)


def der(
    ref: Sequence[GTSegment],
    hyp: Sequence[HypSegment],
    collar: float = 0.25,
    include_overlap: bool = True,
    unknown_as_miss: bool = False,
) -> float:
    """Diarisation error rate with literal identity matching.

    The timeline within +-collar of every reference boundary is not scored;
    with include_overlap=False, regions where two or more reference speakers
    talk at once are excluded as well. UNKNOWN hypothesis speech over
    reference speech scores as confusion by default, or as missed speech when
    unknown_as_miss is set.
    """
    miss, fa, conf, ref_time = _der_components(ref, hyp, collar, include_overlap, unknown_as_miss)
    if ref_time == 0.0:
        raise DataError("DER undefined: no reference speech remains after exclusions")
    return (miss + fa + conf) / ref_time


def _der_components(
    ref: Sequence[GTSegment],
    hyp: Sequence[HypSegment],
    collar: float,
    include_overlap: bool,
    unknown_as_miss: bool,
) -> tuple[float, float, float, float]:
    if not ref:
        raise DataError("DER undefined for an empty reference")
    if unknown_as_miss:
        hyp = [h for h in hyp if h.label != UNKNOWN]

    exclusions: list[tuple[float, float]] = []
    if collar > 0:
        for seg in ref:
            exclusions.append((seg.start - collar, seg.start + collar))
            exclusions.append((seg.end - collar, seg.end + collar))
    if not include_overlap:
        exclusions.extend(_overlap_regions(ref))
    excluded = _merge(exclusions)

    deltas: dict[float, list[tuple[str, str, int]]] = {}

    def add(t: float, side: str, who: str, step: int):
        deltas.setdefault(t, []).append((side, who, step))

    for seg in ref:
        add(seg.start, "r", seg.speaker, 1)
        add(seg.end, "r", seg.speaker, -1)
    for seg in hyp:
        add(seg.start, "h", seg.label, 1)
        add(seg.end, "h", seg.label, -1)
    points = set(deltas)
    for s, e in excluded:
        points.update((s, e))
    ordered = sorted(points)

    active: dict[str, dict[str, int]] = {"r": {}, "h": {}}
    miss = fa = conf = ref_time = 0.0
    cut_index = 0
    for left, right in zip(ordered, ordered[1:]):
        for side, who, step in deltas.get(left, ()):
            counts = active[side]
            counts[who] = counts.get(who, 0) + step
            if counts[who] == 0:
                del counts[who]
        mid = (left + right) / 2.0
        while cut_index < len(excluded) and excluded[cut_index][1] <= left:
            cut_index += 1
        if cut_index < len(excluded) and excluded[cut_index][0] < mid < excluded[cut_index][1]:
            continue
        duration = right - left
        n_ref, n_hyp = len(active["r"]), len(active["h"])
        if n_ref == 0 and n_hyp == 0:
            continue
        shared = sum(1 for who in active["r"] if who in active["h"])
        ref_time += n_ref * duration
        miss += max(0, n_ref - n_hyp) * duration
        fa += max(0, n_hyp - n_ref) * duration
        conf += (min(n_ref, n_hyp) - shared) * duration
    return miss, fa, conf, ref_time


def max_overlap_speaker(start: float, end: float, ref: Sequence[GTSegment]) -> Optional[str]:
    """Speaker of the reference segment overlapping [start, end] the most.

    Ties go to the earlier reference segment; None when nothing overlaps.
    """
    best: Optional[str] = None
    best_overlap = 0.0
    for seg in sorted(ref, key=lambda s: (s.start, s.end)):
        overlap = min(end, seg.end) - max(start, seg.start)
        if overlap > best_overlap:
            best_overlap = overlap
            best = seg.speaker
    return best


def accuracy_on_overlap(hyp: Sequence[HypSegment], ref: Sequence[GTSegment]) -> float:
    """Fraction of GT-overlapping hypothesis segments labelled with the right speaker."""
    correct, total = _accuracy_counts(hyp, ref)
    if total == 0:
        raise DataError("accuracy undefined: no hypothesis segment overlaps the reference")
    return correct / total


def _accuracy_counts(hyp: Sequence[HypSegment], ref: Sequence[GTSegment]) -> tuple[int, int]:
    correct = total = 0
    for seg in hyp:
        speaker = max_overlap_speaker(seg.start, seg.end, ref)
        if speaker is None:
            continue
        total += 1
        if seg.label == speaker:
            correct += 1
    return correct, total


def per_character_pr(
    hyp: Sequence[HypSegment], ref: Sequence[GTSegment]
) -> tuple[float, float, list[CharacterPR]]:
    """Average per-character precision and recall plus the full table.

    A true positive follows the overlap rule: a hypothesis segment counts for
    its label's character when its maximally-overlapping reference segment has
    that speaker. Characters never predicted contribute no precision term but
    pull the recall average down; characters absent from the reference are
    ignored entirely.
    """
    counts = _pr_counts(hyp, ref)
    return _pr_from_counts(counts)


@dataclass
class _PRCounts:
    tp: dict = field(default_factory=dict)
    predicted: dict = field(default_factory=dict)
    matched: dict = field(default_factory=dict)  # character -> set of recalled ref keys
    support: dict = field(default_factory=dict)


def _pr_counts(
    hyp: Sequence[HypSegment],
    ref: Sequence[GTSegment],
    counts: Optional[_PRCounts] = None,
    ref_key_prefix: str = "",
) -> _PRCounts:
    counts = counts or _PRCounts()
    ordered_ref = sorted(ref, key=lambda s: (s.start, s.end))
    for seg in ordered_ref:
        counts.support[seg.speaker] = counts.support.get(seg.speaker, 0) + 1
        counts.matched.setdefault(seg.speaker, set())
    for seg in hyp:
        if seg.label == UNKNOWN or seg.label not in counts.support:
            continue
        counts.predicted[seg.label] = counts.predicted.get(seg.label, 0) + 1
        best_idx, best_overlap = None, 0.0
        for idx, rseg in enumerate(ordered_ref):
            overlap = min(seg.end, rseg.end) - max(seg.start, rseg.start)
            if overlap > best_overlap:
                best_overlap = overlap
                best_idx = idx
        if best_idx is not None and ordered_ref[best_idx].speaker == seg.label:
            counts.tp[seg.label] = counts.tp.get(seg.label, 0) + 1
            counts.matched[seg.label].add(f"{ref_key_prefix}{best_idx}")
    return counts


def _pr_from_counts(counts: _PRCounts) -> tuple[float, float, list[CharacterPR]]:
    table: list[CharacterPR] = []
    precisions: list[float] = []
    recalls: list[float] = []
    for character in sorted(counts.support):
        support = counts.support[character]
        predicted = counts.predicted.get(character, 0)
        tp = counts.tp.get(character, 0)
        precision = tp / predicted if predicted else None
        recall = len(counts.matched[character]) / support
        if precision is not None:
            precisions.append(precision)
        recalls.append(recall)
        table.append(
            CharacterPR(character_id=character, precision=precision, recall=recall, support=support)
        )
    ppc = float(np.mean(precisions)) if precisions else 0.0
    rpc = float(np.mean(recalls)) if recalls else 0.0
    return ppc, rpc, table


# text normalization and WER

CONTRACTIONS = {
    "won't": "will not",
    "can't": "can not",
    "shan't": "shall not",
    "let's": "let us",
    "gonna": "going to",
    "wanna": "want to",
    "gotta": "got to",
    "kinda": "kind of",
    "sorta": "sort of",
    "ain't": "are not",
}

DIGITS = {
    "0": "zero", "1": "one", "2": "two", "3": "three", "4": "four",
    "5": "five", "6": "six", "7": "seven", "8": "eight", "9": "nine",
}

_PUNCT = re.compile(r"[^\w\s']+")


def normalize_text(s: str) -> list[str]:
    """Lowercase, strip punctuation (keeping intra-word apostrophes), expand the
    fixed contraction table, and spell out standalone digits 0-9."""
    cleaned = _PUNCT.sub(" ", s.lower())
    words: list[str] = []
    for token in cleaned.split():
        token = token.strip("'_")
        if not token:
            continue
        if token in CONTRACTIONS:
            words.extend(CONTRACTIONS[token].split())
        elif token in DIGITS:
            words.append(DIGITS[token])
        else:
            words.append(token)
    return words


def _edit_distance(a: list[str], b: list[str]) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    vocab: dict[str, int] = {}
    ca = np.array([vocab.setdefault(w, len(vocab)) for w in a])
    cb = np.array([vocab.setdefault(w, len(vocab)) for w in b])
    n = len(b)
    prev = np.arange(n + 1, dtype=np.int64)
    offsets = np.arange(1, n + 1, dtype=np.int64)
    for i in range(1, len(a) + 1):
        best = np.minimum(prev[:-1] + (cb != ca[i - 1]), prev[1:] + 1)
        running = np.minimum.accumulate(np.concatenate(([i], best - offsets)))
        prev = np.concatenate(([i], running[1:] + offsets))
    return int(prev[-1])


def wer(ref_text: str, hyp_text: str) -> float:
    """Word error rate after normalizing both sides; fraction of the reference length."""
    ref_words = normalize_text(ref_text)
    hyp_words = normalize_text(hyp_text)
    if not ref_words:
        raise DataError("WER undefined for an empty reference")
    return _edit_distance(ref_words, hyp_words) / len(ref_words)


def _wer_counts(ref_text: str, hyp_text: str) -> tuple[int, int]:
    ref_words = normalize_text(ref_text)
    hyp_words = normalize_text(hyp_text)
    return _edit_distance(ref_words, hyp_words), len(ref_words)


def evaluate_episode(
    scope: str,
    hyp: Sequence[HypSegment],
    ref: Sequence[GTSegment],
    collar: float = 0.25,
    unknown_as_miss: bool = False,
    ref_text: Optional[str] = None,
    hyp_text: Optional[str] = None,
    score_overlap: bool = True,
) -> MetricsReport:
    """The full per-episode report: DER both ways, accuracy, P/R, optional WER."""
    ppc, rpc, table = per_character_pr(hyp, ref)
    return MetricsReport(
        scope=scope,
        der=der(ref, hyp, collar, include_overlap=False, unknown_as_miss=unknown_as_miss),
        der_overlap=(
            der(ref, hyp, collar, include_overlap=True, unknown_as_miss=unknown_as_miss)
            if score_overlap
            else None
        ),
        accuracy=accuracy_on_overlap(hyp, ref),
        ppc=ppc,
        rpc=rpc,
        wer=wer(ref_text, hyp_text) if ref_text is not None and hyp_text is not None else None,
        per_character=tuple(table),
    )


def evaluate_series(
    scope: str,
    episodes: Sequence[tuple[Sequence[HypSegment], Sequence[GTSegment]]],
    collar: float = 0.25,
    unknown_as_miss: bool = False,
    texts: Optional[Sequence[tuple[str, str]]] = None,
    score_overlap: bool = True,
) -> MetricsReport:
    """Pool per-episode counts: DER and WER duration/length weighted, accuracy by
    segment counts, P/R by pooled per-character counts."""
    miss = fa = conf = ref_time = 0.0
    miss_o = fa_o = conf_o = ref_time_o = 0.0
    correct = total = 0
    pr = _PRCounts()
    for i, (hyp, ref) in enumerate(episodes):
        m, f, c, t = _der_components(ref, hyp, collar, False, unknown_as_miss)
        miss, fa, conf, ref_time = miss + m, fa + f, conf + c, ref_time + t
        if score_overlap:
            m, f, c, t = _der_components(ref, hyp, collar, True, unknown_as_miss)
            miss_o, fa_o, conf_o, ref_time_o = miss_o + m, fa_o + f, conf_o + c, ref_time_o + t
        ep_correct, ep_total = _accuracy_counts(hyp, ref)
        correct, total = correct + ep_correct, total + ep_total
        _pr_counts(hyp, ref, counts=pr, ref_key_prefix=f"ep{i}:")
    if ref_time == 0.0 or (score_overlap and ref_time_o == 0.0):
        raise DataError("DER undefined: no reference speech remains after exclusions")
    if total == 0:
        raise DataError("accuracy undefined: no hypothesis segment overlaps the reference")
    wer_value: Optional[float] = None
    if texts:
        distance = length = 0
        for ref_text, hyp_text in texts:
            d, n = _wer_counts(ref_text, hyp_text)
            distance, length = distance + d, length + n
        if length == 0:
            raise DataError("WER undefined for an empty reference")
        wer_value = distance / length
    ppc, rpc, table = _pr_from_counts(pr)
    return MetricsReport(
        scope=scope,
        der=(miss + fa + conf) / ref_time,
        der_overlap=(miss_o + fa_o + conf_o) / ref_time_o if score_overlap else None,
        accuracy=correct / total,
        ppc=ppc,
        rpc=rpc,
        wer=wer_value,
        per_character=tuple(table),
    )
