"""SRT and WebVTT emission and parsing with speaker-prefixed cue text.

Speakers travel as an uppercase `NAME:` prefix (the SDH convention); a config
flag switches VTT output to `<v Name>` voice spans instead. Timestamps are
millisecond-exact: emission rounds seconds to whole milliseconds, so emit/parse
round-trips are identities on millisecond-quantized input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import DataError, SchemaError

FORMATS = ("srt", "vtt")

_TIMESTAMP = re.compile(r"^(?:(\d+):)?(\d{2}):(\d{2})[,.](\d{3})$")
_CUE_TIMES = re.compile(r"^(\S+) --> (\S+)$")
_SPEAKER_PREFIX = re.compile(r"^([A-Z0-9][A-Z0-9 _.'\-]*): (.*)$", re.DOTALL)
_VOICE_SPAN = re.compile(r"^<v ([^>]+)>(.*?)(?:</v>)?$", re.DOTALL)


@dataclass(frozen=True)
class SubtitleCue:
    start: float
    end: float
    speaker: Optional[str]  # display name as printed (uppercase), or None
    text: str

    def __post_init__(self):
        if self.start < 0:
            raise DataError(f"cue start {self.start} is negative")
        if self.end < self.start:
            raise DataError(f"cue end {self.end} < start {self.start}")


def _format_timestamp(seconds: float, sep: str) -> str:
    ms = round(seconds * 1000.0)
    if ms < 0:
        raise DataError(f"negative timestamp {seconds}")
    hours, rest = divmod(ms, 3_600_000)
    minutes, rest = divmod(rest, 60_000)
    secs, millis = divmod(rest, 1000)
    return f"{hours:02d}:{minutes:02d}:{secs:02d}{sep}{millis:03d}"


def _parse_timestamp(value: str, where: str) -> float:
    match = _TIMESTAMP.match(value)
    if not match:
        raise SchemaError(f"{where}: bad timestamp {value!r}")
    hours = int(match.group(1) or 0)
    ms = ((hours * 60 + int(match.group(2))) * 60 + int(match.group(3))) * 1000 + int(
        match.group(4)
    )
    return ms / 1000.0


def format_subtitles(
    cues: Sequence[SubtitleCue], fmt: str, voice_spans: bool = False
) -> str:
    """Render cues as an SRT or WebVTT document, numbered from 1."""
    if fmt not in FORMATS:
        raise DataError(f"unknown subtitle format {fmt!r}")
    prev_start = -1.0
    for cue in cues:
        if cue.start < prev_start:
            raise DataError("cues must be sorted by start time")
        prev_start = cue.start
    sep = "," if fmt == "srt" else "."
    blocks = []
    for index, cue in enumerate(cues, start=1):
        if cue.speaker and voice_spans and fmt == "vtt":
            text = f"<v {cue.speaker}>{cue.text}"
        elif cue.speaker:
            text = f"{cue.speaker}: {cue.text}"
        else:
            text = cue.text
        blocks.append(
            f"{index}\n"
            f"{_format_timestamp(cue.start, sep)} --> {_format_timestamp(cue.end, sep)}\n"
            f"{text}"
        )
    body = "\n\n".join(blocks)
    if fmt == "vtt":
        return "WEBVTT\n" + ("\n" + body + "\n" if body else "")
    return body + "\n" if body else ""


def parse_subtitles(text: str, fmt: str) -> list[SubtitleCue]:
    """Parse an SRT or WebVTT document back into cues.

    The speaker is taken from a leading uppercase `NAME: ` prefix or a VTT
    voice span when present. Note the prefix heuristic: cue text that itself
    starts with an uppercase run and a colon will be read as a speaker.
    """
    if fmt not in FORMATS:
        raise DataError(f"unknown subtitle format {fmt!r}")
    lines = text.split("\n")
    pos = 0
    if fmt == "vtt":
        if not lines or not lines[0].startswith("WEBVTT"):
            raise SchemaError("vtt: missing WEBVTT header")
        pos = 1
        while pos < len(lines) and lines[pos].strip():
            pos += 1  # header metadata lines
    cues: list[SubtitleCue] = []
    index = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        index += 1
        where = f"{fmt} cue {index}"
        # optional numeric identifier line
        if _CUE_TIMES.match(lines[pos].strip()) is None:
            if not lines[pos].strip().isdigit():
                raise SchemaError(f"{where}: expected cue number or timestamps, got {lines[pos]!r}")
            pos += 1
            if pos >= len(lines):
                raise SchemaError(f"{where}: truncated cue")
        times = _CUE_TIMES.match(lines[pos].strip())
        if times is None:
            raise SchemaError(f"{where}: expected timestamps, got {lines[pos]!r}")
        start = _parse_timestamp(times.group(1), where)
        end = _parse_timestamp(times.group(2), where)
        pos += 1
        text_lines = []
        while pos < len(lines) and lines[pos].strip():
            text_lines.append(lines[pos])
            pos += 1
        if not text_lines:
            raise SchemaError(f"{where}: cue has no text")
        cue_text = "\n".join(text_lines)
        speaker: Optional[str] = None
        span = _VOICE_SPAN.match(cue_text) if fmt == "vtt" else None
        if span:
            speaker, cue_text = span.group(1), span.group(2)
        else:
            prefix = _SPEAKER_PREFIX.match(cue_text)
            if prefix:
                speaker, cue_text = prefix.group(1), prefix.group(2)
        try:
            cues.append(SubtitleCue(start=start, end=end, speaker=speaker, text=cue_text))
        except DataError as exc:
            raise SchemaError(f"{where}: {exc}") from None
    return cues


def cues_from_labels(
    segments,
    labels: Sequence[str],
    display_names: Optional[dict[str, str]] = None,
) -> list[SubtitleCue]:
    """Pair speech segments with assigned labels, mapping ids to display names.

    Labels without a display name (including UNKNOWN) are printed as-is,
    uppercased.
    """
    display_names = display_names or {}
    if len(segments) != len(labels):
        raise DataError("segments and labels must align one-to-one")
    cues = []
    for seg, label in zip(segments, labels):
        name = display_names.get(label, label).upper()
        cues.append(SubtitleCue(start=seg.start, end=seg.end, speaker=name, text=seg.text))
    return cues
