"""Feature-file parsing and sentence-level segmentation of word streams.

All feature files are newline-delimited JSON records. The field names used here
are the normative adapter boundary: any tool that exports features for this
engine must write exactly these schemas.

    words:           {"w": str, "s": float, "e": float, "c": float?}
    laughter:        {"s": float, "e": float, "score": float}
    heatmaps:        {"t": float, "h": int, "w": int, "v": [float; h*w]}  (row-major)
    face frames:     {"t": float, "v": [float; Dv]}
    voice embeddings:{"segment_id": int, "v": [float; D]}
    ground truth:    {"s": float, "e": float, "speaker": str, "text": str}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Sequence, Union

import numpy as np
import yaml

from .core import (
    DEFAULT_ABBREVIATIONS,
    CastEntry,
    DataError,
    ExemplarRecord,
    GTSegment,
    HeatmapFrame,
    LaughterInterval,
    PipelineConfig,
    SchemaError,
    SpeechSegment,
    VoiceEmbedding,
    WordToken,
)

log = logging.getLogger("castline.ingest")

Stream = Union[IO[str], Iterable[str]]

TERMINAL_CHARS = (".", "?", "!", "…")


def _records(stream: Stream, where: str) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{where}:{lineno}: not a valid record: {exc}") from None
        if not isinstance(record, dict):
            raise SchemaError(f"{where}:{lineno}: record must be an object")
        yield lineno, record


def _require(record: dict, key: str, where: str, lineno: int):
    if key not in record:
        raise SchemaError(f"{where}:{lineno}: missing field {key!r}")
    return record[key]


def _number(record: dict, key: str, where: str, lineno: int) -> float:
    value = _require(record, key, where, lineno)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}:{lineno}: field {key!r} must be a number")
    return float(value)


def parse_words(stream: Stream, where: str = "words") -> list[WordToken]:
    """Parse a word-timestamp file. Starts must be non-decreasing; overlaps are fine."""
    tokens: list[WordToken] = []
    prev_start = -float("inf")
    for lineno, rec in _records(stream, where):
        text = _require(rec, "w", where, lineno)
        if not isinstance(text, str):
            raise SchemaError(f"{where}:{lineno}: field 'w' must be a string")
        start = _number(rec, "s", where, lineno)
        end = _number(rec, "e", where, lineno)
        confidence = _number(rec, "c", where, lineno) if "c" in rec else 1.0
        try:
            token = WordToken(text=text, start=start, end=end, confidence=confidence)
        except DataError as exc:
            raise SchemaError(f"{where}:{lineno}: {exc}") from None
        if start < prev_start:
            raise SchemaError(
                f"{where}:{lineno}: word start {start} precedes previous start {prev_start}"
            )
        prev_start = start
        tokens.append(token)
    return tokens


def parse_laughter(stream: Stream, where: str = "laughter") -> list[LaughterInterval]:
    intervals = []
    for lineno, rec in _records(stream, where):
        try:
            intervals.append(
                LaughterInterval(
                    start=_number(rec, "s", where, lineno),
                    end=_number(rec, "e", where, lineno),
                    score=_number(rec, "score", where, lineno),
                )
            )
        except DataError as exc:
            raise SchemaError(f"{where}:{lineno}: {exc}") from None
    intervals.sort(key=lambda iv: (iv.start, iv.end))
    return intervals


def parse_heatmaps(stream: Stream, where: str = "heatmaps") -> list[HeatmapFrame]:
    frames = []
    shape: Optional[tuple[int, int]] = None
    for lineno, rec in _records(stream, where):
        t = _number(rec, "t", where, lineno)
        h = _require(rec, "h", where, lineno)
        w = _require(rec, "w", where, lineno)
        values = _require(rec, "v", where, lineno)
        if not isinstance(h, int) or not isinstance(w, int) or h < 1 or w < 1:
            raise SchemaError(f"{where}:{lineno}: 'h' and 'w' must be positive integers")
        if not isinstance(values, list) or len(values) != h * w:
            raise SchemaError(f"{where}:{lineno}: 'v' must hold exactly h*w = {h * w} values")
        if shape is None:
            shape = (h, w)
        elif (h, w) != shape:
            raise SchemaError(f"{where}:{lineno}: grid shape {(h, w)} differs from {shape}")
        try:
            grid = np.asarray(values, dtype=np.float64).reshape(h, w)
            frames.append(HeatmapFrame(timestamp=t, grid=grid))
        except (DataError, ValueError) as exc:
            raise SchemaError(f"{where}:{lineno}: {exc}") from None
    frames.sort(key=lambda f: f.timestamp)
    return frames


def parse_face_embeddings(
    stream: Stream, dim: Optional[int] = None, where: str = "face_frames"
) -> list[tuple[float, np.ndarray]]:
    frames = []
    for lineno, rec in _records(stream, where):
        t = _number(rec, "t", where, lineno)
        values = _require(rec, "v", where, lineno)
        try:
            vec = np.asarray(values, dtype=np.float64)
            if vec.ndim != 1:
                raise DataError("embedding must be a flat list")
            if dim is not None and vec.shape[0] != dim:
                raise DataError(f"embedding dimension {vec.shape[0]} != expected {dim}")
            if not np.all(np.isfinite(vec)):
                raise DataError("embedding contains non-finite values")
        except DataError as exc:
            raise SchemaError(f"{where}:{lineno}: {exc}") from None
        frames.append((t, vec))
    frames.sort(key=lambda item: item[0])
    return frames


def parse_voice_embeddings(
    stream: Stream, dim: Optional[int] = None, where: str = "voice_embeddings"
) -> dict[int, VoiceEmbedding]:
    embeddings: dict[int, VoiceEmbedding] = {}
    for lineno, rec in _records(stream, where):
        seg_id = _require(rec, "segment_id", where, lineno)
        if isinstance(seg_id, bool) or not isinstance(seg_id, int):
            raise SchemaError(f"{where}:{lineno}: 'segment_id' must be an integer")
        if seg_id in embeddings:
            raise SchemaError(f"{where}:{lineno}: duplicate segment_id {seg_id}")
        values = _require(rec, "v", where, lineno)
        try:
            vec = np.asarray(values, dtype=np.float64)
            if dim is not None and vec.shape[0] != dim:
                raise DataError(f"embedding dimension {vec.shape[0]} != expected {dim}")
            embeddings[seg_id] = VoiceEmbedding(vec)
        except DataError as exc:
            raise SchemaError(f"{where}:{lineno}: {exc}") from None
    return embeddings


def parse_gt(stream: Stream, where: str = "truth") -> list[GTSegment]:
    segments = []
    for lineno, rec in _records(stream, where):
        speaker = _require(rec, "speaker", where, lineno)
        text = _require(rec, "text", where, lineno)
        if not isinstance(speaker, str) or not speaker:
            raise SchemaError(f"{where}:{lineno}: 'speaker' must be a non-empty string")
        if not isinstance(text, str):
            raise SchemaError(f"{where}:{lineno}: 'text' must be a string")
        try:
            segments.append(
                GTSegment(
                    start=_number(rec, "s", where, lineno),
                    end=_number(rec, "e", where, lineno),
                    speaker=speaker,
                    text=text,
                )
            )
        except DataError as exc:
            raise SchemaError(f"{where}:{lineno}: {exc}") from None
    segments.sort(key=lambda s: (s.start, s.end))
    return segments


def parse_exemplars(
    stream: Stream, dim: Optional[int] = None, where: str = "exemplars"
) -> list[ExemplarRecord]:
    records = []
    for lineno, rec in _records(stream, where):
        seg_id = _require(rec, "segment_id", where, lineno)
        episode_id = _require(rec, "episode_id", where, lineno)
        character_id = _require(rec, "character_id", where, lineno)
        if not isinstance(seg_id, int) or isinstance(seg_id, bool):
            raise SchemaError(f"{where}:{lineno}: 'segment_id' must be an integer")
        if not isinstance(episode_id, str) or not isinstance(character_id, str):
            raise SchemaError(f"{where}:{lineno}: ids must be strings")
        values = _require(rec, "v", where, lineno)
        try:
            vec = np.asarray(values, dtype=np.float64)
            if dim is not None and vec.shape[0] != dim:
                raise DataError(f"embedding dimension {vec.shape[0]} != expected {dim}")
            records.append(ExemplarRecord(episode_id, seg_id, character_id, VoiceEmbedding(vec)))
        except DataError as exc:
            raise SchemaError(f"{where}:{lineno}: {exc}") from None
    return records


# Canonical writers. parse(serialize(x)) is the identity and, for files produced
# by these writers, serialize(parse(file)) reproduces the bytes exactly.

def _dump(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def serialize_words(tokens: Sequence[WordToken]) -> str:
    lines = []
    for t in tokens:
        rec = {"w": t.text, "s": t.start, "e": t.end}
        if t.confidence != 1.0:
            rec["c"] = t.confidence
        lines.append(_dump(rec))
    return "".join(line + "\n" for line in lines)


def serialize_laughter(intervals: Sequence[LaughterInterval]) -> str:
    return "".join(
        _dump({"s": iv.start, "e": iv.end, "score": iv.score}) + "\n" for iv in intervals
    )


def serialize_heatmaps(frames: Sequence[HeatmapFrame]) -> str:
    lines = []
    for f in frames:
        h, w = f.grid.shape
        lines.append(_dump({"t": f.timestamp, "h": h, "w": w, "v": f.grid.reshape(-1).tolist()}))
    return "".join(line + "\n" for line in lines)


def serialize_face_embeddings(frames: Sequence[tuple[float, np.ndarray]]) -> str:
    return "".join(
        _dump({"t": t, "v": np.asarray(v, dtype=np.float64).tolist()}) + "\n" for t, v in frames
    )


def serialize_voice_embeddings(embeddings: dict[int, VoiceEmbedding]) -> str:
    return "".join(
        _dump({"segment_id": seg_id, "v": emb.vector.tolist()}) + "\n"
        for seg_id, emb in sorted(embeddings.items())
    )


def serialize_gt(segments: Sequence[GTSegment]) -> str:
    return "".join(
        _dump({"s": s.start, "e": s.end, "speaker": s.speaker, "text": s.text}) + "\n"
        for s in segments
    )


def serialize_exemplars(records: Sequence[ExemplarRecord]) -> str:
    return "".join(
        _dump(
            {
                "segment_id": r.segment_id,
                "episode_id": r.episode_id,
                "character_id": r.character_id,
                "v": r.embedding.vector.tolist(),
            }
        )
        + "\n"
        for r in records
    )


def _terminates_sentence(text: str, abbreviations: Sequence[str]) -> bool:
    stripped = text.strip()
    if not stripped.endswith(TERMINAL_CHARS):
        return False
    return stripped.lower() not in abbreviations


def sentence_segments(
    words: Sequence[WordToken],
    abbreviations: Optional[Sequence[str]] = None,
    max_word_gap: float = 3.0,
) -> list[SpeechSegment]:
    """Group a sorted word stream into sentence-level speech segments.

    A segment closes after a word ending in '.', '?', '!' or an ellipsis, unless
    that word is a known abbreviation. A silence longer than `max_word_gap`
    between consecutive words also forces a break; a trailing unterminated run
    forms a final segment. Every word lands in exactly one segment.
    """
    if abbreviations is None:
        abbreviations = DEFAULT_ABBREVIATIONS
    segments: list[SpeechSegment] = []
    lo = 0
    for i, word in enumerate(words):
        last = i + 1 == len(words)
        gap_break = not last and words[i + 1].start - word.end > max_word_gap
        if last or gap_break or _terminates_sentence(word.text, abbreviations):
            segments.append(_make_segment(len(segments), words, lo, i + 1))
            lo = i + 1
    return segments


def _make_segment(seg_id: int, words: Sequence[WordToken], lo: int, hi: int) -> SpeechSegment:
    chunk = words[lo:hi]
    return SpeechSegment(
        id=seg_id,
        start=chunk[0].start,
        end=chunk[-1].end,
        text=" ".join(w.text for w in chunk),
        word_range=(lo, hi),
    )


@dataclass(frozen=True)
class EpisodeManifest:
    """Locations and dimensions of one episode's feature files."""

    episode_id: str
    series_id: str
    words: Path
    laughter: Path
    heatmaps: Path
    face_frames: Path
    voice_embeddings: Optional[Path]
    heatmap_fps: float
    voice_dim: int
    face_dim: int
    transcript: Optional[Path] = None
    truth: Optional[Path] = None


def load_manifest(path: Union[str, Path]) -> EpisodeManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: cannot read manifest: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: manifest must be a JSON object")

    def resolve(key: str, required: bool = True) -> Optional[Path]:
        value = doc.get(key)
        if value is None:
            if required:
                raise SchemaError(f"{path}: manifest missing {key!r}")
            return None
        return (path.parent / value).resolve()

    for key in ("episode_id", "series_id", "heatmap_fps", "voice_dim", "face_dim"):
        if key not in doc:
            raise SchemaError(f"{path}: manifest missing {key!r}")
    return EpisodeManifest(
        episode_id=str(doc["episode_id"]),
        series_id=str(doc["series_id"]),
        words=resolve("words"),
        laughter=resolve("laughter"),
        heatmaps=resolve("heatmaps"),
        face_frames=resolve("face_frames"),
        voice_embeddings=resolve("voice_embeddings", required=False),
        heatmap_fps=float(doc["heatmap_fps"]),
        voice_dim=int(doc["voice_dim"]),
        face_dim=int(doc["face_dim"]),
        transcript=resolve("transcript", required=False),
        truth=resolve("truth", required=False),
    )


@dataclass
class Episode:
    """A fully parsed episode: the unit the pipeline stages operate on."""

    manifest: EpisodeManifest
    words: list[WordToken]
    segments: list[SpeechSegment]
    laughter: list[LaughterInterval]
    heatmaps: list[HeatmapFrame]
    face_frames: list[tuple[float, np.ndarray]]
    voice: dict[int, VoiceEmbedding] = field(default_factory=dict)

    @property
    def episode_id(self) -> str:
        return self.manifest.episode_id


def _read(path: Path):
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def load_episode(manifest: EpisodeManifest, config: PipelineConfig) -> Episode:
    """Parse every feature file named in the manifest and segment the word stream."""
    if manifest.voice_dim != config.voice_dim or manifest.face_dim != config.face_dim:
        raise DataError(
            f"{manifest.episode_id}: manifest dims "
            f"({manifest.voice_dim}, {manifest.face_dim}) do not match config "
            f"({config.voice_dim}, {config.face_dim})"
        )
    words = parse_words(_read(manifest.words), where=str(manifest.words))
    segments = sentence_segments(
        words,
        abbreviations=tuple(a.lower() for a in config.abbreviations),
        max_word_gap=config.max_word_gap,
    )
    laughter = parse_laughter(_read(manifest.laughter), where=str(manifest.laughter))
    heatmaps = parse_heatmaps(_read(manifest.heatmaps), where=str(manifest.heatmaps))
    face_frames = parse_face_embeddings(
        _read(manifest.face_frames), dim=config.face_dim, where=str(manifest.face_frames)
    )
    voice: dict[int, VoiceEmbedding] = {}
    if manifest.voice_embeddings is not None:
        voice = parse_voice_embeddings(
            _read(manifest.voice_embeddings),
            dim=config.voice_dim,
            where=str(manifest.voice_embeddings),
        )
    log.info(
        "stage=ingest episode=%s words=%d segments=%d laughter=%d heatmap_frames=%d",
        manifest.episode_id,
        len(words),
        len(segments),
        len(laughter),
        len(heatmaps),
    )
    return Episode(
        manifest=manifest,
        words=words,
        segments=segments,
        laughter=laughter,
        heatmaps=heatmaps,
        face_frames=face_frames,
        voice=voice,
    )


@dataclass(frozen=True)
class SeriesConfig:
    """The per-series document: cast, episode manifests, and threshold overrides."""

    series_id: str
    cast: list[CastEntry]
    manifests: list[EpisodeManifest]
    config: PipelineConfig
    root: Path

    def alias_table(self) -> dict[str, str]:
        """Case-insensitive speaker-name lookup used by the transcript aligner."""
        table: dict[str, str] = {}
        for entry in self.cast:
            table[entry.character_id.lower()] = entry.character_id
            table[entry.display_name.lower()] = entry.character_id
            for alias in entry.aliases:
                table[alias.lower()] = entry.character_id
        return table

    def display_names(self) -> dict[str, str]:
        return {entry.character_id: entry.display_name for entry in self.cast}


def load_series(path: Union[str, Path]) -> SeriesConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise SchemaError(f"{path}: cannot read series config: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: series config must be a mapping")
    for key in ("series_id", "cast", "episodes", "cast_embeddings"):
        if key not in doc:
            raise SchemaError(f"{path}: series config missing {key!r}")

    config = PipelineConfig.from_mapping(doc.get("config") or {})
    root = path.parent

    prototypes: dict[str, np.ndarray] = {}
    emb_path = (root / doc["cast_embeddings"]).resolve()
    for lineno, rec in _records(_read(emb_path), str(emb_path)):
        cid = _require(rec, "character_id", str(emb_path), lineno)
        vec = np.asarray(_require(rec, "v", str(emb_path), lineno), dtype=np.float64)
        if vec.shape[0] != config.face_dim:
            raise SchemaError(
                f"{emb_path}:{lineno}: prototype dimension {vec.shape[0]} != {config.face_dim}"
            )
        prototypes[cid] = vec

    cast: list[CastEntry] = []
    seen: set[str] = set()
    for i, entry in enumerate(doc["cast"]):
        cid = entry.get("character_id")
        if not cid:
            raise SchemaError(f"{path}: cast entry {i} missing character_id")
        if cid in seen:
            raise SchemaError(f"{path}: duplicate character_id {cid!r}")
        seen.add(cid)
        if cid not in prototypes:
            raise SchemaError(f"{path}: no prototype embedding for character {cid!r}")
        cast.append(
            CastEntry(
                character_id=cid,
                display_name=entry.get("display_name", cid),
                prototype=prototypes[cid],
                episodes=frozenset(entry.get("episodes") or ()),
                aliases=tuple(entry.get("aliases") or ()),
            )
        )

    manifests = [load_manifest((root / p).resolve()) for p in doc["episodes"]]
    ids = [m.episode_id for m in manifests]
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{path}: duplicate episode ids in series config")
    return SeriesConfig(
        series_id=str(doc["series_id"]), cast=cast, manifests=manifests, config=config, root=root
    )


def validate_episode(manifest: EpisodeManifest, config: PipelineConfig) -> dict[str, int]:
    """Parse every file in the manifest, returning record counts per file.

    This is the adapter contract: a feature export is valid exactly when this
    function accepts it.
    """
    episode = load_episode(manifest, config)
    counts = {
        "words": len(episode.words),
        "segments": len(episode.segments),
        "laughter": len(episode.laughter),
        "heatmaps": len(episode.heatmaps),
        "face_frames": len(episode.face_frames),
        "voice_embeddings": len(episode.voice),
    }
    if episode.voice:
        segment_ids = {s.id for s in episode.segments}
        missing = sorted(segment_ids - set(episode.voice))
        extra = sorted(set(episode.voice) - segment_ids)
        if missing:
            raise DataError(
                f"{manifest.episode_id}: voice embeddings missing for segments {missing}"
            )
        if extra:
            raise DataError(
                f"{manifest.episode_id}: voice embeddings for nonexistent segments {extra}"
            )
    if manifest.truth is not None:
        counts["truth"] = len(parse_gt(_read(manifest.truth), where=str(manifest.truth)))
    return counts
