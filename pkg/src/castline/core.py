"""Domain types, pipeline configuration, and the vector math shared by every stage."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

UNKNOWN = "UNKNOWN"

DEFAULT_ABBREVIATIONS = ("mr.", "mrs.", "dr.", "ms.", "st.", "jr.", "sr.")


class DataError(ValueError):
    """An input file, record, or value violates its contract."""


class SchemaError(DataError):
    """A serialized record does not conform to its documented schema."""


def as_vector(values, dim: Optional[int] = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 array, optionally checking its length."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DataError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DataError(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise DataError("vector contains non-finite entries")
    return v


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit L2 norm. The zero vector has no direction and raises."""
    v = as_vector(v)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DataError("cannot normalize the zero vector")
    return v / norm


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    Raises on dimension mismatch or a zero-norm input.
    """
    a = as_vector(a)
    b = as_vector(b)
    if a.shape[0] != b.shape[0]:
        raise DataError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine similarity is undefined for zero-norm vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_distance(a, b) -> float:
    """1 - cosine similarity; the voice metric used throughout the engine."""
    return 1.0 - cosine_similarity(a, b)


@dataclass(frozen=True)
class WordToken:
    text: str
    start: float
    end: float
    confidence: float = 1.0

    def __post_init__(self):
        if not self.text.strip():
            raise DataError("word text is empty")
        if self.end < self.start:
            raise DataError(f"word {self.text!r}: end {self.end} < start {self.start}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"word confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class SpeechSegment:
    """A sentence-level unit of speech, assumed to have a single speaker."""

    id: int
    start: float
    end: float
    text: str
    word_range: tuple[int, int]  # half-open interval into the episode word list

    def __post_init__(self):
        if self.end <= self.start:
            raise DataError(f"segment {self.id}: end {self.end} <= start {self.start}")
        lo, hi = self.word_range
        if hi <= lo:
            raise DataError(f"segment {self.id}: empty word range {self.word_range}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class LaughterInterval:
    start: float
    end: float
    score: float

    def __post_init__(self):
        if self.end <= self.start:
            raise DataError(f"laughter interval end {self.end} <= start {self.start}")
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"laughter score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class VoiceEmbedding:
    """Opaque speaker-model output; the engine only ever takes cosine distances on it."""

    vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vector", as_vector(self.vector))

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])

    def normalized(self) -> np.ndarray:
        return l2_normalize(self.vector)


@dataclass(frozen=True)
class HeatmapFrame:
    """One audio-guided localization map over the video frame at `timestamp`."""

    timestamp: float
    grid: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
            raise DataError(f"heatmap grid must be 2-D and non-empty, got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise DataError("heatmap contains non-finite values")
        if g.min() < 0.0 or g.max() > 1.0:
            raise DataError("heatmap values outside [0, 1]")
        object.__setattr__(self, "grid", g)


class Peak(NamedTuple):
    row: int
    col: int
    value: float


@dataclass(frozen=True)
class PeakSet:
    peaks: tuple[Peak, ...]

    def __len__(self) -> int:
        return len(self.peaks)


@dataclass(frozen=True)
class CastEntry:
    """A character plus the precomputed text-image prototype used to spot them on screen.

    An empty `episodes` set means the character may appear in any episode.
    """

    character_id: str
    display_name: str
    prototype: np.ndarray
    episodes: frozenset[str] = frozenset()
    aliases: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.character_id or self.character_id == UNKNOWN:
            raise DataError(f"invalid character_id {self.character_id!r}")
        object.__setattr__(self, "prototype", l2_normalize(self.prototype))

    def present_in(self, episode_id: str) -> bool:
        return not self.episodes or episode_id in self.episodes


@dataclass(frozen=True)
class ExemplarRecord:
    """A speech segment whose speaker was established with high precision."""

    episode_id: str
    segment_id: int
    character_id: str
    embedding: VoiceEmbedding


@dataclass(frozen=True)
class CharacterBank:
    """Per-character centroid voice representations built from exemplars."""

    centroids: dict[str, np.ndarray]
    counts: dict[str, int]

    def __post_init__(self):
        for cid, centroid in self.centroids.items():
            if abs(float(np.linalg.norm(centroid)) - 1.0) > 1e-6:
                raise DataError(f"centroid for {cid!r} is not unit norm")
            if self.counts.get(cid, 0) < 1:
                raise DataError(f"centroid for {cid!r} has no exemplar count")

    def __len__(self) -> int:
        return len(self.centroids)

    def characters(self) -> list[str]:
        return sorted(self.centroids)


@dataclass(frozen=True)
class Assignment:
    segment_id: Optional[int]
    label: str
    distance: float

    @property
    def is_unknown(self) -> bool:
        return self.label == UNKNOWN


@dataclass(frozen=True)
class GTSegment:
    start: float
    end: float
    speaker: str
    text: str

    def __post_init__(self):
        if self.end <= self.start:
            raise DataError(f"GT segment end {self.end} <= start {self.start}")


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline thresholds. Defaults are the published operating point."""

    laughter_threshold: float = 0.8
    tau_det: float = 0.7
    peak_count: int = 4
    nms_radius: Optional[int] = None  # None: max(1, min(H, W) // 8) per heatmap
    tau_rec: float = 0.85
    knn_k: int = 5
    unknown_distance_d: float = 0.4
    der_collar: float = 0.25
    long_segment_cutoff: float = 2.0
    voice_dim: int = 192
    face_dim: int = 512
    max_word_gap: float = 3.0
    abbreviations: tuple[str, ...] = DEFAULT_ABBREVIATIONS
    sweep_points: int = 50
    sweep_min: float = 0.0
    sweep_max: float = 2.0
    unknown_as_miss: bool = False
    vtt_voice_spans: bool = False

    def __post_init__(self):
        for name in ("laughter_threshold", "tau_det", "tau_rec"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DataError(f"{name} {value} outside [0, 1]")
        if self.peak_count < 1:
            raise DataError("peak_count must be >= 1")
        if self.nms_radius is not None and self.nms_radius < 1:
            raise DataError("nms_radius must be >= 1")
        if self.knn_k < 1:
            raise DataError("knn_k must be >= 1")
        if not 0.0 <= self.unknown_distance_d <= 2.0:
            raise DataError("unknown_distance_d must be within [0, 2]")
        if self.der_collar < 0.0:
            raise DataError("der_collar must be >= 0")
        if self.long_segment_cutoff < 0.0:
            raise DataError("long_segment_cutoff must be >= 0")
        if self.voice_dim < 1 or self.face_dim < 1:
            raise DataError("embedding dimensions must be >= 1")
        if self.max_word_gap <= 0.0:
            raise DataError("max_word_gap must be > 0")
        if self.sweep_points < 2:
            raise DataError("sweep_points must be >= 2")
        if not 0.0 <= self.sweep_min < self.sweep_max <= 2.0:
            raise DataError("sweep grid must satisfy 0 <= min < max <= 2")

    @classmethod
    def from_mapping(cls, mapping: Optional[dict] = None) -> "PipelineConfig":
        """Build a config from a plain dict; unknown keys are rejected."""
        mapping = dict(mapping or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        if "abbreviations" in mapping:
            mapping["abbreviations"] = tuple(str(a).lower() for a in mapping["abbreviations"])
        return cls(**mapping)

    def replace(self, **overrides) -> "PipelineConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(overrides)
        return PipelineConfig(**values)

    def nms_radius_for(self, height: int, width: int) -> int:
        if self.nms_radius is not None:
            return self.nms_radius
        return max(1, min(height, width) // 8)

    def sweep_grid(self) -> np.ndarray:
        return np.linspace(self.sweep_min, self.sweep_max, self.sweep_points)


def segment_overlap(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
    """Length of the intersection of two intervals (0 when disjoint or touching)."""
    return max(0.0, min(a_end, b_end) - max(a_start, b_start))
