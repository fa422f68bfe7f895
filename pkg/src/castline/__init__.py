"""castline: character-attributed subtitling from precomputed episode features.

Two-stage engine: mine high-precision per-character voice exemplars from
audio-visual evidence, then assign every speech segment to a character (or
UNKNOWN) by nearest-centroid voice matching. Ships with DTW ground-truth
alignment, a diarisation evaluation suite, SRT/WebVTT output, and a synthetic
corpus generator for desk-scale verification.
"""

from .core import (
    Assignment,
    CastEntry,
    CharacterBank,
    DataError,
    ExemplarRecord,
    GTSegment,
    HeatmapFrame,
    LaughterInterval,
    PeakSet,
    PipelineConfig,
    SchemaError,
    SpeechSegment,
    UNKNOWN,
    VoiceEmbedding,
    WordToken,
    cosine_distance,
    cosine_similarity,
    l2_normalize,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "CastEntry",
    "CharacterBank",
    "DataError",
    "ExemplarRecord",
    "GTSegment",
    "HeatmapFrame",
    "LaughterInterval",
    "PeakSet",
    "PipelineConfig",
    "SchemaError",
    "SpeechSegment",
    "UNKNOWN",
    "VoiceEmbedding",
    "WordToken",
    "cosine_distance",
    "cosine_similarity",
    "l2_normalize",
    "__version__",
]
