"""Feature exporters for the castline engine.

These scripts wrap the pretrained models (ASR with word timestamps, laughter
detection, speaker embeddings, audio-visual localization, face classification)
and write the engine's newline-delimited feature schemas. The engine never
imports this package; schema conformance, checked by `castline validate`, is
the whole contract.
"""

from .backends import ModelUnavailableError, StubBackend, resolve
from .export import (
    build_cast_prototypes,
    export_episode,
    export_face_frames,
    export_heatmaps,
    export_laughter,
    export_voice,
    export_words,
    scaffold_series,
)

__version__ = "0.1.0"

__all__ = [
    "ModelUnavailableError",
    "StubBackend",
    "resolve",
    "build_cast_prototypes",
    "export_episode",
    "export_face_frames",
    "export_heatmaps",
    "export_laughter",
    "export_voice",
    "export_words",
    "scaffold_series",
    "__version__",
]
