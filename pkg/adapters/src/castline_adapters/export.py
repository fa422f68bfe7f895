"""Exporters: run a backend over media and write the engine's feature-file schemas.

The schemas mirror the engine's documented adapter boundary:

    words:            {"w": str, "s": float, "e": float, "c": float?}
    laughter:         {"s": float, "e": float, "score": float}
    heatmaps:         {"t": float, "h": int, "w": int, "v": [float; h*w]}
    face frames:      {"t": float, "v": [float; Dv]}
    voice embeddings: {"segment_id": int, "v": [float; D]}

Every file is written atomically: a failure mid-export leaves nothing behind.
The episode manifest carries model name/version provenance so engine reports
can cite where each feature came from.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Sequence


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _ndjson(records: Iterable[dict]) -> str:
    return "".join(
        json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n" for r in records
    )


def _stream(backend, op: str):
    fn = getattr(backend, op, None)
    if fn is None:
        raise ValueError(
            f"backend {backend.name!r} does not provide {op!r}; pick a backend that does"
        )
    return fn


def export_words(backend, media: str, out_path: Path) -> int:
    records = _stream(backend, "words")(media)
    _write_atomic(Path(out_path), _ndjson(records))
    return len(records)


def export_laughter(backend, media: str, out_path: Path) -> int:
    records = _stream(backend, "laughter")(media)
    _write_atomic(Path(out_path), _ndjson(records))
    return len(records)


def export_voice(backend, media: str, segments: Sequence[dict], out_path: Path) -> int:
    records = _stream(backend, "voice")(media, segments)
    _write_atomic(Path(out_path), _ndjson(records))
    return len(records)


def export_heatmaps(backend, media: str, out_path: Path) -> int:
    records = _stream(backend, "heatmaps")(media)
    _write_atomic(Path(out_path), _ndjson(records))
    return len(records)


def export_face_frames(backend, media: str, out_path: Path) -> int:
    records = _stream(backend, "face_frames")(media)
    _write_atomic(Path(out_path), _ndjson(records))
    return len(records)


def build_cast_prototypes(backend, names: Sequence[str], out_path: Path, images=None) -> int:
    records = _stream(backend, "cast_prototypes")(names, images=images)
    _write_atomic(Path(out_path), _ndjson(records))
    return len(records)


def write_manifest(
    outdir: Path,
    episode_id: str,
    series_id: str,
    heatmap_fps: float,
    voice_dim: int,
    face_dim: int,
    provenance: dict,
) -> Path:
    manifest = {
        "episode_id": episode_id,
        "series_id": series_id,
        "words": "words.ndjson",
        "laughter": "laughter.ndjson",
        "heatmaps": "heatmaps.ndjson",
        "face_frames": "face_frames.ndjson",
        "voice_embeddings": "voice_embeddings.ndjson",
        "heatmap_fps": heatmap_fps,
        "voice_dim": voice_dim,
        "face_dim": face_dim,
        "provenance": provenance,
    }
    path = Path(outdir) / "manifest.json"
    _write_atomic(path, json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
    return path


def export_episode(
    backend,
    media: str,
    outdir: Path,
    episode_id: str = "ep01",
    series_id: str = "adapter-export",
) -> Path:
    """Export every feature stream for one media file plus its manifest.

    Voice embeddings are computed for the backend's own sentence-shaped
    segments, so the exported ids line up with what the engine derives from
    the words file.
    """
    outdir = Path(outdir)
    provenance = {"backend": backend.name, "version": str(backend.version)}
    export_words(backend, media, outdir / "words.ndjson")
    export_laughter(backend, media, outdir / "laughter.ndjson")
    export_heatmaps(backend, media, outdir / "heatmaps.ndjson")
    export_face_frames(backend, media, outdir / "face_frames.ndjson")
    export_voice(backend, media, backend.segments(media), outdir / "voice_embeddings.ndjson")
    return write_manifest(
        outdir,
        episode_id=episode_id,
        series_id=series_id,
        heatmap_fps=backend.heatmap_fps,
        voice_dim=backend.voice_dim,
        face_dim=backend.face_dim,
        provenance={key: {"model": provenance} for key in
                    ("words", "laughter", "heatmaps", "face_frames", "voice_embeddings")},
    )


def scaffold_series(
    outdir: Path,
    backend,
    media_files: Sequence[str],
    cast_names: Sequence[str],
    series_id: str = "adapter-export",
) -> Path:
    """Export several episodes plus cast prototypes and a series config scaffold.

    The result is a directory the engine can validate and run directly.
    """
    outdir = Path(outdir)
    if hasattr(backend, "cast"):
        backend.cast = tuple(cast_names)  # streams agree on per-segment speakers
    episode_dirs = []
    for index, media in enumerate(media_files):
        episode_id = f"ep{index + 1:02d}"
        export_episode(
            backend, media, outdir / episode_id, episode_id=episode_id, series_id=series_id
        )
        episode_dirs.append(episode_id)
    build_cast_prototypes(backend, cast_names, outdir / "cast_embeddings.ndjson")

    lines = [
        f"series_id: {series_id}",
        "cast_embeddings: cast_embeddings.ndjson",
        "cast:",
    ]
    for name in cast_names:
        lines.append(f"- character_id: {name}")
        lines.append(f"  display_name: {name.capitalize()}")
    lines.append("episodes:")
    for episode_id in episode_dirs:
        lines.append(f"- {episode_id}/manifest.json")
    lines.append("config:")
    lines.append(f"  voice_dim: {backend.voice_dim}")
    lines.append(f"  face_dim: {backend.face_dim}")
    series_path = outdir / "series.yaml"
    _write_atomic(series_path, "".join(line + "\n" for line in lines))
    return series_path
