"""Synthetic series generator: feature files plus ground truth, with controllable
difficulty, so the whole pipeline can be verified at desk scale.

Voice clusters are planted as unit vectors (orthonormalized when the dimension
allows) with Gaussian perturbation then renormalization, so the noise sigma
directly controls cosine-metric separability. The generator self-checks that
the engine's sentence tokenizer reproduces its planted segment boundaries,
which keeps segment ids consistent across the written files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from . import ingest
from .core import DataError, GTSegment, HeatmapFrame, LaughterInterval, WordToken

WORD_BANK = (
    "well you know what about that thing over there never mind look who came "
    "back again right now maybe later today nobody said anything funny stop "
    "doing this every time please just listen very carefully because it matters"
).split()

NAME_BANK = (
    "alice bruno clara dmitri elena felix greta hugo irene jonas katya loren "
    "marta nikolai olive pablo quinn rosa stefan tilda ursula viktor wanda "
    "xenia yusuf zelda arlo bianca caspar dora emil freya gideon hanna ivo "
    "jutta kieran luna milo nora"
).split()


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    series_id: str = "synth"
    n_characters: int = 8
    n_episodes: int = 3
    segments_per_episode: int = 200
    voice_dim: int = 16
    face_dim: int = 8
    voice_noise: float = 0.02
    face_noise: float = 0.02
    heatmap_height: int = 16
    heatmap_width: int = 16
    heatmap_fps: float = 5.0
    multi_speaker_fraction: float = 0.0
    off_screen_fraction: float = 0.0
    laughter_fraction: float = 0.0
    exemplarless_fraction: float = 0.0
    short_segment_fraction: float = 0.0
    short_noise_multiplier: float = 1.0

    def __post_init__(self):
        for name in (
            "multi_speaker_fraction",
            "off_screen_fraction",
            "laughter_fraction",
            "exemplarless_fraction",
            "short_segment_fraction",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DataError(f"{name} {value} outside [0, 1]")
        if self.voice_noise < 0 or self.face_noise < 0 or self.short_noise_multiplier < 0:
            raise DataError("noise parameters must be >= 0")
        if min(self.n_characters, self.n_episodes, self.segments_per_episode) < 1:
            raise DataError("characters, episodes, and segments must all be >= 1")
        if self.n_background() >= self.n_characters:
            raise DataError("exemplarless_fraction leaves no character with exemplars")
        if self.heatmap_height < 8 or self.heatmap_width < 8:
            raise DataError("heatmap grid must be at least 8x8 to place distinct peaks")

    def n_background(self) -> int:
        return int(self.exemplarless_fraction * self.n_characters)

    def replace(self, **overrides) -> "SynthConfig":
        return replace(self, **overrides)


def easy_config(seed: int = 0) -> SynthConfig:
    """Perfectly separable corpus: everyone on screen, no laughter, tight clusters."""
    return SynthConfig(seed=seed)


def noisy_config(seed: int = 0) -> SynthConfig:
    """A corpus exercising every filter plus noisy short segments."""
    return SynthConfig(
        seed=seed,
        n_characters=6,
        n_episodes=2,
        segments_per_episode=120,
        voice_noise=0.08,
        multi_speaker_fraction=0.1,
        off_screen_fraction=0.1,
        laughter_fraction=0.1,
        exemplarless_fraction=0.15,
        short_segment_fraction=0.3,
        short_noise_multiplier=6.0,
    )


def _unit_directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """`count` unit vectors; orthonormal when count <= dim, else normalized Gaussians."""
    raw = rng.normal(size=(dim, count))
    if count <= dim:
        q, r = np.linalg.qr(raw)
        return (q * np.sign(np.diag(r))).T
    vecs = rng.normal(size=(count, dim))
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def _perturb(rng: np.random.Generator, center: np.ndarray, sigma: float) -> np.ndarray:
    v = center + rng.normal(scale=sigma, size=center.shape) if sigma > 0 else center.copy()
    return v / np.linalg.norm(v)


def _round3(x: float) -> float:
    return round(x, 3)


@dataclass
class _Character:
    character_id: str
    display_name: str
    voice_center: np.ndarray
    prototype: np.ndarray
    peak_cell: tuple[int, int]
    background: bool  # never visibly on screen, so never yields exemplars


def _plan_characters(config: SynthConfig, rng: np.random.Generator) -> list[_Character]:
    voice_centers = _unit_directions(rng, config.n_characters, config.voice_dim)
    face_dirs = _unit_directions(rng, config.n_characters, config.face_dim)
    cells = []
    spacing = 4  # > default NMS radius for grids up to 32 wide
    for row in range(2, config.heatmap_height - 1, spacing):
        for col in range(2, config.heatmap_width - 1, spacing):
            cells.append((row, col))
    if len(cells) < config.n_characters + 1:
        raise DataError("heatmap grid too small for the cast size")
    n_background = config.n_background()
    characters = []
    for i in range(config.n_characters):
        name = NAME_BANK[i % len(NAME_BANK)] + ("" if i < len(NAME_BANK) else str(i))
        characters.append(
            _Character(
                character_id=name,
                display_name=name.capitalize(),
                voice_center=voice_centers[i],
                prototype=face_dirs[i],
                peak_cell=cells[i],
                background=i >= config.n_characters - n_background,
            )
        )
    return characters


def generate(config: SynthConfig, outdir: Path) -> Path:
    """Write a full synthetic corpus under `outdir`; returns the series config path.

    Identical configs produce byte-identical trees.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    characters = _plan_characters(config, rng)
    nobody = _nobody_direction(characters)

    cast_lines = []
    for ch in characters:
        cast_lines.append(
            json.dumps(
                {"character_id": ch.character_id, "v": ch.prototype.tolist()},
                ensure_ascii=False,
                separators=(",", ":"),
            )
        )
    (outdir / "cast_embeddings.ndjson").write_text(
        "".join(line + "\n" for line in cast_lines), encoding="utf-8"
    )

    episode_ids = [f"ep{e + 1:02d}" for e in range(config.n_episodes)]
    for episode_id in episode_ids:
        _generate_episode(config, rng, characters, nobody, outdir / episode_id, episode_id)

    series_doc = {
        "series_id": config.series_id,
        "cast_embeddings": "cast_embeddings.ndjson",
        "cast": [
            {
                "character_id": ch.character_id,
                "display_name": ch.display_name,
                "aliases": [ch.display_name.upper()],
                "episodes": episode_ids,
            }
            for ch in characters
        ],
        "episodes": [f"{episode_id}/manifest.json" for episode_id in episode_ids],
        "config": {
            "voice_dim": config.voice_dim,
            "face_dim": config.face_dim,
        },
    }
    series_path = outdir / "series.yaml"
    series_path.write_text(yaml.safe_dump(series_doc, sort_keys=False), encoding="utf-8")
    return series_path


def _nobody_direction(characters: list[_Character]) -> np.ndarray:
    """A visual direction far from every prototype, for off-screen frames.

    With orthonormal prototypes the normalized prototype sum has cosine
    1/sqrt(n) to each of them, well under any sensible recognition threshold.
    """
    protos = np.stack([ch.prototype for ch in characters])
    if len(characters) == 1:
        return -protos[0]
    return protos.sum(axis=0) / np.linalg.norm(protos.sum(axis=0))


def _generate_episode(
    config: SynthConfig,
    rng: np.random.Generator,
    characters: list[_Character],
    nobody: np.ndarray,
    episode_dir: Path,
    episode_id: str,
) -> None:
    episode_dir.mkdir(parents=True, exist_ok=True)
    h, w = config.heatmap_height, config.heatmap_width
    words: list[WordToken] = []
    laughter: list[LaughterInterval] = []
    heatmaps: list[HeatmapFrame] = []
    face_frames: list[tuple[float, np.ndarray]] = []
    voice: dict[int, np.ndarray] = {}
    truth: list[GTSegment] = []
    transcript_lines: list[str] = []
    planted_ranges: list[tuple[int, int]] = []

    cursor = 1.0
    for seg_index in range(config.segments_per_episode):
        ch_index = int(rng.integers(len(characters)))
        ch = characters[ch_index]
        short = rng.random() < config.short_segment_fraction
        if ch.background:
            mode = "off"
        else:
            roll = rng.random()
            if roll < config.multi_speaker_fraction:
                mode = "multi"
            elif roll < config.multi_speaker_fraction + config.off_screen_fraction:
                mode = "off"
            else:
                mode = "on"

        n_words = int(rng.integers(1, 3)) if short else int(rng.integers(6, 11))
        start = _round3(cursor + float(rng.uniform(0.4, 1.2)))
        t = start
        seg_words: list[WordToken] = []
        for k in range(n_words):
            duration = float(rng.uniform(0.2, 0.4)) if short else float(rng.uniform(0.33, 0.48))
            word = WORD_BANK[int(rng.integers(len(WORD_BANK)))]
            if k == n_words - 1:
                word += str(rng.choice([".", "?", "!"]))
            elif rng.random() < 0.05:
                word = "mr."  # abbreviation: must not end the sentence
            w_start, w_end = _round3(t), _round3(t + duration)
            seg_words.append(WordToken(text=word, start=w_start, end=w_end))
            t = w_end + float(rng.uniform(0.02, 0.06))
        end = seg_words[-1].end
        cursor = end

        planted_ranges.append((len(words), len(words) + len(seg_words)))
        words.extend(seg_words)
        text = " ".join(tok.text for tok in seg_words)
        truth.append(GTSegment(start=start, end=end, speaker=ch.character_id, text=text))
        transcript_lines.append(f"{ch.display_name.upper()}: {text}")

        sigma = config.voice_noise * (config.short_noise_multiplier if short else 1.0)
        voice[seg_index] = _perturb(rng, ch.voice_center, sigma)

        if rng.random() < config.laughter_fraction:
            span = end - start
            laughter.append(
                LaughterInterval(
                    start=_round3(start + 0.1 * span), end=_round3(start + 0.5 * span), score=0.9
                )
            )
        elif rng.random() < 0.08:
            # sub-threshold detection: must not remove anything
            laughter.append(LaughterInterval(start=start, end=_round3(end + 0.01), score=0.3))

        frame_times = np.arange(start, end, 1.0 / config.heatmap_fps)
        second = characters[(ch_index + 1) % len(characters)]
        for ft in frame_times:
            ft = _round3(float(ft))
            grid = np.zeros((h, w))
            if mode in ("on", "multi"):
                grid[ch.peak_cell] = 0.95
            if mode == "multi":
                grid[second.peak_cell] = 0.9
            heatmaps.append(HeatmapFrame(timestamp=ft, grid=grid))
            if mode == "on":
                face_frames.append((ft, _perturb(rng, ch.prototype, config.face_noise)))
            else:
                face_frames.append((ft, _perturb(rng, nobody, config.face_noise)))

    derived = ingest.sentence_segments(words)
    derived_ranges = [seg.word_range for seg in derived]
    if derived_ranges != planted_ranges:
        raise RuntimeError(
            "generator bug: sentence tokenizer does not reproduce planted boundaries"
        )

    (episode_dir / "words.ndjson").write_text(ingest.serialize_words(words), encoding="utf-8")
    (episode_dir / "laughter.ndjson").write_text(
        ingest.serialize_laughter(sorted(laughter, key=lambda iv: (iv.start, iv.end))),
        encoding="utf-8",
    )
    (episode_dir / "heatmaps.ndjson").write_text(
        ingest.serialize_heatmaps(heatmaps), encoding="utf-8"
    )
    (episode_dir / "face_frames.ndjson").write_text(
        ingest.serialize_face_embeddings(face_frames), encoding="utf-8"
    )
    voice_lines = "".join(
        json.dumps(
            {"segment_id": seg_id, "v": vec.tolist()}, ensure_ascii=False, separators=(",", ":")
        )
        + "\n"
        for seg_id, vec in sorted(voice.items())
    )
    (episode_dir / "voice_embeddings.ndjson").write_text(voice_lines, encoding="utf-8")
    (episode_dir / "truth.ndjson").write_text(ingest.serialize_gt(truth), encoding="utf-8")
    (episode_dir / "transcript.txt").write_text(
        "".join(line + "\n" for line in transcript_lines), encoding="utf-8"
    )
    manifest = {
        "episode_id": episode_id,
        "series_id": config.series_id,
        "words": "words.ndjson",
        "laughter": "laughter.ndjson",
        "heatmaps": "heatmaps.ndjson",
        "face_frames": "face_frames.ndjson",
        "voice_embeddings": "voice_embeddings.ndjson",
        "transcript": "transcript.txt",
        "truth": "truth.ndjson",
        "heatmap_fps": config.heatmap_fps,
        "voice_dim": config.voice_dim,
        "face_dim": config.face_dim,
    }
    (episode_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
