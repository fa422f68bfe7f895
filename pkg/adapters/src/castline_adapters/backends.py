"""Feature backends: wrappers around the pretrained models, plus a deterministic stub.

Each backend produces plain dict records matching the engine's documented file
schemas. Real model wrappers import their dependencies lazily and raise
ModelUnavailableError with install guidance when a dependency or checkpoint is
missing; nothing here ever imports the engine itself.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np


class ModelUnavailableError(RuntimeError):
    """A pretrained model (or its runtime) is not installed or cannot be loaded."""


def _require(module_name: str, hint: str):
    try:
        return __import__(module_name)
    except ImportError as exc:
        raise ModelUnavailableError(
            f"backend needs {module_name!r} which is not available ({exc}); {hint}"
        ) from None


WORD_BANK = (
    "okay so here we are again with another line of perfectly ordinary speech "
    "that nobody wrote down before now please carry on talking thanks"
).split()


@dataclass
class StubBackend:
    """Deterministic synthetic features keyed by (seed, media path).

    Stands in for every model during contract tests and offline development:
    identical inputs produce byte-identical exports. With `cast` attached,
    every stream agrees on a per-segment speaker, so the exported corpus is
    minable end to end, not just parseable.
    """

    seed: int = 0
    voice_dim: int = 16
    face_dim: int = 8
    heatmap_height: int = 16
    heatmap_width: int = 16
    heatmap_fps: float = 5.0
    cast: tuple[str, ...] = ()
    name = "stub"
    version = "1"

    def _rng(self, media: str, stream: str) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}:{stream}:{media}".encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def _speaker(self, segment_id: int) -> Optional[str]:
        if not self.cast:
            return None
        return self.cast[segment_id % len(self.cast)]

    def _direction(self, key: str, dim: int) -> np.ndarray:
        vec = self._rng(key, "direction").normal(size=dim)
        return vec / np.linalg.norm(vec)

    def _segment_plan(self, media: str) -> list[dict]:
        """Sentence-shaped word groups; terminal punctuation only at group ends."""
        rng = self._rng(media, "words")
        n_segments = int(rng.integers(6, 12))
        plan = []
        t = 0.5
        for seg_id in range(n_segments):
            t += float(rng.uniform(0.3, 1.0))
            n_words = int(rng.integers(3, 8))
            words = []
            for k in range(n_words):
                text = WORD_BANK[int(rng.integers(len(WORD_BANK)))]
                if k == n_words - 1:
                    text += "."
                start = round(t, 3)
                end = round(t + float(rng.uniform(0.2, 0.45)), 3)
                words.append({"w": text, "s": start, "e": end})
                t = end + float(rng.uniform(0.02, 0.1))
            plan.append({"segment_id": seg_id, "words": words})
        return plan

    def words(self, media: str) -> list[dict]:
        return [w for seg in self._segment_plan(media) for w in seg["words"]]

    def laughter(self, media: str) -> list[dict]:
        rng = self._rng(media, "laughter")
        plan = self._segment_plan(media)
        out = []
        for index, seg in enumerate(plan):
            # the first interval is always present (sub-threshold) so every
            # export exercises the laughter parser
            if index == 0 or rng.random() < 0.2:
                start = seg["words"][0]["s"]
                out.append(
                    {
                        "s": start,
                        "e": round(start + 0.4, 3),
                        "score": 0.3 if index == 0 else round(float(rng.uniform(0.1, 0.99)), 3),
                    }
                )
        return out

    def segments(self, media: str) -> list[dict]:
        return [
            {
                "segment_id": seg["segment_id"],
                "s": seg["words"][0]["s"],
                "e": seg["words"][-1]["e"],
            }
            for seg in self._segment_plan(media)
        ]

    def voice(self, media: str, segments: Iterable[dict]) -> list[dict]:
        rng = self._rng(media, "voice")
        out = []
        for seg in segments:
            seg_id = int(seg["segment_id"])
            speaker = self._speaker(seg_id)
            if speaker is None:
                vec = rng.normal(size=self.voice_dim)
            else:
                vec = self._direction(f"voice:{speaker}", self.voice_dim)
                vec = vec + rng.normal(scale=0.05, size=self.voice_dim)
            vec /= np.linalg.norm(vec)
            out.append({"segment_id": seg_id, "v": vec.tolist()})
        return out

    def heatmaps(self, media: str) -> list[dict]:
        rng = self._rng(media, "heatmaps")
        h, w = self.heatmap_height, self.heatmap_width
        out = []
        for seg in self._segment_plan(media):
            start, end = seg["words"][0]["s"], seg["words"][-1]["e"]
            peak = (int(rng.integers(1, h - 1)), int(rng.integers(1, w - 1)))
            t = start
            while t < end:
                grid = np.zeros((h, w))
                grid[peak] = 0.95
                out.append({"t": round(t, 3), "h": h, "w": w, "v": grid.reshape(-1).tolist()})
                t += 1.0 / self.heatmap_fps
        return out

    def face_frames(self, media: str) -> list[dict]:
        rng = self._rng(media, "faces")
        out = []
        for seg in self._segment_plan(media):
            speaker = self._speaker(seg["segment_id"])
            start, end = seg["words"][0]["s"], seg["words"][-1]["e"]
            t = start
            while t < end:
                if speaker is None:
                    vec = rng.normal(size=self.face_dim)
                else:
                    vec = self._direction(f"face:{speaker}", self.face_dim)
                    vec = vec + rng.normal(scale=0.02, size=self.face_dim)
                vec /= np.linalg.norm(vec)
                out.append({"t": round(t, 3), "v": vec.tolist()})
                t += 1.0 / self.heatmap_fps
        return out

    def cast_prototypes(self, names: Iterable[str], images=None) -> list[dict]:
        return [
            {"character_id": name, "v": self._direction(f"face:{name}", self.face_dim).tolist()}
            for name in names
        ]


@dataclass
class WhisperXBackend:
    """Word-timestamped ASR via WhisperX (language-guided VAD + alignment)."""

    model_name: str = "medium.en"
    device: str = "cpu"
    name = "whisperx"

    @property
    def version(self) -> str:
        module = _require("whisperx", "pip install whisperx")
        return getattr(module, "__version__", "unknown")

    def words(self, media: str) -> list[dict]:
        whisperx = _require("whisperx", "pip install whisperx")
        model = whisperx.load_model(self.model_name, device=self.device)
        audio = whisperx.load_audio(media)
        result = model.transcribe(audio)
        align_model, metadata = whisperx.load_align_model(
            language_code=result["language"], device=self.device
        )
        aligned = whisperx.align(
            result["segments"], align_model, metadata, audio, self.device
        )
        out = []
        for segment in aligned["segments"]:
            for word in segment.get("words", []):
                if "start" not in word:
                    continue
                record = {
                    "w": word["word"].strip(),
                    "s": float(word["start"]),
                    "e": float(word["end"]),
                }
                if "score" in word:
                    record["c"] = float(word["score"])
                out.append(record)
        return out


@dataclass
class LaughterDetectorBackend:
    """Audience-laughter detection intervals with confidence scores."""

    device: str = "cpu"
    name = "laughter-detector"
    version = "unknown"

    def laughter(self, media: str) -> list[dict]:
        detector = _require(
            "laughter_detection",
            "install the laughter-detection package and its checkpoint",
        )
        events = detector.detect(media, device=self.device)
        return [
            {"s": float(e["start"]), "e": float(e["end"]), "score": float(e["prob"])}
            for e in events
        ]


@dataclass
class EcapaVoiceBackend:
    """Per-segment speaker embeddings from ECAPA-TDNN pretrained on VoxCeleb."""

    source: str = "speechbrain/spkrec-ecapa-voxceleb"
    device: str = "cpu"
    name = "ecapa-tdnn"
    voice_dim: int = 192

    @property
    def version(self) -> str:
        module = _require("speechbrain", "pip install speechbrain")
        return getattr(module, "__version__", "unknown")

    def voice(self, media: str, segments: Iterable[dict]) -> list[dict]:
        speechbrain = _require("speechbrain", "pip install speechbrain")
        torchaudio = _require("torchaudio", "pip install torchaudio")
        from speechbrain.pretrained import EncoderClassifier  # noqa: PLC0415

        classifier = EncoderClassifier.from_hparams(
            source=self.source, run_opts={"device": self.device}
        )
        waveform, rate = torchaudio.load(media)
        out = []
        for seg in segments:
            lo = int(float(seg["s"]) * rate)
            hi = int(float(seg["e"]) * rate)
            emb = classifier.encode_batch(waveform[:, lo:hi]).squeeze()
            out.append(
                {"segment_id": int(seg["segment_id"]), "v": [float(x) for x in emb]}
            )
        return out


@dataclass
class LWTNetBackend:
    """Audio-guided speaker localization heatmaps from a pretrained LWTNet."""

    checkpoint: Optional[str] = None
    device: str = "cpu"
    name = "lwtnet"
    version = "unknown"

    def heatmaps(self, media: str) -> list[dict]:
        _require("lwtnet", "install the audio-visual localizer and its checkpoint")
        raise ModelUnavailableError(
            "LWTNet inference requires the upstream repository's runner; "
            "point this backend at its exported heatmaps instead"
        )


@dataclass
class ClipPadBackend:
    """Frame-level visual embeddings and cast text-image prototypes (CLIP-PAD)."""

    device: str = "cpu"
    name = "clip-pad"
    version = "unknown"
    face_dim: int = 512

    def face_frames(self, media: str) -> list[dict]:
        _require("clip_pad", "install the CLIP-PAD classifier and its weights")
        raise ModelUnavailableError(
            "CLIP-PAD frame embedding requires the upstream model runner"
        )

    def cast_prototypes(self, names: Iterable[str], images=None) -> list[dict]:
        _require("clip_pad", "install the CLIP-PAD classifier and its weights")
        raise ModelUnavailableError(
            "CLIP-PAD prototype embedding requires the upstream model runner"
        )


BACKENDS = {
    "stub": StubBackend,
    "whisperx": WhisperXBackend,
    "laughter": LaughterDetectorBackend,
    "ecapa": EcapaVoiceBackend,
    "lwtnet": LWTNetBackend,
    "clip-pad": ClipPadBackend,
}


def resolve(name: str, **kwargs):
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}")
    return BACKENDS[name](**kwargs)
