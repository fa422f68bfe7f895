import hashlib
from pathlib import Path

import numpy as np
import pytest

from castline import assigner, exemplars, ingest, synth
from castline.core import DataError

from conftest import load_corpus


def _tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestConfigValidation:
    def test_bad_fraction(self):
        with pytest.raises(DataError):
            synth.SynthConfig(laughter_fraction=1.5)

    def test_all_characters_exemplarless(self):
        with pytest.raises(DataError, match="exemplarless"):
            synth.SynthConfig(n_characters=4, exemplarless_fraction=1.0)

    def test_zero_counts(self):
        with pytest.raises(DataError):
            synth.SynthConfig(n_characters=0)

    def test_tiny_heatmap_rejected(self):
        with pytest.raises(DataError):
            synth.SynthConfig(heatmap_height=4)


class TestDeterminism:
    def test_same_seed_identical_bytes(self, tmp_path):
        config = synth.easy_config(seed=5).replace(
            n_characters=3, n_episodes=2, segments_per_episode=15
        )
        synth.generate(config, tmp_path / "a")
        synth.generate(config, tmp_path / "b")
        assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        base = synth.easy_config(seed=1).replace(
            n_characters=3, n_episodes=1, segments_per_episode=10
        )
        synth.generate(base, tmp_path / "a")
        synth.generate(base.replace(seed=2), tmp_path / "b")
        assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "b")


class TestPlantedStructure:
    def test_planted_peak_recovered_exactly(self, easy_small):
        series, episodes = easy_small
        episode = episodes[0]
        config = series.config
        found = 0
        for seg in episode.segments:
            mean_map = exemplars.average_heatmap(episode.heatmaps, seg)
            assert mean_map is not None
            radius = config.nms_radius_for(*mean_map.shape)
            peaks = exemplars.detect_peaks(mean_map, config.tau_det, config.peak_count, radius)
            assert len(peaks) == 1
            found += 1
        assert found == len(episode.segments)

    def test_all_multi_speaker_yields_no_exemplars(self, tmp_path):
        config = synth.SynthConfig(
            seed=3, n_characters=3, n_episodes=1, segments_per_episode=20,
            multi_speaker_fraction=1.0,
        )
        series, episodes = load_corpus(synth.generate(config, tmp_path))
        records, yields = exemplars.build_exemplars(episodes, series.cast, series.config)
        assert yields.av_gate == 0
        assert records == []

    def test_off_screen_segments_fail_the_gate(self, tmp_path):
        config = synth.SynthConfig(
            seed=4, n_characters=3, n_episodes=1, segments_per_episode=30,
            off_screen_fraction=1.0,
        )
        series, episodes = load_corpus(synth.generate(config, tmp_path))
        _, yields = exemplars.build_exemplars(episodes, series.cast, series.config)
        assert yields.av_gate == 0

    def test_laughter_fraction_removes_candidates(self, tmp_path):
        config = synth.SynthConfig(
            seed=5, n_characters=3, n_episodes=1, segments_per_episode=40,
            laughter_fraction=0.5,
        )
        series, episodes = load_corpus(synth.generate(config, tmp_path))
        _, yields = exemplars.build_exemplars(episodes, series.cast, series.config)
        assert 0 < yields.vad < 40

    def test_exemplarless_characters_have_no_exemplars(self, tmp_path):
        config = synth.SynthConfig(
            seed=6, n_characters=5, n_episodes=1, segments_per_episode=60,
            exemplarless_fraction=0.2,
        )
        series, episodes = load_corpus(synth.generate(config, tmp_path))
        records, _ = exemplars.build_exemplars(episodes, series.cast, series.config)
        truth = ingest.parse_gt(series.manifests[0].truth.read_text().splitlines())
        speakers = {t.speaker for t in truth}
        exemplar_chars = {r.character_id for r in records}
        background = speakers - exemplar_chars
        assert len(background) >= 1  # the planted background character spoke


def _end_to_end_accuracy(series, episodes) -> float:
    records, _ = exemplars.build_exemplars(episodes, series.cast, series.config)
    if not records:  # heavy noise can purge every exemplar; nothing is labelable
        return 0.0
    bank = assigner.build_centroids(records)
    correct = total = 0
    for episode, manifest in zip(episodes, series.manifests):
        truth = ingest.parse_gt(manifest.truth.read_text().splitlines())
        speaker_by_id = {s.id: t.speaker for s, t in zip(episode.segments, truth)}
        for a in assigner.assign_episode(episode, bank, series.config):
            total += 1
            if a.label == speaker_by_id[a.segment_id]:
                correct += 1
    return correct / total


class TestDifficultyMonotonicity:
    def test_accuracy_non_increasing_in_voice_noise(self, tmp_path):
        sigmas = (0.05, 0.35, 0.7)
        seeds = range(5)
        means = []
        for sigma in sigmas:
            accs = []
            for seed in seeds:
                config = synth.SynthConfig(
                    seed=seed, n_characters=4, n_episodes=1,
                    segments_per_episode=40, voice_noise=sigma,
                )
                series, episodes = load_corpus(
                    synth.generate(config, tmp_path / f"s{sigma}_{seed}")
                )
                accs.append(_end_to_end_accuracy(series, episodes))
            means.append(float(np.mean(accs)))
        inversions = sum(1 for lo, hi in zip(means, means[1:]) if hi > lo + 1e-9)
        assert inversions <= 1, f"accuracy means {means} not non-increasing"
