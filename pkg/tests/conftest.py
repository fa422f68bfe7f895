from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import settings

from castline import ingest, synth

settings.register_profile("ci", deadline=None)
settings.load_profile("ci")


def load_corpus(series_path: Path):
    series = ingest.load_series(series_path)
    episodes = [ingest.load_episode(m, series.config) for m in series.manifests]
    return series, episodes


@pytest.fixture(scope="session")
def easy_small(tmp_path_factory):
    """A tiny perfectly-separable corpus shared across tests."""
    outdir = tmp_path_factory.mktemp("easy_small")
    config = synth.easy_config(seed=11).replace(
        n_characters=4, n_episodes=1, segments_per_episode=40
    )
    series_path = synth.generate(config, outdir)
    return load_corpus(series_path)


@pytest.fixture(scope="session")
def easy_small_path(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("easy_small_cli")
    config = synth.easy_config(seed=11).replace(
        n_characters=4, n_episodes=2, segments_per_episode=30
    )
    return synth.generate(config, outdir)
