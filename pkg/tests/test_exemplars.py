import math

import numpy as np
import pytest

from castline import exemplars as ex
from castline.core import (
    CastEntry,
    DataError,
    ExemplarRecord,
    HeatmapFrame,
    LaughterInterval,
    SpeechSegment,
    VoiceEmbedding,
)
from castline.exemplars import StageYield

from oracles import knn_keep_oracle, peak_oracle


def seg(i, start, end):
    return SpeechSegment(id=i, start=start, end=end, text=f"s{i}", word_range=(i, i + 1))


class TestFilterLaughter:
    def test_no_intervals_unchanged(self):
        segments = [seg(0, 0, 1), seg(1, 2, 3)]
        assert ex.filter_laughter(segments, [], 0.8) == segments

    def test_overlapping_high_score_removed(self):
        segments = [seg(0, 2, 4)]
        laughs = [LaughterInterval(3, 5, 0.9)]
        assert ex.filter_laughter(segments, laughs, 0.8) == []

    def test_below_threshold_kept(self):
        segments = [seg(0, 2, 4)]
        laughs = [LaughterInterval(3, 5, 0.5)]
        assert ex.filter_laughter(segments, laughs, 0.8) == segments

    def test_touching_is_not_overlap(self):
        segments = [seg(0, 2, 4)]
        laughs = [LaughterInterval(4, 5, 0.9)]
        assert ex.filter_laughter(segments, laughs, 0.8) == segments

    def test_order_preserved(self):
        segments = [seg(0, 0, 1), seg(1, 2, 3), seg(2, 4, 5)]
        laughs = [LaughterInterval(2.2, 2.5, 0.95)]
        assert [s.id for s in ex.filter_laughter(segments, laughs, 0.8)] == [0, 2]


class TestAverageHeatmap:
    def test_single_frame_unchanged(self):
        frame = HeatmapFrame(1.0, np.full((2, 2), 0.4))
        mean = ex.average_heatmap([frame], seg(0, 0.5, 1.5))
        assert np.array_equal(mean, frame.grid)

    def test_zero_and_one_average_to_half(self):
        frames = [
            HeatmapFrame(1.0, np.zeros((2, 3))),
            HeatmapFrame(1.2, np.ones((2, 3))),
        ]
        mean = ex.average_heatmap(frames, seg(0, 0.5, 1.5))
        assert np.allclose(mean, 0.5)

    def test_three_frame_cell_mean(self):
        frames = [HeatmapFrame(1.0 + 0.1 * i, np.full((1, 1), v)) for i, v in
                  enumerate([0.3, 0.6, 0.9])]
        mean = ex.average_heatmap(frames, seg(0, 0.9, 1.4))
        assert abs(mean[0, 0] - 0.6) <= 1e-9

    def test_endpoints_inclusive(self):
        frames = [HeatmapFrame(1.0, np.ones((1, 1))), HeatmapFrame(2.0, np.zeros((1, 1)))]
        mean = ex.average_heatmap(frames, seg(0, 1.0, 2.0))
        assert mean[0, 0] == 0.5

    def test_no_frames_returns_none(self):
        frames = [HeatmapFrame(5.0, np.ones((1, 1)))]
        assert ex.average_heatmap(frames, seg(0, 0.0, 1.0)) is None


class TestDetectPeaks:
    def test_all_zero_no_peaks(self):
        peaks = ex.detect_peaks(np.zeros((6, 6)), 0.7, 4, 1)
        assert len(peaks) == 0

    def test_single_hot_cell(self):
        grid = np.zeros((6, 6))
        grid[2, 3] = 0.9
        peaks = ex.detect_peaks(grid, 0.7, 4, 1)
        assert [(p.row, p.col, p.value) for p in peaks.peaks] == [(2, 3, 0.9)]

    def test_two_separated_peaks(self):
        grid = np.zeros((8, 8))
        grid[1, 1] = 0.9
        grid[6, 6] = 0.8
        peaks = ex.detect_peaks(grid, 0.7, 4, 2)
        assert [(p.row, p.col) for p in peaks.peaks] == [(1, 1), (6, 6)]

    def test_close_peaks_suppressed(self):
        grid = np.zeros((8, 8))
        grid[3, 3] = 0.9
        grid[3, 4] = 0.8
        peaks = ex.detect_peaks(grid, 0.7, 4, 2)
        assert [(p.row, p.col) for p in peaks.peaks] == [(3, 3)]

    def test_threshold_strictly_greater(self):
        grid = np.zeros((6, 6))
        grid[2, 2] = 0.7
        assert len(ex.detect_peaks(grid, 0.7, 4, 1)) == 0

    def test_peak_budget_consumed_before_threshold(self):
        # four mid-value candidates outrank a fifth hot cell only by value;
        # budget applies to detected candidates, threshold filters afterwards
        grid = np.zeros((12, 12))
        spots = [(1, 1), (1, 9), (9, 1), (9, 9)]
        for r, c in spots:
            grid[r, c] = 0.9
        grid[5, 5] = 0.75
        peaks = ex.detect_peaks(grid, 0.7, 4, 1)
        assert [(p.row, p.col) for p in peaks.peaks] == spots

    def test_matches_bruteforce_oracle_on_random_grids(self):
        rng = np.random.default_rng(7)
        values = np.array([0.0, 0.5, 0.75, 1.0])
        for _ in range(300):
            h = int(rng.integers(1, 9))
            w = int(rng.integers(1, 9))
            grid = values[rng.integers(0, 4, size=(h, w))]
            radius = int(rng.integers(1, 4))
            budget = int(rng.integers(1, 6))
            tau = float(rng.choice([0.4, 0.7]))
            got = [(p.row, p.col, p.value) for p in ex.detect_peaks(grid, tau, budget, radius).peaks]
            expected = peak_oracle(grid.tolist(), tau, budget, radius)
            assert got == expected, f"grid={grid} r={radius} k={budget} tau={tau}"


class TestGate:
    def test_counts(self):
        from castline.core import Peak, PeakSet

        one = PeakSet((Peak(0, 0, 0.9),))
        none = PeakSet(())
        two = PeakSet((Peak(0, 0, 0.9), Peak(4, 4, 0.8)))
        assert ex.single_speaker_gate(one)
        assert not ex.single_speaker_gate(none)
        assert not ex.single_speaker_gate(two)


def _cast(*entries):
    return [
        CastEntry(character_id=cid, display_name=cid.title(), prototype=proto)
        for cid, proto in entries
    ]


class TestClassifyCharacter:
    def test_exact_prototype_match(self):
        cast = _cast(("alice", [1.0, 0.0]), ("bob", [0.0, 1.0]))
        frames = [np.array([1.0, 0.0])] * 3
        assert ex.classify_character(frames, cast, 0.85) == "alice"

    def test_below_threshold_is_none(self):
        cast = _cast(("alice", [1.0, 0.0]))
        frames = [np.array([0.5, 0.866])]  # cosine 0.5
        assert ex.classify_character(frames, cast, 0.85) is None

    def test_between_two_cast_members(self):
        # frame at angle alpha: cos(alpha)=0.90 to A; B placed so its score is 0.88
        alpha = math.acos(0.90)
        beta = alpha + math.acos(0.88)
        cast = _cast(("aaa", [1.0, 0.0]), ("bbb", [math.cos(beta), math.sin(beta)]))
        frames = [np.array([math.cos(alpha), math.sin(alpha)])]
        assert ex.classify_character(frames, cast, 0.85) == "aaa"

    def test_exact_tie_is_ambiguous(self):
        cast = _cast(("aaa", [1.0, 0.0]), ("bbb", [0.0, 1.0]))
        frames = [np.array([1.0, 1.0])]
        assert ex.classify_character(frames, cast, 0.5) is None

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        cast = _cast(("alice", rng.normal(size=6)), ("bob", rng.normal(size=6)))
        frames = [rng.normal(size=6) for _ in range(4)]
        base = ex.classify_character(frames, cast, 0.0)
        for scale in (0.001, 7.0, 4096.0):
            scaled = [scale * f for f in frames]
            assert ex.classify_character(scaled, cast, 0.0) == base

    def test_mean_aggregation(self):
        # one on-target and one off-target frame: mean similarity decides
        cast = _cast(("alice", [1.0, 0.0]))
        frames = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        assert ex.classify_character(frames, cast, 0.85) is None
        assert ex.classify_character(frames, cast, 0.45) == "alice"

    def test_dimension_mismatch(self):
        cast = _cast(("alice", [1.0, 0.0]))
        with pytest.raises(DataError):
            ex.classify_character([np.array([1.0, 0.0, 0.0])], cast, 0.85)


def _record(ep, sid, label, vec):
    return ExemplarRecord(ep, sid, label, VoiceEmbedding(np.asarray(vec, dtype=float)))


def _cluster(rng, center, n, label, ep="e1", start_id=0, spread=0.05):
    out = []
    for i in range(n):
        v = np.asarray(center, dtype=float) + rng.normal(scale=spread, size=len(center))
        out.append(_record(ep, start_id + i, label, v))
    return out


class TestKnnFilter:
    def test_small_class_kept_unconditionally(self):
        rng = np.random.default_rng(0)
        records = _cluster(rng, [1, 0, 0], 3, "alice")
        assert ex.knn_filter(records, 5) == records

    def test_tight_cluster_kept(self):
        rng = np.random.default_rng(1)
        records = _cluster(rng, [1, 0, 0], 10, "alice") + _cluster(
            rng, [0, 1, 0], 10, "bob", start_id=100
        )
        assert ex.knn_filter(records, 5) == records

    def test_mislabeled_record_removed(self):
        rng = np.random.default_rng(2)
        # tight cluster, intruder well inside alice territory but on its rim:
        # every record's nearest neighbours stay within the cluster
        records = _cluster(rng, [1, 0, 0], 20, "alice", spread=0.01)
        intruder = _record("e1", 999, "bob", [1.0, 0.1, 0.0])
        # bob needs >= k records overall for the vote to apply to him
        records += _cluster(rng, [0, 0, 1], 6, "bob", start_id=500, spread=0.01)
        kept = ex.knn_filter(records + [intruder], 5)
        assert intruder not in kept
        assert all(r in kept for r in records)

    def test_class_of_exactly_k_records_is_wiped(self):
        # with n == k a record has only k-1 same-label neighbours, so the
        # unanimity vote can never pass; only n < k is exempt from the vote
        rng = np.random.default_rng(9)
        five = _cluster(rng, [1, 0, 0], 5, "alice")
        other = _cluster(rng, [0, 1, 0], 8, "bob", start_id=100)
        kept = ex.knn_filter(five + other, 5)
        assert [r.character_id for r in kept] == ["bob"] * 8

    def test_output_subset_and_order(self):
        rng = np.random.default_rng(3)
        records = _cluster(rng, [1, 0], 8, "alice") + _cluster(rng, [0, 1], 8, "bob", start_id=50)
        kept = ex.knn_filter(records, 3)
        ids = [(r.episode_id, r.segment_id) for r in kept]
        all_ids = [(r.episode_id, r.segment_id) for r in records]
        assert ids == [i for i in all_ids if i in set(ids)]

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(4)
        for trial in range(25):
            n_chars = int(rng.integers(2, 5))
            records = []
            for c in range(n_chars):
                center = rng.normal(size=4)
                count = int(rng.integers(1, 12))
                records += _cluster(
                    rng,
                    center,
                    count,
                    f"char{c}",
                    ep=f"e{c % 2}",
                    start_id=c * 100,
                    spread=0.4,
                )
            k = int(rng.integers(1, 7))
            kept = ex.knn_filter(records, k)
            oracle_rows = [
                (r.episode_id, r.segment_id, r.character_id, r.embedding.vector.tolist())
                for r in records
            ]
            expected = [r for r, keep in zip(records, knn_keep_oracle(oracle_rows, k)) if keep]
            assert kept == expected, f"trial {trial} k={k}"


class TestStageYield:
    def test_monotone_ok(self):
        y = StageYield(vad=2107, av_gate=1271, visual=806, audio_filter=407)
        assert y.percentages() == pytest.approx((100.0, 60.32, 38.25, 19.32), abs=0.01)

    def test_violation_fails(self):
        with pytest.raises(DataError, match="non-increasing"):
            StageYield(vad=10, av_gate=12, visual=5, audio_filter=1)

    def test_zero_vad_percentages(self):
        assert StageYield(0, 0, 0, 0).percentages() == (0.0, 0.0, 0.0, 0.0)


class TestBuildExemplars:
    def test_easy_corpus_full_yield(self, easy_small):
        series, episodes = easy_small
        records, yields = ex.build_exemplars(episodes, series.cast, series.config)
        assert yields.vad == 40
        assert yields.vad >= yields.av_gate >= yields.visual >= yields.audio_filter
        assert yields.audio_filter == len(records)
        from castline import ingest

        truth = ingest.parse_gt(series.manifests[0].truth.read_text().splitlines())
        # perfectly separable corpus: every gated, visible, named segment becomes
        # an exemplar except classes of exactly k records, which the unanimity
        # vote wipes by construction
        from collections import Counter

        class_sizes = Counter(t.speaker for t in truth)
        expected_kept = sum(n for n in class_sizes.values() if n != series.config.knn_k)
        assert yields.visual == 40
        assert yields.audio_filter == expected_kept
        truth_by_id = {}
        segments = episodes[0].segments
        for t_seg, seg in zip(truth, segments):
            truth_by_id[seg.id] = t_seg.speaker
        for record in records:
            assert record.character_id == truth_by_id[record.segment_id]

    def test_empty_episode(self, easy_small):
        series, episodes = easy_small
        from castline.ingest import Episode

        empty = Episode(
            manifest=episodes[0].manifest,
            words=[],
            segments=[],
            laughter=[],
            heatmaps=[],
            face_frames=[],
            voice={},
        )
        records, yields = ex.build_exemplars([empty], series.cast, series.config)
        assert records == []
        assert yields == StageYield(0, 0, 0, 0)

    def test_missing_voice_embedding_errors(self, easy_small):
        series, episodes = easy_small
        from castline.ingest import Episode

        ep = episodes[0]
        broken = Episode(
            manifest=ep.manifest,
            words=ep.words,
            segments=ep.segments,
            laughter=ep.laughter,
            heatmaps=ep.heatmaps,
            face_frames=ep.face_frames,
            voice={},
        )
        with pytest.raises(DataError, match="no voice embedding"):
            ex.build_exemplars([broken], series.cast, series.config)
