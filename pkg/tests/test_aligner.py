import numpy as np
import pytest

from castline import aligner
from castline.core import DataError, SchemaError, SpeechSegment, WordToken

from oracles import dtw_cost_exhaustive, dtw_cost_oracle, dtw_path_cost

VOCAB = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran", "um", "hello"]


def timed(words):
    out = []
    t = 0.0
    for w in words:
        out.append(WordToken(text=w, start=round(t, 3), end=round(t + 0.3, 3)))
        t += 0.4
    return out


class TestNormalizeWord:
    def test_strip_trailing_punctuation(self):
        assert aligner.normalize_word("Hello,") == "hello"

    def test_internal_apostrophe_kept(self):
        assert aligner.normalize_word("don't") == "don't"

    def test_punctuation_only_word(self):
        assert aligner.normalize_word("...") == ""

    def test_quotes_stripped(self):
        assert aligner.normalize_word("“Yes!”") == "yes"


class TestParseTranscript:
    TABLE = {"alice": "alice", "bob": "bob", "mrs. robinson": "robinson"}

    def test_basic(self):
        turns = aligner.parse_transcript(
            ["ALICE: hello there", "", "Bob: hi"], self.TABLE
        )
        assert [(t.speaker, t.text) for t in turns] == [
            ("alice", "hello there"),
            ("bob", "hi"),
        ]
        assert [t.line_index for t in turns] == [1, 3]

    def test_alias_with_colon_free_name(self):
        turns = aligner.parse_transcript(["Mrs. Robinson: well."], self.TABLE)
        assert turns[0].speaker == "robinson"

    def test_missing_colon_errors_with_line(self):
        with pytest.raises(SchemaError, match="transcript:2"):
            aligner.parse_transcript(["ALICE: hi", "no colon here"], self.TABLE)

    def test_unknown_speaker_collected(self):
        with pytest.raises(DataError, match="ZORG"):
            aligner.parse_transcript(["ZORG: take me to your leader"], self.TABLE)


class TestDtwAlign:
    def test_identity(self):
        words = ["the", "cat", "sat"]
        transcript = [(w, "alice") for w in words]
        result = aligner.dtw_align(transcript, timed(words))
        assert result.cost == 0
        assert all(move == "match" for _, _, move in result.path)
        assert result.speakers == ("alice",) * 3
        assert all(result.aligned)

    def test_case_and_punctuation_insensitive(self):
        transcript = [("The", "a"), ("CAT!", "a")]
        result = aligner.dtw_align(transcript, timed(["the", "cat"]))
        assert result.cost == 0

    def test_inserted_word_inherits_neighbor_speaker(self):
        transcript = [("the", "alice"), ("cat", "alice")]
        result = aligner.dtw_align(transcript, timed(["the", "um", "cat"]))
        assert result.cost == 1
        assert result.speakers == ("alice", "alice", "alice")
        assert result.aligned == (True, False, True)

    def test_disjoint_vocabularies(self):
        transcript = [("aa", "x"), ("bb", "x")]
        tw = timed(["cc", "dd", "ee"])
        result = aligner.dtw_align(transcript, tw)
        expected = dtw_cost_oracle(["aa", "bb"], ["cc", "dd", "ee"])
        assert result.cost == expected

    def test_empty_sequences_error(self):
        with pytest.raises(DataError):
            aligner.dtw_align([], timed(["a"]))
        with pytest.raises(DataError):
            aligner.dtw_align([("a", "x")], [])

    def test_tie_inheritance_prefers_earlier(self):
        # alice-word, skip, bob-word: the middle timed word is equidistant
        transcript = [("aa", "alice"), ("bb", "bob")]
        result = aligner.dtw_align(transcript, timed(["aa", "zz", "bb"]))
        assert result.speakers[1] == "alice"

    def test_path_monotone_and_contiguous(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a = [VOCAB[i] for i in rng.integers(0, len(VOCAB), size=rng.integers(1, 10))]
            b = [VOCAB[i] for i in rng.integers(0, len(VOCAB), size=rng.integers(1, 10))]
            result = aligner.dtw_align([(w, "s") for w in a], timed(b))
            ci = cj = 0
            for i, j, move in result.path:
                if move == "match":
                    assert (i, j) == (ci, cj)
                    ci, cj = ci + 1, cj + 1
                elif move == "skip_transcript":
                    ci += 1
                else:
                    cj += 1
            assert (ci, cj) == (len(a), len(b))

    def test_matches_memoized_oracle_on_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            a = [VOCAB[i] for i in rng.integers(0, len(VOCAB), size=rng.integers(1, 11))]
            b = [VOCAB[i] for i in rng.integers(0, len(VOCAB), size=rng.integers(1, 11))]
            result = aligner.dtw_align([(w, "s") for w in a], timed(b))
            na = [aligner.normalize_word(w) for w in a]
            nb = [aligner.normalize_word(w) for w in b]
            expected = dtw_cost_oracle(na, nb)
            assert result.cost == expected
            assert dtw_path_cost(result.path, na, nb) == expected

    def test_matches_exhaustive_enumeration_on_tiny_instances(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            a = [VOCAB[i] for i in rng.integers(0, 4, size=rng.integers(1, 5))]
            b = [VOCAB[i] for i in rng.integers(0, 4, size=rng.integers(1, 5))]
            result = aligner.dtw_align([(w, "s") for w in a], timed(b))
            assert result.cost == dtw_cost_exhaustive(a, b)


def _segments_for(words, ranges):
    return [
        SpeechSegment(
            id=i,
            start=words[lo].start,
            end=words[hi - 1].end,
            text=" ".join(w.text for w in words[lo:hi]),
            word_range=(lo, hi),
        )
        for i, (lo, hi) in enumerate(ranges)
    ]


class TestWordsToGtSegments:
    def _alignment(self, speakers, aligned=None):
        n = len(speakers)
        return aligner.WordAlignment(
            cost=0,
            path=(),
            speakers=tuple(speakers),
            aligned=tuple(aligned if aligned is not None else [True] * n),
        )

    def test_unanimous(self):
        words = timed(["a", "b", "c", "d", "e"])
        segments = _segments_for(words, [(0, 5)])
        gt, review = aligner.words_to_gt_segments(segments, self._alignment(["x"] * 5))
        assert len(gt) == 1
        assert gt[0].speaker == "x"
        assert review == []

    def test_majority(self):
        words = timed(["a", "b", "c", "d", "e"])
        segments = _segments_for(words, [(0, 5)])
        gt, review = aligner.words_to_gt_segments(
            segments, self._alignment(["a", "a", "b", "a", "b"])
        )
        assert gt[0].speaker == "a"
        assert review and review[0].reasons == ("mixed-speakers",)

    def test_tie_earliest_word_wins(self):
        words = timed(["a", "b", "c", "d"])
        segments = _segments_for(words, [(0, 4)])
        gt, _ = aligner.words_to_gt_segments(
            segments, self._alignment(["a", "b", "a", "b"])
        )
        assert gt[0].speaker == "a"
        gt, _ = aligner.words_to_gt_segments(
            segments, self._alignment(["b", "a", "b", "a"])
        )
        assert gt[0].speaker == "b"

    def test_no_speakers_dropped_with_warning(self, caplog):
        words = timed(["a", "b"])
        segments = _segments_for(words, [(0, 2)])
        with caplog.at_level("WARNING"):
            gt, _ = aligner.words_to_gt_segments(segments, self._alignment([None, None]))
        assert gt == []
        assert any("dropped" in m for m in caplog.messages)

    def test_skip_fraction_flagged(self):
        words = timed(["a", "b", "c"])
        segments = _segments_for(words, [(0, 3)])
        _, review = aligner.words_to_gt_segments(
            segments,
            self._alignment(["x", "x", "x"], aligned=[True, False, False]),
        )
        assert review and "skipped-words" in review[0].reasons

    def test_review_rendering(self):
        entry = aligner.ReviewEntry(3, 1.0, 2.0, ("mixed-speakers",), "votes={'a': 1}")
        text = aligner.render_review([entry])
        assert "segment 3" in text
        assert aligner.render_review([]) == "no segments flagged for review\n"


class TestEndToEndIdentity:
    def test_transcript_equals_asr(self, easy_small):
        series, episodes = easy_small
        episode = episodes[0]
        manifest = series.manifests[0]
        turns = aligner.parse_transcript(
            manifest.transcript.read_text().splitlines(), series.alias_table()
        )
        alignment = aligner.dtw_align(aligner.transcript_words(turns), episode.words)
        assert alignment.cost == 0
        gt, review = aligner.words_to_gt_segments(episode.segments, alignment)
        from castline import ingest

        truth = ingest.parse_gt(manifest.truth.read_text().splitlines())
        assert [g.speaker for g in gt] == [t.speaker for t in truth]
        assert [g.text for g in gt] == [t.text for t in truth]
        assert review == []
