"""Word-level timestamp codec and alignment scoring tests."""
import pytest
from hypothesis import given, settings, strategies as st

from audiomt.errors import MalformedSRWT, ScoreUndefined, TimeOutOfRange
from audiomt.srwt import (
    TimedTranscript,
    TimedWord,
    alignment_score,
    decode_timed,
    encode_timed,
    quantize_time,
)
from audiomt.tags import default_vocabulary

VOCAB = default_vocabulary()


def transcript(*triples):
    return TimedTranscript(tuple(TimedWord(w, s, e) for w, s, e in triples))


class TestQuantize:
    def test_origin(self):
        assert quantize_time(0.0) == 0

    def test_exact_multiple(self):
        assert quantize_time(1.0) == 25

    def test_nearest_rounding(self):
        assert quantize_time(0.019) == 0
        assert quantize_time(0.021) == 1

    def test_tie_rounds_down(self):
        assert quantize_time(0.020) == 0
        assert quantize_time(0.060) == 1

    def test_out_of_range(self):
        with pytest.raises(TimeOutOfRange):
            quantize_time(-0.001)
        with pytest.raises(TimeOutOfRange):
            quantize_time(30.001)

    def test_error_bounded_by_half_quantum(self):
        for k in range(0, 3000):
            t = k * 0.01
            assert abs(quantize_time(t) * 0.040 - t) <= 0.020 + 1e-12


class TestEncode:
    def test_two_word_example(self):
        ids = encode_timed(transcript(("hi", 0.00, 0.40), ("there", 0.44, 0.80)), VOCAB)
        assert VOCAB.decode_text(ids) == "<|0.00|>hi<|0.40|><|0.44|>there<|0.80|>"

    def test_empty_transcript(self):
        assert encode_timed(TimedTranscript(), VOCAB) == []

    def test_zero_length_word(self):
        ids = encode_timed(transcript(("a", 0.0, 0.0)), VOCAB)
        assert VOCAB.decode_text(ids) == "<|0.00|>a<|0.00|>"

    def test_length_formula(self):
        t = transcript(("alpha", 0.0, 0.4), ("bravo", 0.5, 0.9), ("x", 1.0, 1.2))
        ids = encode_timed(t, VOCAB)
        word_tokens = sum(len(VOCAB.encode_text(w.word)) for w in t.words)
        assert len(ids) == word_tokens + 2 * len(t.words)

    def test_time_over_limit(self):
        with pytest.raises(ValueError):
            transcript(("a", 0.0, 31.0))  # invariant catches it first
        with pytest.raises(ValueError):
            TimedWord("a", 29.0, 30.0001)
        # the 30 s boundary itself is on the grid and encodes
        ids = encode_timed(transcript(("a", 29.96, 30.0)), VOCAB)
        assert VOCAB.decode_text(ids) == "<|29.96|>a<|30.00|>"
        # out-of-range times surface from the quantizer directly
        with pytest.raises(TimeOutOfRange):
            quantize_time(30.0001)


class TestDecode:
    def test_round_trip_on_grid(self):
        t = transcript(("hi", 0.00, 0.40), ("there", 0.44, 0.80))
        assert decode_timed(encode_timed(t, VOCAB), VOCAB) == t

    def test_starts_with_word_token(self):
        with pytest.raises(MalformedSRWT) as e:
            decode_timed(VOCAB.encode_text("hi"), VOCAB)
        assert e.value.position == 0
        assert e.value.reason == "MissingStartTime"

    def test_decreasing_time(self):
        ids = [VOCAB.time_token_id(10)] + VOCAB.encode_text("hi") + [VOCAB.time_token_id(0)]
        with pytest.raises(MalformedSRWT) as e:
            decode_timed(ids, VOCAB)
        assert e.value.reason == "DecreasingTime"

    def test_unpaired_time_token(self):
        with pytest.raises(MalformedSRWT) as e:
            decode_timed([VOCAB.time_token_id(0)], VOCAB)
        assert e.value.reason in ("MissingWord", "EmptyWord")

    def test_missing_end_time(self):
        ids = [VOCAB.time_token_id(0)] + VOCAB.encode_text("hi")
        with pytest.raises(MalformedSRWT) as e:
            decode_timed(ids, VOCAB)
        assert e.value.reason == "MissingEndTime"

    def test_word_between_words_missing_times(self):
        good = encode_timed(transcript(("a", 0.0, 0.4)), VOCAB)
        ids = good + VOCAB.encode_text("b")
        with pytest.raises(MalformedSRWT):
            decode_timed(ids, VOCAB)

    def test_special_tag_inside_word(self):
        ids = [VOCAB.time_token_id(0), VOCAB.pad_id]
        with pytest.raises(MalformedSRWT):
            decode_timed(ids, VOCAB)


class TestAlignmentScore:
    def test_identity(self):
        t = transcript(("hi", 0.00, 0.40), ("there", 0.44, 0.80))
        r = alignment_score(t, t)
        assert r.aas_ms == 0.0
        assert r.matched == 2
        assert (r.insertions, r.deletions) == (0, 0)

    def test_uniform_shift(self):
        ref = transcript(("hi", 0.00, 0.40), ("there", 0.44, 0.80))
        pred = transcript(("hi", 0.04, 0.44), ("there", 0.48, 0.84))
        assert alignment_score(pred, ref).aas_ms == pytest.approx(40.0)

    def test_missing_last_word(self):
        ref = transcript(("hi", 0.00, 0.40), ("there", 0.44, 0.80))
        pred = transcript(("hi", 0.00, 0.40))
        r = alignment_score(pred, ref)
        assert r.aas_ms == 0.0
        assert r.matched == 1
        assert r.deletions == 1

    def test_both_empty_undefined(self):
        with pytest.raises(ScoreUndefined):
            alignment_score(TimedTranscript(), TimedTranscript())

    def test_substitution_still_scores_boundaries(self):
        ref = transcript(("hi", 0.00, 0.40))
        pred = transcript(("ho", 0.04, 0.40))
        r = alignment_score(pred, ref)
        assert r.matched == 1
        assert r.aas_ms == pytest.approx(20.0)

    def test_unmatched_penalty(self):
        ref = transcript(("hi", 0.00, 0.40), ("there", 0.44, 0.80))
        pred = transcript(("hi", 0.00, 0.40))
        r = alignment_score(pred, ref, unmatched_penalty_ms=100.0)
        assert r.aas_ms == pytest.approx((0.0 + 0.0 + 100.0) / 3)

    def test_json_round_trip(self):
        t = transcript(("hi", 0.00, 0.40), ("there", 0.44, 0.80))
        assert TimedTranscript.from_json(t.to_json()) == t


class TestInvariants:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            transcript(("a", 0.0, 0.5), ("b", 0.4, 0.9))

    def test_empty_word_rejected(self):
        with pytest.raises(ValueError):
            TimedWord("", 0.0, 0.1)

    def test_negative_or_inverted_rejected(self):
        with pytest.raises(ValueError):
            TimedWord("a", -0.1, 0.1)
        with pytest.raises(ValueError):
            TimedWord("a", 0.5, 0.4)


@st.composite
def random_transcripts(draw):
    n = draw(st.integers(0, 8))
    words = []
    t = 0.0
    for _ in range(n):
        if t > 28.5:
            break
        start = draw(st.floats(t, min(t + 3.0, 29.0)))
        end = draw(st.floats(start, min(start + 2.0, 29.5)))
        word = draw(st.text(alphabet="abcdefgh", min_size=1, max_size=6))
        words.append(TimedWord(word, start, end))
        # a 50ms gap keeps quantized boundaries monotone across words
        t = end + 0.05
    return TimedTranscript(tuple(words))


class TestRoundTripProperty:
    @settings(max_examples=300, deadline=None)
    @given(random_transcripts())
    def test_within_half_quantum(self, t):
        got = decode_timed(encode_timed(t, VOCAB), VOCAB)
        assert len(got.words) == len(t.words)
        for a, b in zip(got.words, t.words):
            assert a.word == b.word
            assert abs(a.start - b.start) <= 0.020 + 1e-9
            assert abs(a.end - b.end) <= 0.020 + 1e-9

    @settings(max_examples=200, deadline=None)
    @given(random_transcripts())
    def test_decoded_times_non_decreasing(self, t):
        got = decode_timed(encode_timed(t, VOCAB), VOCAB)
        last = 0.0
        for w in got.words:
            assert w.start >= last - 1e-12
            assert w.end >= w.start
            last = w.end
