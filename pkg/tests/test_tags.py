"""Tag grammar and vocabulary tests."""
import pytest
from hypothesis import given, settings, strategies as st

from audiomt.errors import (
    DuplicateLanguage,
    InvalidHeader,
    MalformedHeader,
    UnknownToken,
)
from audiomt.tags import (
    DEFAULT_LANGUAGES,
    FIXED_TAGS,
    N_TIME_TOKENS,
    TaskCategory,
    TaskHeader,
    TranscriptionKind,
    Vocabulary,
    build_header,
    default_vocabulary,
    learn_merges,
    parse_header,
    validate,
)


@pytest.fixture(scope="module")
def vocab():
    return default_vocabulary()


def header_of(kind, alang, task, tlang, ts, instruction="", question=""):
    return TaskHeader(kind=kind, audio_language=alang, task=task, text_language=tlang,
                      timestamps=ts, instruction=instruction, question=question)


ASR_HEADER = header_of(TranscriptionKind.TRANSCRIPTS, "en", TaskCategory.TRANSCRIBE, "en", True)


class TestBuildHeader:
    def test_srwt_header_tag_order(self, vocab):
        ids = build_header(ASR_HEADER, vocab)
        want = ["<|startoftranscripts|>", "<|en|>", "<|transcribe|>", "<|en|>", "<|timestamps|>"]
        assert [vocab.tokens[i] for i in ids[:5]] == want
        # a text-token terminator closes the free-form instruction slot
        assert ids[5] == vocab.newline_id
        assert len(ids) == 6

    def test_caption_header_with_instruction(self, vocab):
        h = header_of(TranscriptionKind.ANALYSIS, "unknown", TaskCategory.CAPTION,
                      "en", False, instruction="Describe the audio.")
        ids = build_header(h, vocab)
        want = ["<|startofanalysis|>", "<|unknown|>", "<|caption|>", "<|en|>", "<|notimestamps|>"]
        assert [vocab.tokens[i] for i in ids[:5]] == want
        assert ids[5:-1] == vocab.encode_text("Describe the audio.")
        assert ids[-1] == vocab.newline_id

    def test_kind_task_incompatible(self, vocab):
        h = header_of(TranscriptionKind.TRANSCRIPTS, "en", TaskCategory.CAPTION, "en", False)
        with pytest.raises(InvalidHeader) as e:
            build_header(h, vocab)
        assert any(v.rule == "KindTaskIncompatible" for v in e.value.violations)

    def test_question_appended_after_task_tag(self, vocab):
        h = header_of(TranscriptionKind.ANALYSIS, "unknown", TaskCategory.QUESTION_ANSWER,
                      "en", False, question="what is it?")
        ids = build_header(h, vocab)
        q = vocab.encode_text("what is it?")
        assert ids[3:3 + len(q)] == q
        assert vocab.tokens[ids[3 + len(q)]] == "<|en|>"

    def test_header_length_formula(self, vocab):
        h = header_of(TranscriptionKind.ANALYSIS, "zh", TaskCategory.QUESTION_ANSWER,
                      "en", False, instruction="be brief", question="how many speakers?")
        ids = build_header(h, vocab)
        n_q = len(vocab.encode_text(h.question))
        n_i = len(vocab.encode_text(h.instruction))
        assert len(ids) == 5 + n_q + n_i + 1

    def test_shared_slots_differ_only_in_task_tag(self, vocab):
        a = build_header(header_of(TranscriptionKind.TRANSCRIPTS, "en",
                                   TaskCategory.TRANSCRIBE, "en", False), vocab)
        b = build_header(header_of(TranscriptionKind.TRANSCRIPTS, "en",
                                   TaskCategory.TRANSLATE, "en", False), vocab)
        assert len(a) == len(b)
        diff = [i for i, (x, y) in enumerate(zip(a, b)) if x != y]
        assert diff == [2]


class TestValidate:
    def test_valid_asr_header_empty(self):
        assert validate(header_of(TranscriptionKind.TRANSCRIPTS, "en",
                                  TaskCategory.TRANSCRIBE, "en", False)) == []

    def test_timestamps_require_transcribe(self):
        h = header_of(TranscriptionKind.ANALYSIS, "en", TaskCategory.CAPTION, "en", True)
        assert [v.rule for v in validate(h)] == ["TimestampsRequireTranscribe"]

    def test_output_language_unknown(self):
        h = header_of(TranscriptionKind.ANALYSIS, "en", TaskCategory.ANALYSIS, "unknown", False)
        assert [v.rule for v in validate(h)] == ["OutputLanguageUnknown"]

    def test_question_rules(self):
        qa = header_of(TranscriptionKind.ANALYSIS, "en", TaskCategory.QUESTION_ANSWER, "en", False)
        assert [v.rule for v in validate(qa)] == ["QuestionRequired"]
        not_qa = header_of(TranscriptionKind.ANALYSIS, "en", TaskCategory.ANALYSIS,
                           "en", False, question="eh?")
        assert [v.rule for v in validate(not_qa)] == ["QuestionWithoutQuestionAnswer"]

    def test_validate_empty_iff_build_succeeds(self, vocab):
        ok = header_of(TranscriptionKind.ANALYSIS, "unknown", TaskCategory.ANALYSIS, "en", False)
        assert validate(ok, vocab) == []
        build_header(ok, vocab)
        bad = header_of(TranscriptionKind.TRANSCRIPTS, "en", TaskCategory.TRANSCRIBE, "en", False,
                        instruction="line\nbreak")
        assert validate(bad, vocab) != []
        with pytest.raises(InvalidHeader):
            build_header(bad, vocab)


class TestParseHeader:
    def test_round_trip_empty_remainder(self, vocab):
        h, rest = parse_header(build_header(ASR_HEADER, vocab), vocab)
        assert h == ASR_HEADER
        assert rest == []

    def test_missing_kind_tag_position_zero(self, vocab):
        ids = build_header(ASR_HEADER, vocab)[1:]
        with pytest.raises(MalformedHeader) as e:
            parse_header(ids, vocab)
        assert e.value.position == 0

    def test_residue_preserved(self, vocab):
        body = vocab.encode_text("hello")
        _, rest = parse_header(build_header(ASR_HEADER, vocab) + body, vocab)
        assert rest == body

    def test_truncated_header(self, vocab):
        ids = build_header(ASR_HEADER, vocab)
        with pytest.raises(MalformedHeader):
            parse_header(ids[:3], vocab)

    def test_missing_terminator(self, vocab):
        ids = build_header(ASR_HEADER, vocab)[:-1]
        with pytest.raises(MalformedHeader):
            parse_header(ids, vocab)


class TestVocabulary:
    def test_default_size_formula(self, vocab):
        assert len(vocab) == 256 + 8 + 1 + N_TIME_TOKENS + len(FIXED_TAGS)

    def test_single_code_two_language_tokens(self):
        v = default_vocabulary(["en"], 256)
        assert len(v.language_ids) == 2
        assert set(v.language_ids) == {"en", "unknown"}

    def test_duplicate_codes_rejected(self):
        with pytest.raises(DuplicateLanguage):
            default_vocabulary(["en", "en"], 256)

    def test_time_token_block(self, vocab):
        assert vocab.tokens[vocab.time_base] == "<|0.00|>"
        assert vocab.tokens[vocab.time_base + 25] == "<|1.00|>"
        assert vocab.tokens[vocab.time_base + N_TIME_TOKENS - 1] == "<|30.00|>"
        assert vocab.is_time(vocab.time_token_id(750))
        with pytest.raises(UnknownToken):
            vocab.time_token_id(751)

    def test_bijective(self, vocab):
        assert len(set(vocab.tokens)) == len(vocab.tokens)

    def test_text_encoding_never_emits_specials(self, vocab):
        ids = vocab.encode_text("<|startoftranscripts|> <im_end> <|0.00|>")
        assert all(vocab.is_text(i) for i in ids)
        assert vocab.decode_text(ids) == "<|startoftranscripts|> <im_end> <|0.00|>"

    def test_save_load_round_trip(self, vocab, tmp_path):
        merges = learn_merges(["hello hello hello world world"], 8)
        v = default_vocabulary(DEFAULT_LANGUAGES, 256 + len(merges), merges)
        path = tmp_path / "vocab.txt"
        v.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.tokens == v.tokens
        text = "hello world"
        assert loaded.encode_text(text) == v.encode_text(text)

    def test_merges_shorten_encodings(self):
        texts = ["alpha bravo charlie"] * 4
        merges = learn_merges(texts, 16)
        assert merges
        v = default_vocabulary(DEFAULT_LANGUAGES, 256 + len(merges), merges)
        plain = default_vocabulary(DEFAULT_LANGUAGES, 256)
        assert len(v.encode_text(texts[0])) < len(plain.encode_text(texts[0]))
        assert v.decode_text(v.encode_text(texts[0])) == texts[0]

    def test_merges_never_cross_newline(self):
        merges = learn_merges(["a\nb" * 50], 8)
        assert all(b"\n" not in m for m in merges)


LANGS = st.sampled_from(DEFAULT_LANGUAGES)
TEXT = st.text(
    alphabet=st.characters(codec="utf-8", exclude_characters="\n"),
    max_size=40,
)


@st.composite
def valid_headers(draw):
    task = draw(st.sampled_from(list(TaskCategory)))
    if task in (TaskCategory.TRANSCRIBE, TaskCategory.TRANSLATE):
        kind = draw(st.sampled_from(list(TranscriptionKind)))
    else:
        kind = TranscriptionKind.ANALYSIS
    ts = draw(st.booleans()) if task is TaskCategory.TRANSCRIBE else False
    question = draw(TEXT.filter(bool)) if task is TaskCategory.QUESTION_ANSWER else ""
    return TaskHeader(
        kind=kind,
        audio_language=draw(LANGS | st.just("unknown")),
        task=task,
        text_language=draw(LANGS),
        timestamps=ts,
        instruction=draw(TEXT),
        question=question,
    )


class TestProperties:
    @settings(max_examples=300, deadline=None)
    @given(valid_headers(), TEXT)
    def test_build_parse_round_trip(self, header, body_text):
        v = _VOCAB
        body = v.encode_text(body_text)
        got, rest = parse_header(build_header(header, v) + body, v)
        assert got == header
        assert rest == body

    @settings(max_examples=300, deadline=None)
    @given(st.text(alphabet=st.characters(codec="utf-8"), max_size=80))
    def test_text_codec_round_trip(self, text):
        v = _VOCAB
        assert v.decode_text(v.encode_text(text)) == text


_VOCAB = default_vocabulary()
