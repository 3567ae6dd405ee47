"""Corpus tests: manifests, assembly, mixing, and the synthetic tone corpus."""
import hashlib
import json

import numpy as np
import pytest

from audiomt.corpus import (
    ALPHABET,
    SYNTH_TASKS,
    TASK_CODES,
    TASK_RULES,
    TRANSLATE_PERMUTATION,
    ManifestRecord,
    Mixer,
    MixSpec,
    SynthSpec,
    TrainingExample,
    assemble,
    derive_header,
    load_manifest,
    mix,
    render_tones,
    symbol_times,
    synth_corpus,
    tone_frequency,
)
from audiomt.errors import ClipTooLong, ConfigError, ManifestError, UnknownDataset
from audiomt.frontend import AudioClip, MelSpectrogram, read_wav, write_wav
from audiomt.srwt import decode_timed
from audiomt.tags import TaskCategory, TranscriptionKind, default_vocabulary, parse_header

VOCAB = default_vocabulary()


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    spec = SynthSpec(out_dir=out, n_train=6, n_heldout=2)
    manifests, wavs = synth_corpus(spec, seed=7)
    return out, manifests, wavs


def write_manifest(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


class TestTaskRules:
    def test_every_code_maps_to_exactly_one_rule(self):
        assert len(TASK_CODES) == len(set(TASK_CODES))
        for code in TASK_CODES:
            rule = TASK_RULES[code]
            assert isinstance(rule.kind, TranscriptionKind)
            assert isinstance(rule.category, TaskCategory)

    def test_transcripts_kind_only_for_speech_text_tasks(self):
        for code, rule in TASK_RULES.items():
            if rule.kind is TranscriptionKind.TRANSCRIPTS:
                assert rule.category in (TaskCategory.TRANSCRIBE, TaskCategory.TRANSLATE), code
            if rule.timestamps:
                assert rule.category is TaskCategory.TRANSCRIBE, code

    def test_headers_derivable_for_every_code(self):
        for code in TASK_CODES:
            rule = TASK_RULES[code]
            record = ManifestRecord(
                audio_path="x.wav", task_type=code, audio_language="unknown",
                text_language="en", target="t",
                timed_target=decode_timed([], VOCAB) if rule.timestamps else None,
                question="q?" if rule.category is TaskCategory.QUESTION_ANSWER else None)
            header = derive_header(record)
            assert header.kind is rule.kind
            assert header.timestamps == rule.timestamps


class TestManifest:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("", encoding="utf-8")
        assert load_manifest(path) == []

    def test_three_line_file_order(self, tmp_path):
        recs = [{"audio_path": f"{i}.wav", "task_type": "ASR", "audio_language": "en",
                 "text_language": "en", "target": f"t{i}"} for i in range(3)]
        got = load_manifest(write_manifest(tmp_path / "m.jsonl", recs))
        assert [r.target for r in got] == ["t0", "t1", "t2"]

    def test_srwt_without_timed_target(self, tmp_path):
        rec = {"audio_path": "a.wav", "task_type": "SRWT", "audio_language": "en",
               "text_language": "en", "target": "hello"}
        with pytest.raises(ManifestError) as e:
            load_manifest(write_manifest(tmp_path / "m.jsonl", [rec]))
        assert e.value.line == 1

    def test_bad_json_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        good = json.dumps({"audio_path": "a.wav", "task_type": "ASR", "audio_language": "en",
                           "text_language": "en", "target": "x"})
        path.write_text(good + "\n{broken\n", encoding="utf-8")
        with pytest.raises(ManifestError) as e:
            load_manifest(path)
        assert e.value.line == 2

    def test_unknown_task_code(self, tmp_path):
        rec = {"audio_path": "a.wav", "task_type": "NOPE", "audio_language": "en",
               "text_language": "en", "target": "x"}
        with pytest.raises(ManifestError):
            load_manifest(write_manifest(tmp_path / "m.jsonl", [rec]))

    def test_relative_paths_resolve_against_manifest_dir(self, tmp_path):
        rec = {"audio_path": "sub/a.wav", "task_type": "ASR", "audio_language": "en",
               "text_language": "en", "target": "x"}
        got = load_manifest(write_manifest(tmp_path / "m.jsonl", [rec]))
        assert got[0].audio_path == str(tmp_path / "sub" / "a.wav")


class TestAssemble:
    def test_asr_example_layout(self, tmp_path):
        write_wav(tmp_path / "a.wav", render_tones([0, 1]))
        record = ManifestRecord(audio_path=str(tmp_path / "a.wav"), task_type="ASR",
                                audio_language="en", text_language="en", target="hello world")
        ex = assemble(record, VOCAB)
        header, rest = parse_header(list(ex.tokens), VOCAB)
        assert header.kind is TranscriptionKind.TRANSCRIPTS
        assert header.task is TaskCategory.TRANSCRIBE
        assert not header.timestamps
        assert rest[:-1] == VOCAB.encode_text("hello world")
        assert rest[-1] == VOCAB.end_of_text_id
        assert ex.loss_mask[0] is False or ex.loss_mask[0] == False  # noqa: E712
        assert not ex.loss_mask[0]
        assert all(ex.loss_mask[1:])

    def test_unknown_audio_language_tag(self, tmp_path):
        write_wav(tmp_path / "a.wav", render_tones([0]))
        record = ManifestRecord(audio_path=str(tmp_path / "a.wav"), task_type="AAC",
                                audio_language="unknown", text_language="en", target="a dog barks")
        ex = assemble(record, VOCAB)
        assert VOCAB.tokens[ex.tokens[1]] == "<|unknown|>"

    def test_srwt_body_length(self, tiny_corpus):
        out, manifests, _ = tiny_corpus
        records = load_manifest(manifests["ToySRWT"]["train"])
        r = records[0]
        ex = assemble(r, VOCAB)
        _, rest = parse_header(list(ex.tokens), VOCAB)
        body = rest[:-1]
        word_tokens = sum(len(VOCAB.encode_text(w.word)) for w in r.timed_target.words)
        assert len(body) == word_tokens + 2 * len(r.timed_target.words)

    def test_clip_too_long(self, tmp_path):
        write_wav(tmp_path / "long.wav", AudioClip(np.zeros(16000 * 31), 16000))
        record = ManifestRecord(audio_path=str(tmp_path / "long.wav"), task_type="ASR",
                                audio_language="en", text_language="en", target="x")
        with pytest.raises(ClipTooLong):
            assemble(record, VOCAB)

    def test_deterministic(self, tiny_corpus):
        _, manifests, _ = tiny_corpus
        r = load_manifest(manifests["ToyASR"]["train"])[0]
        a, b = assemble(r, VOCAB), assemble(r, VOCAB)
        assert a.tokens == b.tokens
        assert np.array_equal(a.features.values, b.features.values)

    def test_dummy_header_single_tag(self, tiny_corpus):
        _, manifests, _ = tiny_corpus
        r = load_manifest(manifests["ToyASR"]["train"])[0]
        ex = assemble(r, VOCAB, dummy_header=True)
        assert VOCAB.tokens[ex.tokens[0]] == "<|startofanalysis|>"
        assert VOCAB.is_text(ex.tokens[1])

    def test_example_invariants(self):
        with pytest.raises(ValueError):
            TrainingExample(features=MelSpectrogram(np.zeros((4, 80))),
                            tokens=(1, 2), loss_mask=(True,))
        with pytest.raises(ValueError):
            TrainingExample(features=MelSpectrogram(np.zeros((4, 80))),
                            tokens=(1, 2), loss_mask=(False, False))


class TestMixer:
    def test_single_source_round_robin_epochs(self):
        items = list(range(5))
        m = mix(MixSpec((("a", 1.0),), seed=3), {"a": items})
        drawn = [next(m) for _ in range(10)]
        assert sorted(drawn[:5]) == items
        assert sorted(drawn[5:]) == items

    def test_zero_weight_source_never_sampled(self):
        m = mix(MixSpec((("a", 1.0), ("b", 0.0)), seed=0), {"a": [1], "b": [2]})
        assert all(next(m) == 1 for _ in range(50))

    def test_frequencies_within_binomial_bound(self):
        m = mix(MixSpec((("a", 1.0), ("b", 1.0)), seed=11), {"a": ["a"] * 3, "b": ["b"] * 3})
        draws = [next(m) for _ in range(10_000)]
        freq = draws.count("a") / len(draws)
        assert 0.47 <= freq <= 0.53

    def test_weighted_frequencies(self):
        m = mix(MixSpec((("a", 3.0), ("b", 1.0)), seed=5), {"a": ["a"], "b": ["b"]})
        draws = [next(m) for _ in range(10_000)]
        freq = draws.count("a") / len(draws)
        assert abs(freq - 0.75) < 0.02

    def test_same_seed_same_stream(self):
        datasets = {"a": list(range(7)), "b": list(range(9))}
        spec = MixSpec((("a", 1.0), ("b", 2.0)), seed=42)
        m1, m2 = mix(spec, datasets), mix(spec, datasets)
        assert [next(m1) for _ in range(200)] == [next(m2) for _ in range(200)]

    def test_skip_equals_tail(self):
        datasets = {"a": list(range(7)), "b": list(range(9))}
        spec = MixSpec((("a", 1.0), ("b", 2.0)), seed=42)
        m1, m2 = mix(spec, datasets), mix(spec, datasets)
        full = [next(m1) for _ in range(120)]
        m2.skip(100)
        assert [next(m2) for _ in range(20)] == full[100:]
        assert m2.draws == 120

    def test_unknown_dataset(self):
        with pytest.raises(UnknownDataset):
            mix(MixSpec((("missing", 1.0),), seed=0), {"a": [1]})

    def test_positive_weight_empty_source(self):
        with pytest.raises(UnknownDataset):
            mix(MixSpec((("a", 1.0),), seed=0), {"a": []})

    def test_spec_invariants(self):
        with pytest.raises(ValueError):
            MixSpec((), seed=0)
        with pytest.raises(ValueError):
            MixSpec((("a", -1.0),), seed=0)
        with pytest.raises(ValueError):
            MixSpec((("a", 0.0), ("b", 0.0)), seed=0)


class TestSynthesis:
    def test_symbol_times_by_construction(self):
        for k in range(8):
            start, end = symbol_times(k)
            assert start == pytest.approx(k * 0.160)
            assert end == pytest.approx(k * 0.160 + 0.120)

    def test_times_land_on_40ms_grid(self):
        for k in range(8):
            start, end = symbol_times(k)
            assert round(start / 0.040, 9) == round(start / 0.040)
            assert round(end / 0.040, 9) == round(end / 0.040)

    def test_tone_frequencies_distinct_and_bandlimited(self):
        freqs = [tone_frequency(s) for s in range(len(ALPHABET))]
        assert len(set(freqs)) == len(freqs)
        assert max(freqs) < 8000.0  # inside the mel filterbank band

    def test_render_length(self):
        clip = render_tones([0, 1, 2])
        assert len(clip.samples) == round(3 * 0.160 * 16000)

    def test_translate_permutation_is_derangement(self):
        assert sorted(TRANSLATE_PERMUTATION) == list(range(16))
        assert all(TRANSLATE_PERMUTATION[j] != j for j in range(16))

    def test_manifests_exist_for_all_tasks(self, tiny_corpus):
        _, manifests, _ = tiny_corpus
        assert set(manifests) == set(SYNTH_TASKS)
        for task in manifests:
            for split in ("train", "heldout"):
                assert manifests[task][split].is_file()

    def test_same_seed_identical_bytes(self, tmp_path):
        spec_a = SynthSpec(out_dir=tmp_path / "a", n_train=3, n_heldout=1)
        spec_b = SynthSpec(out_dir=tmp_path / "b", n_train=3, n_heldout=1)
        _, wavs_a = synth_corpus(spec_a, seed=9)
        _, wavs_b = synth_corpus(spec_b, seed=9)
        for pa, pb in zip(sorted(wavs_a), sorted(wavs_b)):
            assert hashlib.sha256(pa.read_bytes()).digest() == \
                hashlib.sha256(pb.read_bytes()).digest()

    def test_conflict_pair_shares_audio_differs_in_header(self, tiny_corpus):
        _, manifests, _ = tiny_corpus
        records = load_manifest(manifests["ToyConflict"]["train"])
        say = [r for r in records if r.task_type == "ToyConflictSay"]
        par = [r for r in records if r.task_type == "ToyConflictParity"]
        assert len(say) == len(par) == 6
        for s, p in zip(say, par):
            assert s.audio_path == p.audio_path
            assert derive_header(s) != derive_header(p)

    def test_srwt_targets_match_generation_parameters(self, tiny_corpus):
        _, manifests, _ = tiny_corpus
        for r in load_manifest(manifests["ToySRWT"]["train"]):
            for i, w in enumerate(r.timed_target.words):
                start, end = symbol_times(i)
                assert w.start == pytest.approx(start)
                assert w.end == pytest.approx(end)

    def test_parity_targets_consistent(self, tiny_corpus):
        _, manifests, _ = tiny_corpus
        for r in load_manifest(manifests["ToyClassify"]["train"]):
            assert r.target in ("even", "odd")

    def test_translate_targets_follow_permutation(self, tiny_corpus):
        # recover the source symbols from the tone frequencies in the wav,
        # then check the target is exactly the permuted symbol sequence
        _, manifests, _ = tiny_corpus
        freqs = np.array([tone_frequency(s) for s in range(len(ALPHABET))])
        for r in load_manifest(manifests["ToyTranslate"]["train"])[:3]:
            clip = read_wav(r.audio_path)
            n_words = len(r.target.split())
            symbols = []
            for k in range(n_words):
                seg = clip.samples[int(k * 0.160 * 16000):][: int(0.120 * 16000)]
                spectrum = np.abs(np.fft.rfft(seg))
                peak_hz = np.argmax(spectrum) * 16000 / len(seg)
                symbols.append(int(np.argmin(np.abs(freqs - peak_hz))))
            expect = [ALPHABET[TRANSLATE_PERMUTATION[s]] for s in symbols]
            assert r.target.split() == expect
            assert r.text_language == "de"

    def test_rejects_unknown_task(self, tmp_path):
        with pytest.raises(ConfigError):
            SynthSpec(out_dir=tmp_path, tasks=("Nope",))

    def test_word_count_bounds_respected(self, tiny_corpus):
        _, manifests, _ = tiny_corpus
        for r in load_manifest(manifests["ToyASR"]["train"]):
            assert 3 <= len(r.target.split()) <= 8
