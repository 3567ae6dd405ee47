"""Manifest ingestion, multitask example assembly, deterministic dataset
mixing, and the synthetic tone corpus used by the training harness.

Manifests are UTF-8 JSON-lines; each line carries audio_path, task_type,
audio_language, text_language, target, and optionally timed_target /
question. Relative audio paths resolve against the manifest's directory.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ClipTooLong, ConfigError, ManifestError, UnknownDataset
from .frontend import (
    SAMPLE_RATE,
    AudioClip,
    MelSpectrogram,
    log_mel,
    read_wav,
    resample,
    write_wav,
)
from .srwt import TimedTranscript, TimedWord, encode_timed
from .tags import (
    MAX_TIME_SECONDS,
    UNKNOWN_LANGUAGE,
    TaskCategory,
    TaskHeader,
    TokenSequence,
    TranscriptionKind,
    Vocabulary,
    build_header,
)

_TR = TranscriptionKind.TRANSCRIPTS
_AN = TranscriptionKind.ANALYSIS


@dataclass(frozen=True)
class TaskRule:
    """How a task code maps onto header slots."""
    kind: TranscriptionKind
    category: TaskCategory
    timestamps: bool
    instruction: str = ""


# Task-code -> header-derivation table. Recognition/translation of speech
# keeps the transcription kind; everything else is analysis-kind with an
# instruction distinguishing tasks that share a category. Dataset-id tags
# are deliberately not used.
TASK_RULES: dict[str, TaskRule] = {
    # speech
    "ASR": TaskRule(_TR, TaskCategory.TRANSCRIBE, False),
    "S2TT": TaskRule(_TR, TaskCategory.TRANSLATE, False),
    "OSR": TaskRule(_TR, TaskCategory.TRANSCRIBE, False, "transcribe each overlapping speaker"),
    "DASR": TaskRule(_TR, TaskCategory.TRANSCRIBE, False, "transcribe the dialect speech"),
    "SRWT": TaskRule(_TR, TaskCategory.TRANSCRIBE, True),
    "DID": TaskRule(_AN, TaskCategory.ANALYSIS, False, "identify the dialect"),
    "LID": TaskRule(_AN, TaskCategory.ANALYSIS, False, "identify the spoken language"),
    "SGC": TaskRule(_AN, TaskCategory.ANALYSIS, False, "classify the speaker gender"),
    "ER": TaskRule(_AN, TaskCategory.ANALYSIS, False, "recognize the emotion"),
    "SV": TaskRule(_AN, TaskCategory.ANALYSIS, False, "verify whether the two speakers match"),
    "SD": TaskRule(_AN, TaskCategory.ANALYSIS, False, "assign speaker turns"),
    "SER": TaskRule(_AN, TaskCategory.ANALYSIS, False, "tag the spoken named entities"),
    "KS": TaskRule(_AN, TaskCategory.ANALYSIS, False, "spot the keyword"),
    "IC": TaskRule(_AN, TaskCategory.ANALYSIS, False, "classify the intent"),
    "SF": TaskRule(_AN, TaskCategory.ANALYSIS, False, "fill the task slots"),
    "SAP": TaskRule(_AN, TaskCategory.ANALYSIS, False, "predict the speaker age"),
    "VSC": TaskRule(_AN, TaskCategory.ANALYSIS, False, "classify the vocal sound"),
    # sound
    "AAC": TaskRule(_AN, TaskCategory.CAPTION, False),
    "SEC": TaskRule(_AN, TaskCategory.ANALYSIS, False, "classify the sound event"),
    "ASC": TaskRule(_AN, TaskCategory.ANALYSIS, False, "classify the acoustic scene"),
    "SED": TaskRule(_AN, TaskCategory.ANALYSIS, False, "detect sound events and their time spans"),
    "AQA": TaskRule(_AN, TaskCategory.QUESTION_ANSWER, False),
    # music and song
    "SID": TaskRule(_AN, TaskCategory.ANALYSIS, False, "identify the singer"),
    "SMER": TaskRule(_AN, TaskCategory.ANALYSIS, False, "recognize the singer and music emotion"),
    "MC": TaskRule(_AN, TaskCategory.CAPTION, False, "describe the music"),
    "MIC": TaskRule(_AN, TaskCategory.ANALYSIS, False, "classify the instruments"),
    "MNA": TaskRule(_AN, TaskCategory.ANALYSIS, False, "analyze the music notes"),
    "MGR": TaskRule(_AN, TaskCategory.ANALYSIS, False, "recognize the music genre"),
    "MR": TaskRule(_AN, TaskCategory.ANALYSIS, False, "identify the music piece"),
    "MQA": TaskRule(_AN, TaskCategory.QUESTION_ANSWER, False),
    # synthetic desk-scale tasks
    "ToyASR": TaskRule(_TR, TaskCategory.TRANSCRIBE, False),
    "ToySRWT": TaskRule(_TR, TaskCategory.TRANSCRIBE, True),
    "ToyTranslate": TaskRule(_TR, TaskCategory.TRANSLATE, False),
    "ToyClassify": TaskRule(_AN, TaskCategory.ANALYSIS, False, "report the parity of the tone count"),
    "ToyConflictSay": TaskRule(_TR, TaskCategory.TRANSCRIBE, False),
    "ToyConflictParity": TaskRule(_AN, TaskCategory.ANALYSIS, False, "report the parity of the tone count"),
}

TASK_CODES = tuple(TASK_RULES)
_QA_CODES = frozenset(c for c, r in TASK_RULES.items() if r.category is TaskCategory.QUESTION_ANSWER)
_TIMED_CODES = frozenset(c for c, r in TASK_RULES.items() if r.timestamps)


@dataclass(frozen=True)
class ManifestRecord:
    audio_path: str
    task_type: str
    audio_language: str
    text_language: str
    target: str
    timed_target: TimedTranscript | None = None
    question: str | None = None

    def __post_init__(self):
        if self.task_type not in TASK_RULES:
            raise ValueError(f"unknown task code {self.task_type!r}")
        if self.task_type in _TIMED_CODES and self.timed_target is None:
            raise ValueError(f"{self.task_type} record requires timed_target")
        if self.task_type in _QA_CODES and not self.question:
            raise ValueError(f"{self.task_type} record requires question")


@dataclass(frozen=True)
class TrainingExample:
    features: MelSpectrogram
    tokens: tuple[int, ...]
    loss_mask: tuple[bool, ...]

    def __post_init__(self):
        if len(self.loss_mask) != len(self.tokens):
            raise ValueError("loss_mask length must match tokens")
        if not any(self.loss_mask):
            raise ValueError("at least one position must contribute to the loss")


@dataclass(frozen=True)
class MixSpec:
    sources: tuple[tuple[str, float], ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple((str(i), float(w)) for i, w in self.sources))
        if not self.sources:
            raise ValueError("MixSpec needs at least one source")
        if any(w < 0 for _, w in self.sources):
            raise ValueError("mix weights must be >= 0")
        if not any(w > 0 for _, w in self.sources):
            raise ValueError("mix weights must not all be zero")


_REQUIRED_FIELDS = ("audio_path", "task_type", "audio_language", "text_language", "target")


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    """Read a JSON-lines manifest, validating every record.

    Errors carry the 1-based line number. Blank lines are skipped.
    """
    path = Path(path)
    base = path.parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(lineno, f"invalid JSON: {e}") from None
            if not isinstance(obj, dict):
                raise ManifestError(lineno, "record must be a JSON object")
            missing = [f for f in _REQUIRED_FIELDS if f not in obj]
            if missing:
                raise ManifestError(lineno, f"missing fields: {', '.join(missing)}")
            timed = obj.get("timed_target")
            try:
                record = ManifestRecord(
                    audio_path=str(base / obj["audio_path"]),
                    task_type=str(obj["task_type"]),
                    audio_language=str(obj["audio_language"]),
                    text_language=str(obj["text_language"]),
                    target=str(obj["target"]),
                    timed_target=None if timed is None else TimedTranscript.from_dict(timed),
                    question=obj.get("question"),
                )
            except (ValueError, KeyError, TypeError) as e:
                raise ManifestError(lineno, str(e)) from None
            records.append(record)
    return records


def derive_header(record: ManifestRecord) -> TaskHeader:
    rule = TASK_RULES[record.task_type]
    return TaskHeader(
        kind=rule.kind,
        audio_language=record.audio_language,
        task=rule.category,
        text_language=record.text_language,
        timestamps=rule.timestamps,
        instruction=rule.instruction,
        question=record.question or "",
    )


def load_clip(path: str | Path) -> AudioClip:
    clip = read_wav(path)
    if clip.sample_rate != SAMPLE_RATE:
        clip = resample(clip, SAMPLE_RATE)
    return clip


def assemble(record: ManifestRecord, vocab: Vocabulary, *,
             dummy_header: bool = False) -> TrainingExample:
    """Build one training example: header ++ body ++ end-of-text.

    The body is the time-interleaved encoding for timestamped tasks and
    plain text tokens otherwise. The loss mask is false only at position
    0: every later token, tags included, is a prediction target (at
    analysis time the header is teacher-forced as the decode prompt).
    With dummy_header=True the entire header collapses to the single
    analysis-kind tag, deliberately discarding the task conditions.
    """
    clip = load_clip(record.audio_path)
    if clip.duration > MAX_TIME_SECONDS:
        raise ClipTooLong(
            f"{record.audio_path}: {clip.duration:.2f}s exceeds {MAX_TIME_SECONDS}s")
    features = log_mel(clip)
    rule = TASK_RULES[record.task_type]
    if rule.timestamps:
        body = encode_timed(record.timed_target, vocab)
    else:
        body = vocab.encode_text(record.target)
    if dummy_header:
        head = [vocab.tag_id("<|startofanalysis|>")]
    else:
        head = build_header(derive_header(record), vocab)
    tokens = tuple(head) + tuple(body) + (vocab.end_of_text_id,)
    mask = (False,) + (True,) * (len(tokens) - 1)
    return TrainingExample(features=features, tokens=tokens, loss_mask=mask)


class Mixer:
    """Infinite deterministic weighted mixture over named datasets.

    Each draw picks a source by normalized weight using a dedicated
    choice stream; within a source, items follow per-epoch permutations
    keyed by (seed, source, epoch), so the whole stream is a pure
    function of the spec. skip() replays draws cheaply for resumption.
    """

    def __init__(self, spec: MixSpec, datasets: dict[str, list]):
        self._spec = spec
        self._ids = [i for i, _ in spec.sources]
        for i in self._ids:
            if i not in datasets:
                raise UnknownDataset(i)
        self._items = [list(datasets[i]) for i in self._ids]
        weights = np.array([w for _, w in spec.sources], dtype=np.float64)
        for i, (items, w) in enumerate(zip(self._items, weights)):
            if w > 0 and not items:
                raise UnknownDataset(f"source {self._ids[i]!r} has positive weight but no items")
        self._cumulative = np.cumsum(weights / weights.sum())
        self._seed = spec.seed & (2**63 - 1)
        self._choice_rng = np.random.default_rng(np.random.SeedSequence([self._seed, 1]))
        self._positions = [0] * len(self._ids)
        self._epochs = [0] * len(self._ids)
        self._perms = [self._permutation(s, 0) for s in range(len(self._ids))]
        self.draws = 0

    def _permutation(self, source: int, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self._seed, 2, source, epoch]))
        return rng.permutation(max(len(self._items[source]), 1))

    def _advance(self) -> tuple[int, int]:
        u = self._choice_rng.random()
        source = int(np.searchsorted(self._cumulative, u, side="right"))
        source = min(source, len(self._ids) - 1)
        item = int(self._perms[source][self._positions[source]])
        self._positions[source] += 1
        if self._positions[source] >= len(self._items[source]):
            self._positions[source] = 0
            self._epochs[source] += 1
            self._perms[source] = self._permutation(source, self._epochs[source])
        self.draws += 1
        return source, item

    def __iter__(self):
        return self

    def __next__(self):
        source, item = self._advance()
        return self._items[source][item]

    def skip(self, n: int) -> None:
        for _ in range(n):
            self._advance()


def mix(spec: MixSpec, datasets: dict[str, list]) -> Mixer:
    return Mixer(spec, datasets)


# --- synthetic tone corpus ---

ALPHABET = (
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa",
)
TONE_BASE_HZ = 300.0
TONE_RATIO = 1.21
WORD_SECONDS = 0.120
SLOT_SECONDS = 0.160
TONE_AMPLITUDE = 0.4
# fixed derangement of the 16 symbols used as the toy "translation"
TRANSLATE_PERMUTATION = tuple((7 * j + 3) % 16 for j in range(16))

SYNTH_TASKS = ("ToyASR", "ToyClassify", "ToySRWT", "ToyTranslate", "ToyConflict")


def tone_frequency(symbol: int) -> float:
    return TONE_BASE_HZ * TONE_RATIO ** symbol


def symbol_times(position: int) -> tuple[float, float]:
    """Ground-truth (start, end) seconds of the word at a slot position."""
    start = position * SLOT_SECONDS
    return start, start + WORD_SECONDS


def render_tones(symbols: list[int] | np.ndarray, rate: int = SAMPLE_RATE) -> AudioClip:
    """One pure tone per symbol, 120 ms each with 40 ms gaps between."""
    slot = round(SLOT_SECONDS * rate)
    word = round(WORD_SECONDS * rate)
    samples = np.zeros(slot * len(symbols), dtype=np.float64)
    ramp = round(0.005 * rate)  # 5 ms raised-cosine edges against clicks
    envelope = np.ones(word)
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    envelope[:ramp] = fade
    envelope[-ramp:] = fade[::-1]
    t = np.arange(word) / rate
    for k, s in enumerate(symbols):
        tone = TONE_AMPLITUDE * np.sin(2 * np.pi * tone_frequency(int(s)) * t)
        samples[k * slot:k * slot + word] = tone * envelope
    return AudioClip(samples=samples, sample_rate=rate)


@dataclass(frozen=True)
class SynthSpec:
    out_dir: str | Path
    tasks: tuple[str, ...] = SYNTH_TASKS
    n_train: int = 150
    n_heldout: int = 40
    min_words: int = 3
    max_words: int = 8

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        for t in self.tasks:
            if t not in SYNTH_TASKS:
                raise ConfigError(f"unknown synthesis task {t!r}; expected one of {SYNTH_TASKS}")
        if not (1 <= self.min_words <= self.max_words):
            raise ConfigError("need 1 <= min_words <= max_words")
        if self.n_train < 1 or self.n_heldout < 0:
            raise ConfigError("need n_train >= 1 and n_heldout >= 0")


def _toy_records(task: str, wav_name: str, symbols: np.ndarray) -> list[dict]:
    words = [ALPHABET[int(s)] for s in symbols]
    base = {"audio_path": wav_name, "audio_language": UNKNOWN_LANGUAGE, "text_language": "en"}
    if task == "ToyASR":
        return [dict(base, task_type="ToyASR", target=" ".join(words))]
    if task == "ToyClassify":
        parity = "even" if len(symbols) % 2 == 0 else "odd"
        return [dict(base, task_type="ToyClassify", target=parity)]
    if task == "ToySRWT":
        timed = TimedTranscript(tuple(
            TimedWord(w, *symbol_times(i)) for i, w in enumerate(words)))
        return [dict(base, task_type="ToySRWT", target=timed.text(),
                     timed_target=timed.to_dict())]
    if task == "ToyTranslate":
        mapped = [ALPHABET[TRANSLATE_PERMUTATION[int(s)]] for s in symbols]
        return [dict(base, task_type="ToyTranslate", target=" ".join(mapped),
                     text_language="de")]
    if task == "ToyConflict":
        parity = "even" if len(symbols) % 2 == 0 else "odd"
        return [
            dict(base, task_type="ToyConflictSay", target=" ".join(words)),
            dict(base, task_type="ToyConflictParity", target=parity),
        ]
    raise ConfigError(f"unknown synthesis task {task!r}")


def synth_corpus(spec: SynthSpec, seed: int) -> tuple[dict[str, dict[str, Path]], list[Path]]:
    """Generate tone WAVs plus train/heldout manifests for each toy task.

    Fully deterministic in (spec, seed): same inputs produce a
    byte-identical corpus. Returns ({task: {split: manifest}}, wavs).
    """
    out = Path(spec.out_dir)
    wav_dir = out / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    seed = seed & (2**63 - 1)
    manifests: dict[str, dict[str, Path]] = {}
    wav_paths: list[Path] = []
    for task_index, task in enumerate(spec.tasks):
        manifests[task] = {}
        for split_index, (split, count) in enumerate(
                (("train", spec.n_train), ("heldout", spec.n_heldout))):
            lines = []
            for item in range(count):
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed, 3, task_index, split_index, item]))
                n_words = int(rng.integers(spec.min_words, spec.max_words + 1))
                symbols = rng.integers(0, len(ALPHABET), n_words)
                wav_name = f"wav/{task}_{split}_{item:04d}.wav"
                write_wav(out / wav_name, render_tones(symbols))
                wav_paths.append(out / wav_name)
                for record in _toy_records(task, wav_name, symbols):
                    lines.append(json.dumps(record, sort_keys=True))
            manifest = out / f"{task}_{split}.jsonl"
            manifest.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
            manifests[task][split] = manifest
    return manifests, wav_paths
