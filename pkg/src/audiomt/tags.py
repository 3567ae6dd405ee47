"""Hierarchical condition-tag grammar and the token vocabulary.

Every training target is prefixed with an ordered header of condition
tokens: transcription kind, audio language, task (with an inline
question for QA), output text language, a timestamps flag, and a
free-form instruction. Similar tasks share tag positions, so knowledge
transfers through the shared slots while differing tags keep targets
with different formats apart.

Serialized header layout::

    <kind> <audio-lang> <task> [question bytes] <text-lang> <flag> [instruction bytes] \\n

The trailing newline byte closes the instruction slot; it is a plain
text token, not a dedicated tag, and it is what makes header parsing a
prefix-free operation so any body can follow.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import DuplicateLanguage, InvalidHeader, MalformedHeader, UnknownToken

TokenSequence = list[int]

UNKNOWN_LANGUAGE = "unknown"
DEFAULT_LANGUAGES = ("zh", "en", "de", "es", "fr", "it", "ja", "ko")

# Time tokens cover [0, 30] s on the encoder's 40 ms output grid.
TIME_QUANTUM_SECONDS = 0.040
MAX_TIME_SECONDS = 30.0
N_TIME_TOKENS = 751

NEWLINE_BYTE = 0x0A


class TranscriptionKind(Enum):
    TRANSCRIPTS = "startoftranscripts"
    ANALYSIS = "startofanalysis"


class TaskCategory(Enum):
    TRANSCRIBE = "transcribe"
    TRANSLATE = "translate"
    CAPTION = "caption"
    ANALYSIS = "analysis"
    QUESTION_ANSWER = "question-answer"


# Ordered inventory of fixed special tags; vocabulary ids 0..len-1.
FIXED_TAGS = (
    "<|startoftranscripts|>",
    "<|startofanalysis|>",
    "<|transcribe|>",
    "<|translate|>",
    "<|caption|>",
    "<|analysis|>",
    "<|question-answer|>",
    "<|timestamps|>",
    "<|notimestamps|>",
    "<im_start>",
    "<im_end>",
    "<|endoftext|>",
    "<|pad|>",
)

_KIND_TAG = {
    TranscriptionKind.TRANSCRIPTS: "<|startoftranscripts|>",
    TranscriptionKind.ANALYSIS: "<|startofanalysis|>",
}
_TASK_TAG = {
    TaskCategory.TRANSCRIBE: "<|transcribe|>",
    TaskCategory.TRANSLATE: "<|translate|>",
    TaskCategory.CAPTION: "<|caption|>",
    TaskCategory.ANALYSIS: "<|analysis|>",
    TaskCategory.QUESTION_ANSWER: "<|question-answer|>",
}

_TIME_TOKEN_RE = re.compile(r"^<\|(\d+\.\d{2})\|>$")
_BYTE_DISPLAY_RE = re.compile(r"<0x([0-9A-F]{2})>")


@dataclass(frozen=True)
class TaskHeader:
    kind: TranscriptionKind
    audio_language: str
    task: TaskCategory
    text_language: str
    timestamps: bool
    instruction: str = ""
    question: str = ""


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str


def validate(header: TaskHeader, vocab: "Vocabulary | None" = None) -> list[Violation]:
    """All invariant violations of a header; empty iff build_header accepts it."""
    out = []
    if header.kind is TranscriptionKind.TRANSCRIPTS and header.task not in (
            TaskCategory.TRANSCRIBE, TaskCategory.TRANSLATE):
        out.append(Violation("task", "KindTaskIncompatible"))
    if header.timestamps and header.task is not TaskCategory.TRANSCRIBE:
        out.append(Violation("timestamps", "TimestampsRequireTranscribe"))
    if header.text_language == UNKNOWN_LANGUAGE:
        out.append(Violation("text_language", "OutputLanguageUnknown"))
    if header.task is TaskCategory.QUESTION_ANSWER and not header.question:
        out.append(Violation("question", "QuestionRequired"))
    if header.task is not TaskCategory.QUESTION_ANSWER and header.question:
        out.append(Violation("question", "QuestionWithoutQuestionAnswer"))
    if "\n" in header.instruction:
        out.append(Violation("instruction", "InstructionContainsNewline"))
    if vocab is not None:
        if header.audio_language not in vocab.language_ids:
            out.append(Violation("audio_language", "UnknownAudioLanguage"))
        if header.text_language != UNKNOWN_LANGUAGE and header.text_language not in vocab.language_ids:
            out.append(Violation("text_language", "UnknownTextLanguage"))
    return out


def _byte_display(b: int) -> str:
    if 0x21 <= b <= 0x7E:
        return chr(b)
    return f"<0x{b:02X}>"


def _display_to_bytes(display: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(display):
        m = _BYTE_DISPLAY_RE.match(display, i)
        if m:
            out.append(int(m.group(1), 16))
            i = m.end()
        else:
            out.append(ord(display[i]))
            i += 1
    return bytes(out)


def time_token_display(index: int) -> str:
    return f"<|{index * TIME_QUANTUM_SECONDS:.2f}|>"


class Vocabulary:
    """Immutable token <-> index map: fixed tags, languages, time tokens, text.

    Text tokens are byte-level with an optional table of merged byte
    sequences; encoding is longest-match over that table, so special
    tags can never be produced by text tokenization.
    """

    def __init__(self, language_codes, text_tokens: list[bytes]):
        codes = list(language_codes)
        seen = set()
        for c in codes:
            if c in seen or c == UNKNOWN_LANGUAGE:
                raise DuplicateLanguage(f"duplicate language code: {c!r}")
            seen.add(c)

        self.language_codes = codes
        self.tokens: list[str] = list(FIXED_TAGS)
        self.tag_ids = {t: i for i, t in enumerate(FIXED_TAGS)}

        self.language_ids: dict[str, int] = {}
        for code in codes + [UNKNOWN_LANGUAGE]:
            self.language_ids[code] = len(self.tokens)
            self.tokens.append(f"<|{code}|>")

        self.time_base = len(self.tokens)
        self.tokens.extend(time_token_display(k) for k in range(N_TIME_TOKENS))

        self.text_base = len(self.tokens)
        self._bytes_to_id: dict[bytes, int] = {}
        for seq in text_tokens:
            self._bytes_to_id[seq] = len(self.tokens)
            self.tokens.append("".join(_byte_display(b) for b in seq))
        self._max_text_len = max((len(s) for s in text_tokens), default=0)
        self._id_to_bytes = {i: s for s, i in self._bytes_to_id.items()}

        self._token_to_id = {}
        for i, t in enumerate(self.tokens):
            if t in self._token_to_id:
                raise ValueError(f"token display collision: {t!r}")
            self._token_to_id[t] = i

    def __len__(self) -> int:
        return len(self.tokens)

    # --- classification ---

    def is_special(self, token_id: int) -> bool:
        return token_id < self.text_base

    def is_text(self, token_id: int) -> bool:
        return token_id >= self.text_base

    def is_time(self, token_id: int) -> bool:
        return self.time_base <= token_id < self.time_base + N_TIME_TOKENS

    def time_index(self, token_id: int) -> int:
        if not self.is_time(token_id):
            raise UnknownToken(f"id {token_id} is not a time token")
        return token_id - self.time_base

    def time_token_id(self, index: int) -> int:
        if not 0 <= index < N_TIME_TOKENS:
            raise UnknownToken(f"time index {index} out of range")
        return self.time_base + index

    def language_id(self, code: str) -> int:
        try:
            return self.language_ids[code]
        except KeyError:
            raise UnknownToken(f"unknown language code {code!r}") from None

    def tag_id(self, tag: str) -> int:
        try:
            return self.tag_ids[tag]
        except KeyError:
            raise UnknownToken(f"unknown tag {tag!r}") from None

    @property
    def end_of_text_id(self) -> int:
        return self.tag_ids["<|endoftext|>"]

    @property
    def pad_id(self) -> int:
        return self.tag_ids["<|pad|>"]

    @property
    def im_start_id(self) -> int:
        return self.tag_ids["<im_start>"]

    @property
    def im_end_id(self) -> int:
        return self.tag_ids["<im_end>"]

    @property
    def newline_id(self) -> int:
        return self.text_id(bytes([NEWLINE_BYTE]))

    def text_id(self, seq: bytes) -> int:
        try:
            return self._bytes_to_id[seq]
        except KeyError:
            raise UnknownToken(f"byte sequence {seq!r} not in vocabulary") from None

    # --- text codec ---

    def encode_text(self, text: str) -> TokenSequence:
        """Longest-match tokenization of UTF-8 bytes over the text table."""
        data = text.encode("utf-8")
        ids = []
        i = 0
        while i < len(data):
            for width in range(min(self._max_text_len, len(data) - i), 0, -1):
                tid = self._bytes_to_id.get(data[i:i + width])
                if tid is not None:
                    ids.append(tid)
                    i += width
                    break
            else:
                raise UnknownToken(f"byte 0x{data[i]:02X} not in vocabulary")
        return ids

    def decode_text(self, ids) -> str:
        """Detokenize; special tokens render as their literal tag text."""
        parts = []
        pending = bytearray()
        for tid in ids:
            if self.is_text(tid):
                pending.extend(self._id_to_bytes[tid])
            else:
                if pending:
                    parts.append(pending.decode("utf-8", errors="replace"))
                    pending = bytearray()
                parts.append(self.tokens[tid])
        if pending:
            parts.append(pending.decode("utf-8", errors="replace"))
        return "".join(parts)

    # --- serialization: one token per line, index = line number ---

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        n_fixed = len(FIXED_TAGS)
        if tuple(lines[:n_fixed]) != FIXED_TAGS:
            raise ValueError(f"{path}: fixed tag block does not match this codec version")
        codes = []
        i = n_fixed
        while i < len(lines) and not _TIME_TOKEN_RE.match(lines[i]):
            m = re.fullmatch(r"<\|(.+)\|>", lines[i])
            if not m:
                raise ValueError(f"{path}: line {i}: expected a language tag, got {lines[i]!r}")
            codes.append(m.group(1))
            i += 1
        if not codes or codes[-1] != UNKNOWN_LANGUAGE:
            raise ValueError(f"{path}: language block must end with the unknown tag")
        time_block = lines[i:i + N_TIME_TOKENS]
        if len(time_block) != N_TIME_TOKENS or any(not _TIME_TOKEN_RE.match(t) for t in time_block):
            raise ValueError(f"{path}: expected {N_TIME_TOKENS} time tokens")
        text_tokens = [_display_to_bytes(t) for t in lines[i + N_TIME_TOKENS:]]
        vocab = cls(codes[:-1], text_tokens)
        if vocab.tokens != lines:
            raise ValueError(f"{path}: vocabulary does not round-trip")
        return vocab


def learn_merges(texts, n_merges: int) -> list[bytes]:
    """Greedy byte-pair merge table from a corpus, most frequent pair first.

    Pairs spanning a newline byte are never merged; the header grammar
    relies on the newline token staying atomic.
    """
    sequences = [[bytes([b]) for b in t.encode("utf-8")] for t in texts]
    merged: list[bytes] = []
    for _ in range(n_merges):
        counts: dict[bytes, int] = {}
        for seq in sequences:
            for a, b in zip(seq, seq[1:]):
                if NEWLINE_BYTE in a or NEWLINE_BYTE in b:
                    continue
                counts[a + b] = counts.get(a + b, 0) + 1
        if not counts:
            break
        best = max(sorted(counts), key=lambda k: counts[k])
        if counts[best] < 2:
            break
        merged.append(best)
        for seq in sequences:
            j = 0
            while j < len(seq) - 1:
                if seq[j] + seq[j + 1] == best:
                    seq[j:j + 2] = [best]
                else:
                    j += 1
    return merged


def default_vocabulary(language_codes=DEFAULT_LANGUAGES, text_tokenizer_size: int = 256,
                       merges: list[bytes] | None = None) -> Vocabulary:
    """Vocabulary with byte-level text tokens plus an optional merge table."""
    if len(list(language_codes)) < 1:
        raise ValueError("need at least one language code")
    if text_tokenizer_size < 2:
        raise ValueError("text_tokenizer_size must be >= 2")
    text_tokens = [bytes([b]) for b in range(min(text_tokenizer_size, 256))]
    extra = text_tokenizer_size - len(text_tokens)
    if extra > 0:
        pool = [m for m in (merges or []) if len(m) > 1][:extra]
        text_tokens.extend(pool)
        # keep the advertised size even when the merge table is short
        text_tokens.extend(f"<unused{k}>".encode("utf-8") for k in range(extra - len(pool)))
    return Vocabulary(language_codes, text_tokens)


def build_header(header: TaskHeader, vocab: Vocabulary) -> TokenSequence:
    """Serialize a header to tokens in slot order; raises InvalidHeader."""
    violations = validate(header, vocab)
    if violations:
        raise InvalidHeader(violations)
    ids = [
        vocab.tag_id(_KIND_TAG[header.kind]),
        vocab.language_id(header.audio_language),
        vocab.tag_id(_TASK_TAG[header.task]),
    ]
    if header.task is TaskCategory.QUESTION_ANSWER:
        ids.extend(vocab.encode_text(header.question))
    ids.append(vocab.language_id(header.text_language))
    ids.append(vocab.tag_id("<|timestamps|>" if header.timestamps else "<|notimestamps|>"))
    ids.extend(vocab.encode_text(header.instruction))
    ids.append(vocab.newline_id)
    return ids


_ID_TO_KIND = {v: k for k, v in _KIND_TAG.items()}
_ID_TO_TASK = {v: k for k, v in _TASK_TAG.items()}


def parse_header(tokens: TokenSequence, vocab: Vocabulary) -> tuple[TaskHeader, TokenSequence]:
    """Inverse of build_header: (header, remainder after the terminator)."""
    id_to_lang = {v: k for k, v in vocab.language_ids.items()}
    kind_ids = {vocab.tag_id(t): _ID_TO_KIND[t] for t in _ID_TO_KIND}
    task_ids = {vocab.tag_id(t): _ID_TO_TASK[t] for t in _ID_TO_TASK}

    def expect(pos, what):
        raise MalformedHeader(pos, what)

    pos = 0
    if pos >= len(tokens) or tokens[pos] not in kind_ids:
        expect(pos, "transcription kind tag")
    kind = kind_ids[tokens[pos]]
    pos += 1
    if pos >= len(tokens) or tokens[pos] not in id_to_lang:
        expect(pos, "audio language tag")
    audio_language = id_to_lang[tokens[pos]]
    pos += 1
    if pos >= len(tokens) or tokens[pos] not in task_ids:
        expect(pos, "task tag")
    task = task_ids[tokens[pos]]
    pos += 1
    question = ""
    if task is TaskCategory.QUESTION_ANSWER:
        start = pos
        while pos < len(tokens) and vocab.is_text(tokens[pos]):
            pos += 1
        question = vocab.decode_text(tokens[start:pos])
    if pos >= len(tokens) or tokens[pos] not in id_to_lang:
        expect(pos, "text language tag")
    text_language = id_to_lang[tokens[pos]]
    pos += 1
    flag_ids = {vocab.tag_id("<|timestamps|>"): True, vocab.tag_id("<|notimestamps|>"): False}
    if pos >= len(tokens) or tokens[pos] not in flag_ids:
        expect(pos, "timestamps flag tag")
    timestamps = flag_ids[tokens[pos]]
    pos += 1
    newline = vocab.newline_id
    start = pos
    while pos < len(tokens) and vocab.is_text(tokens[pos]) and tokens[pos] != newline:
        pos += 1
    if pos >= len(tokens) or tokens[pos] != newline:
        expect(pos, "header terminator")
    instruction = vocab.decode_text(tokens[start:pos])
    pos += 1

    header = TaskHeader(kind, audio_language, task, text_language, timestamps,
                        instruction=instruction, question=question)
    violations = validate(header, vocab)
    if violations:
        raise MalformedHeader(0, violations[0].rule)
    return header, list(tokens[pos:])
