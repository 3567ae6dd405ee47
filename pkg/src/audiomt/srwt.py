"""Word-level timestamp codec and alignment scoring.

Timed transcription interleaves time tokens with the words: the start
time token comes immediately before each word's text tokens and the end
time token immediately after. Times live on the 40 ms grid shared with
the encoder's output frames, 751 steps over [0, 30] s.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import MalformedSRWT, ScoreUndefined, TimeOutOfRange
from .tags import (
    MAX_TIME_SECONDS,
    N_TIME_TOKENS,
    TIME_QUANTUM_SECONDS,
    TokenSequence,
    Vocabulary,
)


@dataclass(frozen=True)
class TimedWord:
    word: str
    start: float
    end: float

    def __post_init__(self):
        if not self.word:
            raise ValueError("word must be non-empty")
        if not 0.0 <= self.start <= self.end <= MAX_TIME_SECONDS:
            raise ValueError(
                f"need 0 <= start <= end <= {MAX_TIME_SECONDS}, "
                f"got [{self.start}, {self.end}]")


@dataclass(frozen=True)
class TimedTranscript:
    words: tuple[TimedWord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        for a, b in zip(self.words, self.words[1:]):
            if a.end > b.start:
                raise ValueError(f"overlapping words: {a} then {b}")

    def text(self) -> str:
        return " ".join(w.word for w in self.words)

    def to_dict(self) -> dict:
        return {"words": [{"w": w.word, "s": w.start, "e": w.end} for w in self.words]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "TimedTranscript":
        return cls(tuple(TimedWord(d["w"], float(d["s"]), float(d["e"])) for d in obj["words"]))

    @classmethod
    def from_json(cls, data: str) -> "TimedTranscript":
        return cls.from_dict(json.loads(data))


def quantize_time(t: float) -> int:
    """Nearest 40 ms grid index for t in [0, 30] s; ties round down."""
    if not 0.0 <= t <= MAX_TIME_SECONDS:
        raise TimeOutOfRange(f"time {t} outside [0, {MAX_TIME_SECONDS}]")
    index = math.ceil(t / TIME_QUANTUM_SECONDS - 0.5)
    return min(max(index, 0), N_TIME_TOKENS - 1)


def encode_timed(transcript: TimedTranscript, vocab: Vocabulary) -> TokenSequence:
    """[start time] word tokens [end time], concatenated over the words."""
    ids: TokenSequence = []
    for w in transcript.words:
        ids.append(vocab.time_token_id(quantize_time(w.start)))
        ids.extend(vocab.encode_text(w.word))
        ids.append(vocab.time_token_id(quantize_time(w.end)))
    return ids


def decode_timed(tokens: TokenSequence, vocab: Vocabulary) -> TimedTranscript:
    """Strict inverse of encode_timed.

    Enforces the interleaving: every word is bracketed by a time-token
    pair and decoded times never decrease. Rejects anything else with
    MalformedSRWT(position, reason).
    """
    words = []
    pos = 0
    last_time = 0.0
    while pos < len(tokens):
        if not vocab.is_time(tokens[pos]):
            raise MalformedSRWT(pos, "MissingStartTime")
        start = vocab.time_index(tokens[pos]) * TIME_QUANTUM_SECONDS
        if start < last_time - 1e-12:
            raise MalformedSRWT(pos, "DecreasingTime")
        pos += 1
        text_start = pos
        while pos < len(tokens) and vocab.is_text(tokens[pos]):
            pos += 1
        if pos == text_start:
            reason = "EmptyWord" if pos < len(tokens) and vocab.is_time(tokens[pos]) else "MissingWord"
            raise MalformedSRWT(pos, reason)
        if pos >= len(tokens):
            raise MalformedSRWT(pos, "MissingEndTime")
        if not vocab.is_time(tokens[pos]):
            raise MalformedSRWT(pos, "UnexpectedToken")
        end = vocab.time_index(tokens[pos]) * TIME_QUANTUM_SECONDS
        if end < start - 1e-12:
            raise MalformedSRWT(pos, "DecreasingTime")
        words.append(TimedWord(vocab.decode_text(tokens[text_start:pos]), start, end))
        last_time = end
        pos += 1
    return TimedTranscript(tuple(words))


@dataclass
class AlignmentResult:
    """Mean absolute boundary error over edit-aligned word pairs."""

    aas_ms: float
    matched: int
    insertions: int
    deletions: int

    def __str__(self):
        return (f"{self.aas_ms:.1f} ms over {self.matched} aligned words "
                f"(+{self.insertions} ins, {self.deletions} del)")


def _edit_align(pred_words, ref_words):
    """Minimum-edit-distance alignment on word text; returns op list."""
    n, m = len(pred_words), len(ref_words)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1][j - 1] + (pred_words[i - 1] != ref_words[j - 1])
            cost[i][j] = min(sub, cost[i - 1][j] + 1, cost[i][j - 1] + 1)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i][j] == cost[i - 1][j - 1] + (pred_words[i - 1] != ref_words[j - 1]):
            ops.append(("match", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and cost[i][j] == cost[i - 1][j] + 1:
            ops.append(("ins", i - 1, None))
            i -= 1
        else:
            ops.append(("del", None, j - 1))
            j -= 1
    return list(reversed(ops))


def alignment_score(pred: TimedTranscript, ref: TimedTranscript,
                    unmatched_penalty_ms: float | None = None) -> AlignmentResult:
    """Timestamp accuracy of pred against ref, in milliseconds.

    Words are aligned by minimum edit distance on their text. Each
    aligned pair (equal or substituted) contributes |start - start| and
    |end - end|. Unaligned words are excluded from the mean by default
    and only counted; pass unmatched_penalty_ms to charge each one a
    fixed penalty instead.
    """
    if not pred.words and not ref.words:
        raise ScoreUndefined("both transcripts are empty")
    ops = _edit_align([w.word for w in pred.words], [w.word for w in ref.words])
    errors = []
    matched = insertions = deletions = 0
    for op, i, j in ops:
        if op == "match":
            p, r = pred.words[i], ref.words[j]
            errors.append(abs(p.start - r.start) * 1000.0)
            errors.append(abs(p.end - r.end) * 1000.0)
            matched += 1
        elif op == "ins":
            insertions += 1
            if unmatched_penalty_ms is not None:
                errors.append(unmatched_penalty_ms)
        else:
            deletions += 1
            if unmatched_penalty_ms is not None:
                errors.append(unmatched_penalty_ms)
    if not errors:
        raise ScoreUndefined("no aligned word pairs to score")
    return AlignmentResult(sum(errors) / len(errors), matched, insertions, deletions)
