"""Dialogue rendering and parsing for supervised fine-tuning data.

Each statement is wrapped in <im_start>/<im_end>, the role sits on its
own line, and turns are separated by a newline, so a detokenized stream
reads:

    <im_start>user
    Audio 1: <audio>clip.wav</audio>what does the speaker say?<im_end>
    <im_start>assistant
    The speaker says ...<im_end>

Audio references render as literal "Audio {id}: <audio>{path}</audio>"
markup; ids count occurrences 1..n in order of appearance. Only
assistant content and its <im_end> carry loss.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AudioNotFound, InvalidDialogue, MalformedDialogue
from .frontend import N_MELS, MelSpectrogram, load_features
from .tags import TokenSequence, Vocabulary


@dataclass(frozen=True)
class Text:
    content: str


@dataclass(frozen=True)
class AudioRef:
    path: str


Segment = Text | AudioRef


@dataclass(frozen=True)
class ChatTurn:
    role: str
    segments: tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.role not in ("user", "assistant"):
            raise InvalidDialogue(f"role must be user or assistant, got {self.role!r}")
        if self.role == "assistant" and any(isinstance(s, AudioRef) for s in self.segments):
            raise InvalidDialogue("audio references belong in user turns only")


@dataclass(frozen=True)
class Dialogue:
    turns: tuple[ChatTurn, ...]

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        for i, turn in enumerate(self.turns):
            expected = "user" if i % 2 == 0 else "assistant"
            if turn.role != expected:
                raise InvalidDialogue(
                    f"turn {i} must be {expected!r}, got {turn.role!r}")

    @property
    def audio_index(self) -> dict[int, str]:
        """Ordinal audio id -> path, numbered 1..n in appearance order."""
        index = {}
        for turn in self.turns:
            for seg in turn.segments:
                if isinstance(seg, AudioRef):
                    index[len(index) + 1] = seg.path
        return index

    def to_dict(self) -> dict:
        return {"turns": [
            {"role": t.role, "segments": [
                {"audio": s.path} if isinstance(s, AudioRef) else {"text": s.content}
                for s in t.segments]}
            for t in self.turns]}

    @classmethod
    def from_dict(cls, obj: dict) -> "Dialogue":
        turns = []
        for t in obj["turns"]:
            segs = tuple(
                AudioRef(s["audio"]) if "audio" in s else Text(s["text"])
                for s in t["segments"])
            turns.append(ChatTurn(t["role"], segs))
        return cls(tuple(turns))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_json(cls, data: str) -> "Dialogue":
        return cls.from_dict(json.loads(data))


def _turn_text(turn: ChatTurn, next_audio_id: int) -> tuple[str, int]:
    parts = []
    for seg in turn.segments:
        if isinstance(seg, AudioRef):
            parts.append(f"Audio {next_audio_id}: <audio>{seg.path}</audio>")
            next_audio_id += 1
        else:
            parts.append(seg.content)
    return "".join(parts), next_audio_id


def render(dialogue: Dialogue, vocab: Vocabulary) -> tuple[TokenSequence, list[bool]]:
    """Token stream plus per-token loss mask for one dialogue."""
    tokens: list[int] = []
    mask: list[bool] = []
    newline = vocab.encode_text("\n")
    audio_id = 1
    for turn in dialogue.turns:
        content, audio_id = _turn_text(turn, audio_id)
        tokens.append(vocab.im_start_id)
        mask.append(False)
        role_ids = vocab.encode_text(turn.role + "\n")
        tokens.extend(role_ids)
        mask.extend([False] * len(role_ids))
        content_ids = vocab.encode_text(content)
        tokens.extend(content_ids)
        mask.extend([turn.role == "assistant"] * len(content_ids))
        tokens.append(vocab.im_end_id)
        mask.append(turn.role == "assistant")
        tokens.extend(newline)
        mask.extend([False] * len(newline))
    return tokens, mask


_AUDIO_MARKUP = re.compile(r"Audio (\d+): <audio>([^<>]*)</audio>")


def _split_segments(content: str, next_audio_id: int, position: int) -> tuple[tuple[Segment, ...], int]:
    segments: list[Segment] = []
    cursor = 0
    for m in _AUDIO_MARKUP.finditer(content):
        if m.start() > cursor:
            segments.append(Text(content[cursor:m.start()]))
        if int(m.group(1)) != next_audio_id:
            raise MalformedDialogue(
                position, f"audio id {m.group(1)} out of order, expected {next_audio_id}")
        segments.append(AudioRef(m.group(2)))
        next_audio_id += 1
        cursor = m.end()
    if cursor < len(content):
        segments.append(Text(content[cursor:]))
    return tuple(segments), next_audio_id


def parse(tokens: TokenSequence, vocab: Vocabulary) -> Dialogue:
    """Inverse of render; raises MalformedDialogue on structural faults."""
    turns: list[ChatTurn] = []
    audio_id = 1
    pos = 0
    n = len(tokens)
    while pos < n:
        if tokens[pos] == vocab.im_end_id:
            raise MalformedDialogue(pos, "stray <im_end>")
        if tokens[pos] != vocab.im_start_id:
            # between-turn whitespace only
            ch = vocab.decode_text([tokens[pos]])
            if ch.strip():
                raise MalformedDialogue(pos, f"expected <im_start>, got {ch!r}")
            pos += 1
            continue
        start = pos
        pos += 1
        body: list[int] = []
        while pos < n and tokens[pos] != vocab.im_end_id:
            if tokens[pos] == vocab.im_start_id:
                raise MalformedDialogue(pos, "nested <im_start>")
            body.append(tokens[pos])
            pos += 1
        if pos >= n:
            raise MalformedDialogue(start, "unterminated turn: missing <im_end>")
        pos += 1  # consume im_end
        text = vocab.decode_text(body)
        role, sep, content = text.partition("\n")
        if not sep:
            raise MalformedDialogue(start, "turn lacks role line")
        expected = "user" if len(turns) % 2 == 0 else "assistant"
        if role != expected:
            raise MalformedDialogue(start, f"expected role {expected!r}, got {role!r}")
        segments, audio_id = _split_segments(content, audio_id, start)
        turns.append(ChatTurn(role, segments))
    return Dialogue(tuple(turns))


def attach_audio(dialogue: Dialogue) -> list[tuple[int, MelSpectrogram]]:
    """Frontend features for every audio reference, in id order."""
    out = []
    for audio_id, path in dialogue.audio_index.items():
        if not Path(path).is_file():
            raise AudioNotFound(audio_id, path)
        out.append((audio_id, load_features(path)))
    return out


def concat_features(features: list[MelSpectrogram]) -> MelSpectrogram:
    """Concatenate clips along time with one zero separator frame between."""
    if not features:
        raise ValueError("need at least one feature matrix")
    parts: list[np.ndarray] = []
    for i, f in enumerate(features):
        if i:
            parts.append(np.zeros((1, N_MELS)))
        parts.append(f.values)
    return MelSpectrogram(np.concatenate(parts, axis=0))
