"""Evaluation metrics: word error rate, corpus BLEU, exact-match accuracy."""
from __future__ import annotations

import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

from .errors import InputMismatch, UndefinedMetric

_TERMINAL_PUNCT = ".,!?;:。，！？、"


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (0x4E00 <= cp <= 0x9FFF or 0x3400 <= cp <= 0x4DBF
            or 0xF900 <= cp <= 0xFAFF or 0x3040 <= cp <= 0x30FF
            or 0xAC00 <= cp <= 0xD7AF)


def segment_words(text: str) -> list[str]:
    """Word units: whitespace-split for alphabetic text, per-character for CJK.

    Mixed chunks split each CJK character out as its own word while
    keeping contiguous non-CJK runs together.
    """
    words = []
    for chunk in text.split():
        run = ""
        for ch in chunk:
            if _is_cjk(ch):
                if run:
                    words.append(run)
                    run = ""
                words.append(ch)
            else:
                run += ch
        if run:
            words.append(run)
    return words


def normalize_text(text: str) -> str:
    """Lowercase and strip terminal punctuation from each word unit."""
    words = segment_words(unicodedata.normalize("NFKC", text).lower())
    return " ".join(w.strip(_TERMINAL_PUNCT) or w for w in words)


def edit_distance(a: list, b: list) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion cost."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def wer(hyp: str, ref: str) -> float:
    """Word-level edit distance over reference length, after normalization."""
    ref_words = segment_words(normalize_text(ref))
    if not ref_words:
        raise UndefinedMetric("reference is empty after tokenization")
    hyp_words = segment_words(normalize_text(hyp))
    return edit_distance(hyp_words, ref_words) / len(ref_words)


def _ngrams(words: list[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu(hyps: list[str], refs: list[str], max_order: int = 4) -> float:
    """Corpus-level BLEU in [0, 100].

    Modified n-gram precision counts are pooled over the corpus, then
    combined as the geometric mean of orders 1..4 with the brevity
    penalty exp(1 - ref_len/hyp_len) for short output. No smoothing: a
    zero count at any order zeroes the score, matching the usual
    corpus-level convention.
    """
    if len(hyps) != len(refs):
        raise InputMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not any(segment_words(r) for r in refs):
        raise UndefinedMetric("all references are empty")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        h_words, r_words = segment_words(hyp), segment_words(ref)
        hyp_len += len(h_words)
        ref_len += len(r_words)
        for n in range(1, max_order + 1):
            h_counts, r_counts = _ngrams(h_words, n), _ngrams(r_words, n)
            totals[n - 1] += max(len(h_words) - n + 1, 0)
            matches[n - 1] += sum(min(c, r_counts[g]) for g, c in h_counts.items())
    if hyp_len == 0 or any(t == 0 for t in totals) or any(m == 0 for m in matches):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_order
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_precision)


def accuracy(preds: list[str], labels: list[str]) -> float:
    """Exact-match fraction after whitespace and case normalization."""
    if len(preds) != len(labels):
        raise InputMismatch(f"{len(preds)} predictions vs {len(labels)} labels")
    if not preds:
        raise UndefinedMetric("empty prediction list")
    norm = lambda s: " ".join(s.lower().split())
    return sum(norm(p) == norm(l) for p, l in zip(preds, labels)) / len(preds)


@dataclass
class EvalReport:
    metric: str
    value: float
    support: int
    items: list[dict] | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.support < 1:
            raise ValueError("support must be >= 1 for a defined report")

    def to_dict(self) -> dict:
        d = {"metric": self.metric, "value": self.value, "support": self.support}
        if self.extra:
            d["extra"] = self.extra
        if self.items is not None:
            d["items"] = self.items
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
