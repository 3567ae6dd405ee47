"""Checkpoint evaluation: per-task decoding and metric reports.

Metric selection follows the task's header rule: timestamped
transcription scores timestamp alignment (plus WER on the word texts),
plain transcription scores WER, translation and captioning score BLEU,
and analysis-category tasks score accuracy. Accuracy comes in two
modes: "ranked" (closed-set, compare sequence log-likelihood of each
candidate label; chance-level for untrained models) and "greedy"
(exact match of the greedy decode; used by the interference ablation,
where one input cannot greedily yield two different targets).
"""
from __future__ import annotations

import math
from pathlib import Path

import torch

from .config import RunConfig
from .corpus import (
    TASK_RULES,
    ManifestRecord,
    TrainingExample,
    derive_header,
    load_clip,
    load_manifest,
)
from .errors import ConfigError, MalformedSRWT, ManifestError, ScoreUndefined, UnknownDataset
from .frontend import MelSpectrogram, log_mel
from .metrics import EvalReport, accuracy, bleu, edit_distance, normalize_text, segment_words
from .model import AudioTextModel, collate, greedy_decode
from .srwt import alignment_score, decode_timed
from .tags import TaskCategory, TokenSequence, Vocabulary, build_header


def metric_for(task_code: str) -> str:
    rule = TASK_RULES[task_code]
    if rule.timestamps:
        return "aas_ms"
    if rule.category is TaskCategory.TRANSCRIBE:
        return "wer"
    if rule.category in (TaskCategory.TRANSLATE, TaskCategory.CAPTION):
        return "bleu"
    return "accuracy"


def record_prefix(record: ManifestRecord, vocab: Vocabulary, dummy_header: bool) -> TokenSequence:
    if dummy_header:
        return [vocab.tag_id("<|startofanalysis|>")]
    return build_header(derive_header(record), vocab)


def decode_record(record: ManifestRecord, model: AudioTextModel, vocab: Vocabulary,
                  *, dummy_header: bool = False,
                  features: MelSpectrogram | None = None) -> TokenSequence:
    """Greedy body tokens for one record (header and end tag stripped)."""
    if features is None:
        features = log_mel(load_clip(record.audio_path))
    prefix = record_prefix(record, vocab, dummy_header)
    if dummy_header:
        out = model.generate(features, prefix, vocab.end_of_text_id, model.config.max_text_len)
    else:
        out = greedy_decode(features, prefix, model, vocab)
    body = out[len(prefix):]
    if body and body[-1] == vocab.end_of_text_id:
        body = body[:-1]
    return body


def sequence_nll(model: AudioTextModel, features: MelSpectrogram,
                 prefix: TokenSequence, body: TokenSequence, vocab: Vocabulary) -> float:
    """Total negative log-likelihood of body ++ end-of-text given prefix."""
    tokens = tuple(prefix) + tuple(body) + (vocab.end_of_text_id,)
    mask = (False,) * len(prefix) + (True,) * (len(body) + 1)
    example = TrainingExample(features=features, tokens=tokens, loss_mask=mask)
    with torch.no_grad():
        batch = collate([example], pad_id=vocab.pad_id, dtype=model.config.torch_dtype)
        return float(model.loss(batch)) * sum(mask)


def _corpus_wer(pairs: list[tuple[str, str]]) -> tuple[float, list[dict]]:
    """Pooled WER: total edit distance over total reference words."""
    distance = total = 0
    items = []
    for hyp, ref in pairs:
        h = segment_words(normalize_text(hyp))
        r = segment_words(normalize_text(ref))
        d = edit_distance(h, r)
        distance += d
        total += len(r)
        items.append({"hyp": hyp, "ref": ref, "errors": d, "ref_words": len(r)})
    return distance / max(total, 1), items


def evaluate_task(task: str, records: list[ManifestRecord], model: AudioTextModel,
                  vocab: Vocabulary, *, dummy_header: bool = False,
                  accuracy_mode: str = "ranked",
                  force_metric: str | None = None) -> EvalReport:
    if not records:
        raise ConfigError(f"no records to evaluate for task {task}")
    metric = force_metric or metric_for(records[0].task_type)
    features = [log_mel(load_clip(r.audio_path)) for r in records]

    if metric == "accuracy" and accuracy_mode == "ranked":
        labels = sorted({r.target for r in records})
        label_bodies = [vocab.encode_text(label) for label in labels]
        preds = []
        for record, feat in zip(records, features):
            prefix = record_prefix(record, vocab, dummy_header)
            nlls = [sequence_nll(model, feat, prefix, body, vocab) for body in label_bodies]
            preds.append(labels[nlls.index(min(nlls))])
        value = accuracy(preds, [r.target for r in records])
        items = [{"pred": p, "ref": r.target} for p, r in zip(preds, records)]
        return EvalReport(metric="accuracy", value=value, support=len(records),
                          items=items, extra={"mode": "ranked", "labels": labels})

    decoded = [decode_record(r, model, vocab, dummy_header=dummy_header, features=f)
               for r, f in zip(records, features)]

    if metric == "aas_ms":
        weighted = 0.0
        matched = insertions = deletions = malformed = 0
        texts = []
        items = []
        for record, body in zip(records, decoded):
            item = {"ref": record.target}
            try:
                pred = decode_timed(body, vocab)
                result = alignment_score(pred, record.timed_target)
                weighted += result.aas_ms * result.matched
                matched += result.matched
                insertions += result.insertions
                deletions += result.deletions
                texts.append((pred.text(), record.target))
                item.update({"hyp": pred.text(), "aas_ms": result.aas_ms,
                             "matched": result.matched})
            except (MalformedSRWT, ScoreUndefined) as e:
                malformed += 1
                texts.append((vocab.decode_text(body), record.target))
                item.update({"hyp": vocab.decode_text(body), "error": str(e)})
            items.append(item)
        value = weighted / matched if matched else math.inf
        wer_value, _ = _corpus_wer(texts)
        return EvalReport(metric="aas_ms", value=value, support=len(records), items=items,
                          extra={"matched": matched, "insertions": insertions,
                                 "deletions": deletions, "malformed": malformed,
                                 "wer": wer_value})

    hyps = [vocab.decode_text(body) for body in decoded]
    refs = [r.target for r in records]
    if metric == "wer":
        value, items = _corpus_wer(list(zip(hyps, refs)))
        return EvalReport(metric="wer", value=value, support=len(records), items=items)
    if metric == "bleu":
        value = bleu(hyps, refs)
        items = [{"hyp": h, "ref": r} for h, r in zip(hyps, refs)]
        return EvalReport(metric="bleu", value=value, support=len(records), items=items)
    # greedy exact-match accuracy
    value = accuracy(hyps, refs)
    items = [{"pred": h, "ref": r} for h, r in zip(hyps, refs)]
    return EvalReport(metric="accuracy", value=value, support=len(records),
                      items=items, extra={"mode": "greedy"})


def evaluate_checkpoint(cfg: RunConfig, model: AudioTextModel, vocab: Vocabulary,
                        *, split: str | None = None,
                        tasks: tuple[str, ...] | None = None,
                        dummy_header: bool | None = None,
                        accuracy_mode: str = "ranked",
                        force_metric: str | None = None) -> dict[str, EvalReport]:
    """Per-task reports over one manifest split.

    ToyConflict manifests hold two record kinds; they are reported as
    separate tasks keyed by their task codes.
    """
    split = split or cfg.eval_split
    dummy = cfg.dummy_header if dummy_header is None else dummy_header
    reports: dict[str, EvalReport] = {}
    for task in tasks or cfg.tasks:
        manifest = Path(cfg.corpus_dir) / f"{task}_{split}.jsonl"
        if not manifest.is_file():
            raise UnknownDataset(f"manifest not found: {manifest}")
        records = load_manifest(manifest)
        if not records:
            raise ManifestError(0, f"empty eval manifest: {manifest}")
        by_code: dict[str, list[ManifestRecord]] = {}
        for r in records:
            by_code.setdefault(r.task_type, []).append(r)
        for code in sorted(by_code):
            reports[code] = evaluate_task(code, by_code[code], model, vocab,
                                          dummy_header=dummy, accuracy_mode=accuracy_mode,
                                          force_metric=force_metric)
    return reports
