"""Training orchestration: run directories, vocabulary preparation,
deterministic example streams, the step loop, and resumable checkpoints.

Determinism contract: given one RunConfig and seed, reruns produce
byte-identical loss logs and checkpoints. All randomness (mixing order,
augmentation) derives from the config seed, never from wall clock or
process state; resuming from a step-k checkpoint replays the mixer to
the same stream position and continues bit-identically.
"""
from __future__ import annotations

import dataclasses
import json
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .corpus import MixSpec, TrainingExample, assemble, load_manifest, mix
from .errors import ConfigError, RunLocked, UnknownDataset
from .frontend import LIBRISPEECH_BASIC, spec_augment
from .model import (
    AudioTextModel,
    Optimizer,
    TrainStage,
    collate,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from .tags import Vocabulary, default_vocabulary, learn_merges

STAGES = {"pretrain": TrainStage.PRETRAIN, "finetune": TrainStage.FINETUNE}


@contextmanager
def run_lock(run_dir: str | Path):
    """Exclusive lock on a run directory; concurrent entry raises RunLocked."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / "LOCK"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLocked(f"{lock} exists; another command owns this run directory") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def prepare_vocabulary(cfg: RunConfig) -> Vocabulary:
    """Learn byte-pair merges from the train-split targets and save vocab."""
    texts = []
    for task in cfg.synth_tasks:
        manifest = Path(cfg.corpus_dir) / f"{task}_train.jsonl"
        if not manifest.is_file():
            continue
        for record in load_manifest(manifest):
            texts.append(record.target)
            if record.question:
                texts.append(record.question)
    texts.extend(("user", "assistant"))
    merges = learn_merges(texts, cfg.text_merges) if cfg.text_merges else []
    vocab = default_vocabulary(cfg.languages, 256 + len(merges), merges=merges)
    path = cfg.resolved_vocab_path
    path.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(path)
    return vocab


def load_vocabulary(cfg: RunConfig) -> Vocabulary:
    path = cfg.resolved_vocab_path
    if not path.is_file():
        raise UnknownDataset(f"vocabulary not found at {path}; run `audiomt prepare` first")
    return Vocabulary.load(path)


def build_datasets(cfg: RunConfig, vocab: Vocabulary, split: str = "train",
                   tasks: tuple[str, ...] | None = None) -> dict[str, list[TrainingExample]]:
    datasets = {}
    for task in tasks or cfg.tasks:
        manifest = Path(cfg.corpus_dir) / f"{task}_{split}.jsonl"
        if not manifest.is_file():
            raise UnknownDataset(f"manifest not found: {manifest}; run `audiomt synth` first")
        records = load_manifest(manifest)
        datasets[task] = [assemble(r, vocab, dummy_header=cfg.dummy_header) for r in records]
    return datasets


def mix_spec(cfg: RunConfig) -> MixSpec:
    weights = cfg.mix_weights or (1.0,) * len(cfg.tasks)
    return MixSpec(tuple(zip(cfg.tasks, weights)), seed=cfg.seed)


def _augmented(example: TrainingExample, seed: int, step: int, item: int) -> TrainingExample:
    # one fresh mask draw per (seed, step, item); widths clamped to the clip
    mask_seed = int(np.random.SeedSequence([seed & (2**63 - 1), 4, step, item]).generate_state(1)[0])
    n_frames = example.features.values.shape[0]
    policy = dataclasses.replace(
        LIBRISPEECH_BASIC,
        time_mask_width_max=min(LIBRISPEECH_BASIC.time_mask_width_max, n_frames),
        seed=mask_seed)
    return dataclasses.replace(example, features=spec_augment(example.features, policy))


def _heldout_loss(model: AudioTextModel, examples: list[TrainingExample], pad_id: int) -> float:
    with torch.no_grad():
        batch = collate(examples, pad_id=pad_id, dtype=model.config.torch_dtype)
        return float(model.loss(batch))


def run_training(cfg: RunConfig, *, resume: str | Path | None = None) -> Path:
    """Train per config; returns the final checkpoint path.

    The run directory gains loss_log.jsonl (one {"step","lr","loss"}
    line per step), optionally eval_log.jsonl, and checkpoint.bin.
    """
    run_dir = Path(cfg.run_dir)
    with run_lock(run_dir):
        vocab = load_vocabulary(cfg)
        datasets = build_datasets(cfg, vocab, "train")
        mixer = mix(mix_spec(cfg), datasets)
        schedule = cfg.schedule()

        if resume is not None:
            model, optimizer, extra = load_checkpoint(resume)
            if optimizer is None:
                raise ConfigError(f"checkpoint {resume} lacks optimizer state; cannot resume")
            optimizer.schedule = schedule  # decay horizon follows the current config
            start_step = int(extra["step"])
            mixer.skip(int(extra["mixer_draws"]))
            log_mode = "a"
        else:
            model = AudioTextModel(cfg.model_config(len(vocab.tokens)))
            optimizer = Optimizer(model, schedule)
            start_step = 0
            log_mode = "w"

        eval_examples: list[TrainingExample] = []
        if cfg.eval_every > 0:
            split = cfg.eval_split
            try:
                held = build_datasets(cfg, vocab, split)
            except UnknownDataset:
                held = datasets
            pool = [ex for task in sorted(held) for ex in held[task]]
            eval_examples = pool[:64]

        stage = STAGES[cfg.stage]
        loss_log = run_dir / "loss_log.jsonl"
        eval_log = run_dir / "eval_log.jsonl"
        with open(loss_log, log_mode, encoding="utf-8") as log:
            for step in range(start_step + 1, cfg.steps + 1):
                examples = [next(mixer) for _ in range(cfg.batch_size)]
                if cfg.spec_augment:
                    examples = [_augmented(ex, cfg.seed, step, i)
                                for i, ex in enumerate(examples)]
                batch = collate(examples, pad_id=vocab.pad_id, dtype=model.config.torch_dtype)
                loss = train_step(batch, model, optimizer, stage)
                log.write(json.dumps(
                    {"step": step, "lr": schedule.at(step), "loss": loss}) + "\n")
                if cfg.eval_every > 0 and eval_examples and step % cfg.eval_every == 0:
                    with open(eval_log, "a" if step > cfg.eval_every else "w",
                              encoding="utf-8") as elog:
                        elog.write(json.dumps(
                            {"step": step,
                             "heldout_loss": _heldout_loss(model, eval_examples, vocab.pad_id)}) + "\n")

        checkpoint = run_dir / "checkpoint.bin"
        save_checkpoint(checkpoint, model, optimizer,
                        extra={"step": cfg.steps, "mixer_draws": mixer.draws,
                               "stage": cfg.stage, "vocab_size": len(vocab.tokens)})
    return checkpoint
