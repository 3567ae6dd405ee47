"""Scripted ablations over the synthetic corpus.

Four arms with matched step budgets, learning-rate schedule, and seeds:
  A  all four toy tasks with full tag headers (per seed in seeds)
  B  arm A minus ToySRWT (per seed in seeds)
  C  the conflict pair (same audio, two targets) with real task tags
  D  the conflict pair with headers stripped to one shared dummy tag

A vs B measures whether co-training word-level timestamps helps plain
transcription; C vs D shows the one-to-many collapse when identical
inputs carry no distinguishing conditions. Conflict accuracies use
greedy exact match on the training pairs: a deterministic decoder maps
one (audio, prompt) to one output, so the untagged arm cannot satisfy
both targets.
"""
from __future__ import annotations

import statistics
from pathlib import Path

from .config import RunConfig
from .evaluate import evaluate_checkpoint
from .model import load_checkpoint
from .report import save_ablation_report
from .training import load_vocabulary, run_training

SRWT_ARM_TASKS = ("ToyASR", "ToyClassify", "ToySRWT", "ToyTranslate")
NO_SRWT_ARM_TASKS = ("ToyASR", "ToyClassify", "ToyTranslate")


def _train_and_eval(cfg: RunConfig, *, tasks: tuple[str, ...], seed: int,
                    arm: str, dummy_header: bool = False,
                    split: str = "heldout", accuracy_mode: str = "ranked",
                    force_metric: str | None = None):
    arm_cfg = cfg.replace(
        tasks=tasks, seed=seed, dummy_header=dummy_header, mix_weights=(),
        run_dir=str(Path(cfg.run_dir) / "ablation" / f"arm{arm}_seed{seed}"))
    checkpoint = run_training(arm_cfg)
    model, _, _ = load_checkpoint(checkpoint)
    vocab = load_vocabulary(arm_cfg)
    return evaluate_checkpoint(arm_cfg, model, vocab, split=split,
                               accuracy_mode=accuracy_mode, force_metric=force_metric)


def run_ablation(cfg: RunConfig) -> dict:
    """Run all four arms and return the comparison summary dict."""
    seeds = cfg.ablate_seeds
    with_wer, with_aas, without_wer = [], [], []
    for seed in seeds:
        reports = _train_and_eval(cfg, tasks=SRWT_ARM_TASKS, seed=seed, arm="A")
        with_wer.append(reports["ToyASR"].value)
        with_aas.append(reports["ToySRWT"].value)
    for seed in seeds:
        reports = _train_and_eval(cfg, tasks=NO_SRWT_ARM_TASKS, seed=seed, arm="B")
        without_wer.append(reports["ToyASR"].value)

    # conflict arms: evaluate greedy exact match on the training pairs,
    # where the two targets per clip make interference directly visible
    tagged = _train_and_eval(cfg, tasks=("ToyConflict",), seed=cfg.seed, arm="C",
                             split="train", accuracy_mode="greedy",
                             force_metric="accuracy")
    untagged = _train_and_eval(cfg, tasks=("ToyConflict",), seed=cfg.seed, arm="D",
                               dummy_header=True, split="train", accuracy_mode="greedy",
                               force_metric="accuracy")

    untagged_mean = (untagged["ToyConflictSay"].value
                     + untagged["ToyConflictParity"].value) / 2
    summary = {
        "srwt": {
            "seeds": list(seeds),
            "with_srwt_wer": with_wer,
            "with_srwt_aas_ms": with_aas,
            "without_srwt_wer": without_wer,
            "median_with_wer": statistics.median(with_wer),
            "median_without_wer": statistics.median(without_wer),
            "median_aas_ms": statistics.median(with_aas),
        },
        "conflict": {
            "seed": cfg.seed,
            "tagged": {
                "say": tagged["ToyConflictSay"].value,
                "parity": tagged["ToyConflictParity"].value,
            },
            "untagged": {
                "say": untagged["ToyConflictSay"].value,
                "parity": untagged["ToyConflictParity"].value,
                "mean": untagged_mean,
            },
        },
        "steps": cfg.steps,
        "batch_size": cfg.batch_size,
    }
    save_ablation_report(Path(cfg.run_dir) / "ablation", summary)
    return summary
