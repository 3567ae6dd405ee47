"""Command-line harness.

    audiomt synth    --config c.json [--seed N]
    audiomt prepare  --config c.json
    audiomt train    --config c.json [--seed N] [--steps N] [--stage S] [--checkpoint ck]
    audiomt eval     --config c.json --checkpoint ck [--split train|heldout]
    audiomt decode   --config c.json --checkpoint ck --audio f.wav [--task CODE] ...
    audiomt ablate   --config c.json [--seed N] [--steps N]
    audiomt inspect  [--checkpoint ck] [--manifest m.jsonl] [--vocab v.txt]

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ablate import run_ablation
from .config import RunConfig, load_config
from .corpus import TASK_RULES, SynthSpec, load_clip, load_manifest, synth_corpus
from .errors import AudiomtError, ConfigError, DivergenceDetected
from .evaluate import evaluate_checkpoint
from .frontend import log_mel
from .model import greedy_decode, load_checkpoint
from .report import save_eval_reports, save_loss_curve, text_table
from .srwt import decode_timed
from .tags import TaskCategory, TaskHeader, Vocabulary, build_header
from .training import prepare_vocabulary, run_training


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="audiomt", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, checkpoint=False):
        p.add_argument("--config", help="JSON or key=value config file")
        p.add_argument("--seed", type=int, help="override config seed")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint path")

    common(sub.add_parser("synth", help="generate the synthetic tone corpus"))
    common(sub.add_parser("prepare", help="learn text merges and write the vocabulary"))

    p_train = sub.add_parser("train", help="train a model")
    common(p_train, checkpoint=True)
    p_train.add_argument("--steps", type=int, help="override step budget")
    p_train.add_argument("--stage", choices=("pretrain", "finetune"), help="training stage")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval, checkpoint=True)
    p_eval.add_argument("--split", choices=("train", "heldout"), help="manifest split")

    p_dec = sub.add_parser("decode", help="greedy-decode one audio file")
    common(p_dec, checkpoint=True)
    p_dec.add_argument("--audio", required=True, help="input WAV file")
    p_dec.add_argument("--task", default="ToyASR", choices=sorted(TASK_RULES))
    p_dec.add_argument("--audio-language", default="unknown")
    p_dec.add_argument("--text-language", default="en")
    p_dec.add_argument("--question", default="", help="question for QA task codes")
    p_dec.add_argument("--max-len", type=int, default=None)

    p_abl = sub.add_parser("ablate", help="run the four-arm ablation")
    common(p_abl)
    p_abl.add_argument("--steps", type=int, help="override per-arm step budget")

    p_ins = sub.add_parser("inspect", help="describe checkpoints, manifests, vocabularies")
    p_ins.add_argument("--checkpoint")
    p_ins.add_argument("--manifest")
    p_ins.add_argument("--vocab")
    return parser


def _config_from(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in ("seed", "steps", "stage")}
    return load_config(args.config, overrides)


def cmd_synth(args) -> int:
    cfg = _config_from(args)
    spec = SynthSpec(out_dir=cfg.corpus_dir, tasks=cfg.synth_tasks, n_train=cfg.n_train,
                     n_heldout=cfg.n_heldout, min_words=cfg.min_words, max_words=cfg.max_words)
    manifests, wavs = synth_corpus(spec, cfg.seed)
    print(f"wrote {len(wavs)} wav files under {cfg.corpus_dir}")
    for task in sorted(manifests):
        for split in sorted(manifests[task]):
            print(f"  {manifests[task][split]}")
    return 0


def cmd_prepare(args) -> int:
    cfg = _config_from(args)
    vocab = prepare_vocabulary(cfg)
    print(f"wrote vocabulary of {len(vocab.tokens)} tokens to {cfg.resolved_vocab_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    checkpoint = run_training(cfg, resume=args.checkpoint)
    fig = save_loss_curve(cfg.run_dir, Path(cfg.run_dir) / "loss_log.jsonl")
    print(f"trained {cfg.steps} steps (stage {cfg.stage}); checkpoint at {checkpoint}")
    print(f"loss log at {Path(cfg.run_dir) / 'loss_log.jsonl'}; curve at {fig}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from(args)
    if not args.checkpoint:
        raise ConfigError("eval requires --checkpoint")
    model, _, _ = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(cfg.resolved_vocab_path)
    reports = evaluate_checkpoint(cfg, model, vocab, split=args.split)
    paths = save_eval_reports(Path(cfg.run_dir) / "reports", reports,
                              name=f"eval_{args.split or cfg.eval_split}")
    print(paths["txt"].read_text(encoding="utf-8"), end="")
    print(f"reports written to {paths['json'].parent}")
    return 0


def cmd_decode(args) -> int:
    cfg = _config_from(args)
    if not args.checkpoint:
        raise ConfigError("decode requires --checkpoint")
    model, _, _ = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(cfg.resolved_vocab_path)
    rule = TASK_RULES[args.task]
    if rule.category is TaskCategory.QUESTION_ANSWER and not args.question:
        raise ConfigError(f"task {args.task} requires --question")
    header = TaskHeader(kind=rule.kind, audio_language=args.audio_language,
                        task=rule.category, text_language=args.text_language,
                        timestamps=rule.timestamps, instruction=rule.instruction,
                        question=args.question)
    features = log_mel(load_clip(args.audio))
    prefix = build_header(header, vocab)
    out = greedy_decode(features, prefix, model, vocab, args.max_len)
    body = out[len(prefix):]
    if body and body[-1] == vocab.end_of_text_id:
        body = body[:-1]
    if rule.timestamps:
        try:
            print(decode_timed(body, vocab).to_json())
            return 0
        except AudiomtError:
            pass  # fall through to plain text
    print(vocab.decode_text(body))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from(args)
    summary = run_ablation(cfg)
    table = Path(cfg.run_dir) / "ablation" / "ablation.txt"
    print(table.read_text(encoding="utf-8"), end="")
    print(f"ablation artifacts under {table.parent}")
    direction = ("holds" if summary["srwt"]["median_with_wer"]
                 <= summary["srwt"]["median_without_wer"] else "DOES NOT hold")
    print(f"median heldout WER with SRWT <= without: {direction}")
    return 0


def cmd_inspect(args) -> int:
    if not (args.checkpoint or args.manifest or args.vocab):
        raise ConfigError("inspect needs --checkpoint, --manifest, or --vocab")
    if args.checkpoint:
        model, optimizer, extra = load_checkpoint(args.checkpoint)
        n_params = sum(p.numel() for p in model.parameters())
        print(f"checkpoint {args.checkpoint}")
        print(f"  config: {json.dumps(model.config.__dict__, sort_keys=True)}")
        print(f"  parameters: {n_params}")
        print(f"  optimizer step: {optimizer.step_count if optimizer else 'absent'}")
        print(f"  extra: {json.dumps(extra, sort_keys=True)}")
    if args.manifest:
        records = load_manifest(args.manifest)
        counts: dict[str, int] = {}
        for r in records:
            counts[r.task_type] = counts.get(r.task_type, 0) + 1
        print(f"manifest {args.manifest}: {len(records)} records")
        rows = [[task, n] for task, n in sorted(counts.items())]
        print(text_table(["task", "records"], rows), end="")
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
        print(f"vocabulary {args.vocab}: {len(vocab.tokens)} tokens "
              f"({len(vocab.language_ids)} languages, text base {vocab.text_base})")
    return 0


_COMMANDS = {
    "synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train,
    "eval": cmd_eval, "decode": cmd_decode, "ablate": cmd_ablate,
    "inspect": cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:  # argparse exits; keep main() callable as a function
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except (DivergenceDetected, FloatingPointError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except (AudiomtError, FileNotFoundError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
