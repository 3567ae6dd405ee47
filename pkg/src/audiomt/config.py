"""Run configuration for the CLI harness.

Config files are either a JSON object or flat `key = value` lines
(# comments allowed); values in the flat form are parsed as JSON
fragments when possible, else taken as strings. CLI flags override
file values.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import LRSchedule, ModelConfig
from .tags import DEFAULT_LANGUAGES

DEFAULT_TRAIN_TASKS = ("ToyASR", "ToyClassify", "ToySRWT", "ToyTranslate")


@dataclass
class RunConfig:
    # paths
    run_dir: str = "runs/default"
    corpus_dir: str = "corpus"
    vocab_path: str = ""          # empty -> <corpus_dir>/vocab.txt
    # corpus synthesis
    synth_tasks: tuple[str, ...] = ("ToyASR", "ToyClassify", "ToySRWT", "ToyTranslate", "ToyConflict")
    n_train: int = 150
    n_heldout: int = 40
    min_words: int = 3
    max_words: int = 8
    languages: tuple[str, ...] = DEFAULT_LANGUAGES
    text_merges: int = 64
    # training
    seed: int = 0
    steps: int = 600
    batch_size: int = 32
    stage: str = "finetune"
    tasks: tuple[str, ...] = DEFAULT_TRAIN_TASKS
    mix_weights: tuple[float, ...] = ()   # empty -> uniform over tasks
    spec_augment: bool = False
    dummy_header: bool = False            # strip headers to one shared tag
    eval_every: int = 0                   # 0 = final eval only
    # model
    d_model: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 4
    n_decoder_layers: int = 4
    ff_multiplier: int = 4
    max_audio_frames: int = 768
    max_text_len: int = 256
    dtype: str = "float64"
    # schedule / optimizer
    peak_lr: float = 3e-4
    min_lr: float = 3e-5
    warmup_steps: int = 200
    total_steps: int = 0   # decay horizon; 0 = same as steps (set explicitly
                           # when a run will stop early and resume later)
    # evaluation / ablation
    eval_split: str = "heldout"
    ablate_seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        for name in ("synth_tasks", "tasks", "languages"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "mix_weights", tuple(float(w) for w in self.mix_weights))
        object.__setattr__(self, "ablate_seeds", tuple(int(s) for s in self.ablate_seeds))
        if self.stage not in ("pretrain", "finetune"):
            raise ConfigError(f"stage must be pretrain or finetune, got {self.stage!r}")
        if self.mix_weights and len(self.mix_weights) != len(self.tasks):
            raise ConfigError("mix_weights must match tasks in length")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("need steps >= 0 and batch_size >= 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.eval_split not in ("train", "heldout"):
            raise ConfigError("eval_split must be train or heldout")

    @property
    def resolved_vocab_path(self) -> Path:
        return Path(self.vocab_path) if self.vocab_path else Path(self.corpus_dir) / "vocab.txt"

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, d_model=self.d_model, n_heads=self.n_heads,
            n_encoder_layers=self.n_encoder_layers, n_decoder_layers=self.n_decoder_layers,
            ff_multiplier=self.ff_multiplier, max_audio_frames=self.max_audio_frames,
            max_text_len=self.max_text_len, seed=self.seed, dtype=self.dtype)

    def schedule(self) -> LRSchedule:
        return LRSchedule(peak=self.peak_lr, minimum=self.min_lr,
                          warmup_steps=self.warmup_steps,
                          total_steps=self.total_steps or max(self.steps, 1))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value):
    f = _FIELDS[name]
    base = f.type if isinstance(f.type, type) else None
    try:
        if f.type in ("int", "float", "str", "bool") or base in (int, float, str, bool):
            kind = f.type if isinstance(f.type, str) else base.__name__
            if kind == "bool":
                if isinstance(value, bool):
                    return value
                if str(value).lower() in ("true", "1", "yes"):
                    return True
                if str(value).lower() in ("false", "0", "no"):
                    return False
                raise ValueError(f"not a boolean: {value!r}")
            return {"int": int, "float": float, "str": str}[kind](value)
        if isinstance(value, (list, tuple)):
            return tuple(value)
        raise ValueError(f"expected a list for {name}, got {value!r}")
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config field {name}: {e}") from None


def parse_config_text(text: str) -> dict:
    """Parse a JSON object or flat key=value lines into a raw dict."""
    stripped = text.strip()
    if not stripped:
        return {}
    if stripped.startswith("{"):
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON config: {e}") from None
        if not isinstance(obj, dict):
            raise ConfigError("JSON config must be an object")
        return obj
    out = {}
    for lineno, line in enumerate(stripped.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, _, raw = line.partition("=")
        raw = raw.strip()
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        raw.update(parse_config_text(p.read_text(encoding="utf-8")))
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**{k: _coerce(k, v) for k, v in raw.items()})
