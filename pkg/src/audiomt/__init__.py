"""Multitask audio-language training harness.

A small encoder-decoder over log-mel features, trained against a
hierarchical tag header grammar with word-level timestamp tokens,
plus the synthetic tone corpus, metrics, and ablation driver that
exercise it end to end.
"""

from .config import RunConfig, load_config
from .corpus import (
    TASK_RULES,
    ManifestRecord,
    Mixer,
    MixSpec,
    SynthSpec,
    TrainingExample,
    assemble,
    derive_header,
    load_manifest,
    synth_corpus,
)
from .errors import AudiomtError
from .frontend import AudioClip, MelSpectrogram, log_mel, read_wav, resample, write_wav
from .metrics import EvalReport, accuracy, bleu, wer
from .model import (
    AudioTextModel,
    LRSchedule,
    ModelConfig,
    Optimizer,
    TrainStage,
    greedy_decode,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from .srwt import TimedTranscript, TimedWord, alignment_score, decode_timed, encode_timed
from .tags import TaskHeader, Vocabulary, build_header, default_vocabulary, parse_header
from .training import prepare_vocabulary, run_training

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "AudiomtError",
    "AudioTextModel",
    "EvalReport",
    "LRSchedule",
    "ManifestRecord",
    "MelSpectrogram",
    "Mixer",
    "MixSpec",
    "ModelConfig",
    "Optimizer",
    "RunConfig",
    "SynthSpec",
    "TASK_RULES",
    "TaskHeader",
    "TimedTranscript",
    "TimedWord",
    "TrainStage",
    "TrainingExample",
    "Vocabulary",
    "accuracy",
    "alignment_score",
    "assemble",
    "bleu",
    "build_header",
    "decode_timed",
    "default_vocabulary",
    "derive_header",
    "encode_timed",
    "greedy_decode",
    "load_checkpoint",
    "load_config",
    "load_manifest",
    "log_mel",
    "parse_header",
    "prepare_vocabulary",
    "read_wav",
    "resample",
    "run_training",
    "save_checkpoint",
    "synth_corpus",
    "train_step",
    "wer",
    "__version__",
]
