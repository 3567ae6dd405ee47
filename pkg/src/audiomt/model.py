"""Small encoder-decoder transformer over log-mel features.

Geometry: two stride-managed convolutions (stride 1 then 2) followed by a
stride-2 mean pooling, so the encoder emits one state per four mel frames
(ceil convention at both stages). The decoder is a pre-norm transformer
with causal self-attention and cross-attention over encoder states.
Training runs in float64 by default so finite-difference gradient checks
are meaningful; float32 is available via ModelConfig.dtype.

Two-stage schedule: Pretrain freezes the decoder and trains the encoder;
Finetune freezes the encoder and trains the decoder.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .corpus import TrainingExample
from .errors import (
    AudioTooLong,
    CheckpointCorrupt,
    CheckpointNotFound,
    DivergenceDetected,
    VocabMismatch,
)
from .frontend import MelSpectrogram, N_MELS
from .tags import TokenSequence, Vocabulary, parse_header

torch.set_num_threads(1)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 4
    n_decoder_layers: int = 4
    ff_multiplier: int = 4
    max_audio_frames: int = 768  # encoder states, i.e. mel frames / 4
    max_text_len: int = 256
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        sizes = (self.vocab_size, self.d_model, self.n_heads, self.n_encoder_layers,
                 self.n_decoder_layers, self.ff_multiplier, self.max_audio_frames,
                 self.max_text_len)
        if any(s <= 0 for s in sizes):
            raise ValueError("all ModelConfig sizes must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


class TrainStage(Enum):
    PRETRAIN = "pretrain"    # freeze decoder, train encoder
    FINETUNE = "finetune"    # freeze encoder, train decoder


def encoded_length(t: int) -> int:
    """Encoder output length for t mel frames (two ceil-div-2 stages)."""
    return math.ceil(math.ceil(t / 2) / 2)


def sinusoidal_positions(length: int, d_model: int, dtype: torch.dtype) -> torch.Tensor:
    position = torch.arange(length, dtype=dtype).unsqueeze(1)
    half = torch.arange(0, d_model, 2, dtype=dtype)
    angle = position / torch.pow(torch.tensor(10000.0, dtype=dtype), half / d_model)
    pe = torch.zeros(length, d_model, dtype=dtype)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d_model // 2])
    return pe


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    """Softmax over the last axis with masked positions excluded.

    mask is boolean, True = keep. Rows with every position masked out
    would be 0/0; callers never produce them (every query sees at least
    one valid key), asserted here to fail loudly rather than emit NaN.
    Non-finite scores are left to propagate so divergence checks see them.
    """
    if mask is not None:
        if (~mask).all(dim=-1).any():
            raise FloatingPointError("softmax saw a fully masked row")
        scores = scores.masked_fill(~mask, -torch.inf)
    return torch.softmax(scores, dim=-1)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dtype: torch.dtype):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model, dtype=dtype)
        self.k_proj = nn.Linear(d_model, d_model, dtype=dtype)
        self.v_proj = nn.Linear(d_model, d_model, dtype=dtype)
        self.out_proj = nn.Linear(d_model, d_model, dtype=dtype)

    def forward(self, query: torch.Tensor, keyvalue: torch.Tensor, *,
                causal: bool = False, key_padding: torch.Tensor | None = None) -> torch.Tensor:
        b, s_q, d = query.shape
        s_k = keyvalue.shape[1]
        shape = (b, -1, self.n_heads, self.d_head)
        q = self.q_proj(query).view(b, s_q, *shape[2:]).transpose(1, 2)
        k = self.k_proj(keyvalue).view(b, s_k, *shape[2:]).transpose(1, 2)
        v = self.v_proj(keyvalue).view(b, s_k, *shape[2:]).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        mask = None
        if key_padding is not None:
            mask = key_padding[:, None, None, :]  # (b, 1, 1, s_k), True = valid
        if causal:
            tri = torch.ones(s_q, s_k, dtype=torch.bool).tril()
            mask = tri[None, None] if mask is None else mask & tri[None, None]
        attn = masked_softmax(scores, mask)
        out = (attn @ v).transpose(1, 2).reshape(b, s_q, d)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ff_multiplier: int, dtype: torch.dtype):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_model * ff_multiplier, dtype=dtype)
        self.fc2 = nn.Linear(d_model * ff_multiplier, d_model, dtype=dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class EncoderBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, ff_multiplier: int, dtype: torch.dtype):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model, dtype=dtype)
        self.attn = MultiHeadAttention(d_model, n_heads, dtype)
        self.ln2 = nn.LayerNorm(d_model, dtype=dtype)
        self.mlp = FeedForward(d_model, ff_multiplier, dtype)

    def forward(self, x: torch.Tensor, key_padding: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, key_padding=key_padding)
        return x + self.mlp(self.ln2(x))


class DecoderBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, ff_multiplier: int, dtype: torch.dtype):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model, dtype=dtype)
        self.self_attn = MultiHeadAttention(d_model, n_heads, dtype)
        self.ln2 = nn.LayerNorm(d_model, dtype=dtype)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, dtype)
        self.ln3 = nn.LayerNorm(d_model, dtype=dtype)
        self.mlp = FeedForward(d_model, ff_multiplier, dtype)

    def forward(self, x: torch.Tensor, memory: torch.Tensor,
                token_padding: torch.Tensor, memory_padding: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.self_attn(h, h, causal=True, key_padding=token_padding)
        x = x + self.cross_attn(self.ln2(x), memory, key_padding=memory_padding)
        return x + self.mlp(self.ln3(x))


class AudioEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        dtype = config.torch_dtype
        d = config.d_model
        self.conv1 = nn.Conv1d(N_MELS, d, kernel_size=3, stride=1, padding=1, dtype=dtype)
        self.conv2 = nn.Conv1d(d, d, kernel_size=3, stride=2, padding=1, dtype=dtype)
        self.blocks = nn.ModuleList(
            EncoderBlock(d, config.n_heads, config.ff_multiplier, dtype)
            for _ in range(config.n_encoder_layers))
        self.ln = nn.LayerNorm(d, dtype=dtype)

    @staticmethod
    def _time_mask(lengths: torch.Tensor, size: int) -> torch.Tensor:
        return torch.arange(size)[None, :] < lengths[:, None]

    def forward(self, mel: torch.Tensor, lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # padded positions are re-zeroed after every stage so each item's
        # states match a single-item run exactly
        x = mel.transpose(1, 2)  # (b, mels, t)
        x = torch.nn.functional.gelu(self.conv1(x))
        x = x * self._time_mask(lengths, x.shape[-1])[:, None, :]
        x = torch.nn.functional.gelu(self.conv2(x))
        lengths = (lengths + 1) // 2
        x = x * self._time_mask(lengths, x.shape[-1])[:, None, :]
        # mean over frame pairs; a trailing odd frame stands alone
        if x.shape[-1] % 2:
            x = torch.nn.functional.pad(x, (0, 1))
        pairs = x.view(*x.shape[:2], -1, 2)
        second = torch.arange(pairs.shape[2])[None, :] * 2 + 1 < lengths[:, None]
        counts = (1 + second.long()).clamp(min=1)
        x = pairs.sum(dim=-1) / counts[:, None, :]
        lengths = (lengths + 1) // 2
        x = x.transpose(1, 2)  # (b, t/4, d)
        x = x * self._time_mask(lengths, x.shape[1])[:, :, None]
        x = x + sinusoidal_positions(x.shape[1], x.shape[2], x.dtype)[None]
        padding = self._time_mask(lengths, x.shape[1])
        for block in self.blocks:
            x = block(x, padding)
        x = self.ln(x) * padding[:, :, None]
        return x, lengths


class TextDecoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        dtype = config.torch_dtype
        d = config.d_model
        self.embedding = nn.Embedding(config.vocab_size, d, dtype=dtype)
        self.blocks = nn.ModuleList(
            DecoderBlock(d, config.n_heads, config.ff_multiplier, dtype)
            for _ in range(config.n_decoder_layers))
        self.ln = nn.LayerNorm(d, dtype=dtype)
        self.proj = nn.Linear(d, config.vocab_size, dtype=dtype)

    def forward(self, tokens: torch.Tensor, memory: torch.Tensor,
                token_lengths: torch.Tensor, memory_lengths: torch.Tensor) -> torch.Tensor:
        x = self.embedding(tokens)
        x = x + sinusoidal_positions(x.shape[1], x.shape[2], x.dtype)[None]
        token_padding = torch.arange(tokens.shape[1])[None, :] < token_lengths[:, None]
        memory_padding = torch.arange(memory.shape[1])[None, :] < memory_lengths[:, None]
        for block in self.blocks:
            x = block(x, memory, token_padding, memory_padding)
        return self.proj(self.ln(x))


@dataclass
class Batch:
    features: torch.Tensor        # (b, t, n_mels)
    feature_lengths: torch.Tensor  # (b,)
    tokens: torch.Tensor          # (b, s) padded
    token_lengths: torch.Tensor   # (b,)
    loss_mask: torch.Tensor       # (b, s) bool


def collate(examples: list[TrainingExample], pad_id: int,
            dtype: torch.dtype = torch.float64) -> Batch:
    b = len(examples)
    t_max = max(e.features.values.shape[0] for e in examples)
    s_max = max(len(e.tokens) for e in examples)
    features = torch.zeros(b, t_max, N_MELS, dtype=dtype)
    tokens = torch.full((b, s_max), pad_id, dtype=torch.long)
    mask = torch.zeros(b, s_max, dtype=torch.bool)
    f_len = torch.zeros(b, dtype=torch.long)
    t_len = torch.zeros(b, dtype=torch.long)
    for i, e in enumerate(examples):
        t, s = e.features.values.shape[0], len(e.tokens)
        features[i, :t] = torch.from_numpy(np.ascontiguousarray(e.features.values)).to(dtype)
        tokens[i, :s] = torch.tensor(e.tokens, dtype=torch.long)
        mask[i, :s] = torch.tensor(e.loss_mask, dtype=torch.bool)
        f_len[i], t_len[i] = t, s
    return Batch(features, f_len, tokens, t_len, mask)


class AudioTextModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = AudioEncoder(config)
        self.decoder = TextDecoder(config)
        self._init_parameters()

    def _init_parameters(self) -> None:
        gen = torch.Generator().manual_seed(self.config.seed & (2**63 - 1))
        for name, p in sorted(self.named_parameters()):
            with torch.no_grad():
                if p.dim() >= 2:
                    p.copy_(torch.empty_like(p).normal_(0.0, 0.02, generator=gen))
                elif "weight" in name:  # layer-norm gains
                    p.fill_(1.0)
                else:
                    p.zero_()

    def encode(self, features: torch.Tensor, lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if features.shape[1] > self.config.max_audio_frames * 4:
            raise AudioTooLong(
                f"{features.shape[1]} mel frames exceeds {self.config.max_audio_frames * 4}")
        return self.encoder(features, lengths)

    def logits(self, batch: Batch) -> torch.Tensor:
        if int(batch.tokens.max()) >= self.config.vocab_size:
            raise VocabMismatch(
                f"token id {int(batch.tokens.max())} outside vocab of {self.config.vocab_size}")
        memory, memory_lengths = self.encode(batch.features, batch.feature_lengths)
        # teacher forcing: predict tokens[t] from tokens[<t]
        return self.decoder(batch.tokens[:, :-1], memory,
                            (batch.token_lengths - 1).clamp(min=1), memory_lengths)

    def loss(self, batch: Batch) -> torch.Tensor:
        """Mean masked negative log-likelihood over the batch."""
        logits = self.logits(batch)
        logp = torch.log_softmax(logits, dim=-1)
        targets = batch.tokens[:, 1:]
        nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
        mask = batch.loss_mask[:, 1:]
        return (nll * mask).sum() / mask.sum()

    def example_loss(self, example: TrainingExample) -> float:
        return float(self.loss(collate([example], pad_id=0, dtype=self.config.torch_dtype)))

    @torch.no_grad()
    def generate(self, features: MelSpectrogram, prefix: TokenSequence,
                 end_id: int, max_new: int) -> TokenSequence:
        """Greedy continuation of an arbitrary forced prefix."""
        dtype = self.config.torch_dtype
        mel = torch.from_numpy(np.ascontiguousarray(features.values)).to(dtype)[None]
        memory, memory_lengths = self.encode(mel, torch.tensor([mel.shape[1]]))
        tokens = list(prefix)
        for _ in range(max_new):
            ids = torch.tensor([tokens], dtype=torch.long)
            out = self.decoder(ids, memory, torch.tensor([len(tokens)]), memory_lengths)
            nxt = int(out[0, -1].argmax())
            tokens.append(nxt)
            if nxt == end_id:
                break
        return tokens


def greedy_decode(features: MelSpectrogram, forced_header: TokenSequence,
                  model: AudioTextModel, vocab: Vocabulary,
                  max_len: int | None = None) -> TokenSequence:
    """Emit the validated header verbatim, then argmax until end-of-text."""
    parse_header(list(forced_header), vocab)  # malformed headers propagate
    if max_len is None:
        max_len = model.config.max_text_len
    return model.generate(features, list(forced_header), vocab.end_of_text_id, max_len)


@dataclass(frozen=True)
class LRSchedule:
    peak: float = 3e-4
    minimum: float = 3e-5
    warmup_steps: int = 200
    total_steps: int = 2000

    def at(self, step: int) -> float:
        """Learning rate at 1-based step: linear warmup then cosine decay."""
        if step <= self.warmup_steps:
            return self.peak * step / self.warmup_steps
        if step >= self.total_steps:
            return self.minimum
        frac = (step - self.warmup_steps) / (self.total_steps - self.warmup_steps)
        return self.minimum + 0.5 * (self.peak - self.minimum) * (1 + math.cos(math.pi * frac))


class Optimizer:
    """Decoupled-weight-decay adaptive optimizer with global-norm clipping.

    beta1=0.9, beta2=0.98, eps=1e-6, weight decay 0.05, clip 1.0; the
    learning rate follows the attached schedule. Moments exist for every
    parameter; only the stage-selected subset is updated per step.
    """

    def __init__(self, model: AudioTextModel, schedule: LRSchedule = LRSchedule(), *,
                 beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-6,
                 weight_decay: float = 0.05, clip_norm: float = 1.0):
        self.model = model
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay, self.clip_norm = weight_decay, clip_norm
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
        self.v = {n: torch.zeros_like(p) for n, p in model.named_parameters()}

    def step(self, trainable: dict[str, torch.Tensor]) -> None:
        self.step_count += 1
        lr = self.schedule.at(self.step_count)
        grads = {n: p.grad for n, p in trainable.items() if p.grad is not None}
        total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        scale = self.clip_norm / total if total > self.clip_norm else 1.0
        bc1 = 1 - self.beta1 ** self.step_count
        bc2 = 1 - self.beta2 ** self.step_count
        with torch.no_grad():
            for name, p in trainable.items():
                g = grads.get(name)
                g = torch.zeros_like(p) if g is None else g * scale
                m, v = self.m[name], self.v[name]
                m.mul_(self.beta1).add_(g, alpha=1 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1 - self.beta2)
                update = (m / bc1) / ((v / bc2).sqrt() + self.eps)
                p.add_(update + self.weight_decay * p, alpha=-lr)

    def state_tensors(self) -> dict[str, torch.Tensor]:
        named = {}
        for n, t in self.m.items():
            named[f"opt.m.{n}"] = t
        for n, t in self.v.items():
            named[f"opt.v.{n}"] = t
        return named

    def load_state_tensors(self, tensors: dict[str, torch.Tensor], step_count: int) -> None:
        for n in self.m:
            self.m[n] = tensors[f"opt.m.{n}"].clone()
            self.v[n] = tensors[f"opt.v.{n}"].clone()
        self.step_count = step_count


def stage_parameters(model: AudioTextModel, stage: TrainStage) -> dict[str, torch.Tensor]:
    prefix = "encoder." if stage is TrainStage.PRETRAIN else "decoder."
    return {n: p for n, p in model.named_parameters() if n.startswith(prefix)}


def train_step(batch: Batch, model: AudioTextModel, optimizer: Optimizer,
               stage: TrainStage) -> float:
    """One optimization step on the stage's trainable subset.

    A non-finite loss aborts the step with model and optimizer state
    untouched. Returns the (pre-update) loss value.
    """
    trainable = stage_parameters(model, stage)
    for name, p in model.named_parameters():
        p.requires_grad_(name in trainable)
        p.grad = None
    loss = model.loss(batch)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise DivergenceDetected(f"loss is {value} at step {optimizer.step_count + 1}")
    loss.backward()
    optimizer.step(trainable)
    for p in model.parameters():
        p.grad = None
    return value


# --- checkpoint codec: little-endian binary, bit-exact round trip ---

_MAGIC = b"AUDMT\x00\x01\x00"
_VERSION = 1
_DTYPE_CODES = {"float64": 0, "float32": 1, "int64": 2}
_DTYPE_NAMES = {v: k for k, v in _DTYPE_CODES.items()}
_NP_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8"}


def _write_tensor(fh, name: str, array: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    dtype = str(array.dtype)
    fh.write(struct.pack("<BB", _DTYPE_CODES[dtype], array.ndim))
    fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    data = np.ascontiguousarray(array).astype(_NP_DTYPES[dtype], copy=False).tobytes()
    fh.write(struct.pack("<Q", len(data)))
    fh.write(data)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointCorrupt(f"truncated: wanted {n} bytes, got {len(data)}")
    return data


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    code, ndim = struct.unpack("<BB", _read_exact(fh, 2))
    if code not in _DTYPE_NAMES:
        raise CheckpointCorrupt(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    (nbytes,) = struct.unpack("<Q", _read_exact(fh, 8))
    array = np.frombuffer(_read_exact(fh, nbytes), dtype=_NP_DTYPES[_DTYPE_NAMES[code]])
    return name, array.reshape(shape)


def save_checkpoint(path: str | Path, model: AudioTextModel,
                    optimizer: Optimizer | None = None,
                    extra: dict | None = None) -> None:
    meta = {
        "version": _VERSION,
        "config": asdict(model.config),
        "extra": extra or {},
    }
    tensors = {n: p.detach().numpy() for n, p in model.named_parameters()}
    if optimizer is not None:
        meta["optimizer"] = {
            "step_count": optimizer.step_count,
            "schedule": asdict(optimizer.schedule),
            "beta1": optimizer.beta1, "beta2": optimizer.beta2, "eps": optimizer.eps,
            "weight_decay": optimizer.weight_decay, "clip_norm": optimizer.clip_norm,
        }
        tensors.update({n: t.numpy() for n, t in optimizer.state_tensors().items()})
    buf = io.BytesIO()
    buf.write(_MAGIC)
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(meta_raw)))
    buf.write(meta_raw)
    buf.write(struct.pack("<Q", len(tensors)))
    for name in sorted(tensors):
        _write_tensor(buf, name, tensors[name])
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[AudioTextModel, Optimizer | None, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointNotFound(str(path))
    with open(path, "rb") as fh:
        if _read_exact(fh, len(_MAGIC)) != _MAGIC:
            raise CheckpointCorrupt("bad magic")
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8))
        try:
            meta = json.loads(_read_exact(fh, meta_len))
        except json.JSONDecodeError as e:
            raise CheckpointCorrupt(f"metadata: {e}") from None
        if meta.get("version") != _VERSION:
            raise CheckpointCorrupt(f"unsupported version {meta.get('version')}")
        (count,) = struct.unpack("<Q", _read_exact(fh, 8))
        tensors = dict(_read_tensor(fh) for _ in range(count))
    model = AudioTextModel(ModelConfig(**meta["config"]))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name not in tensors:
                raise CheckpointCorrupt(f"missing tensor {name}")
            if tuple(tensors[name].shape) != tuple(p.shape):
                raise CheckpointCorrupt(f"shape mismatch for {name}")
            p.copy_(torch.from_numpy(tensors[name].copy()))
    optimizer = None
    if "optimizer" in meta:
        o = meta["optimizer"]
        optimizer = Optimizer(
            model, LRSchedule(**o["schedule"]), beta1=o["beta1"], beta2=o["beta2"],
            eps=o["eps"], weight_decay=o["weight_decay"], clip_norm=o["clip_norm"])
        optimizer.load_state_tensors(
            {n: torch.from_numpy(t.copy()) for n, t in tensors.items() if n.startswith("opt.")},
            o["step_count"])
    return model, optimizer, meta["extra"]
