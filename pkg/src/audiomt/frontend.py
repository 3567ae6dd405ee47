"""Audio frontend: waveform I/O, resampling, log-mel features, SpecAugment.

The feature pipeline mirrors the usual speech-recognition recipe: 16 kHz
mono input, 80-channel log-mel spectrogram with a 25 ms window and 10 ms
hop. Together with the encoder's two stride-2 down-sampling stages this
puts one encoder output frame every 40 ms of audio.
"""
from __future__ import annotations

import math
import wave
from dataclasses import dataclass

import numpy as np
from scipy.signal import upfirdn

from .errors import (
    AudioTooShort,
    ChannelCountUnsupported,
    EmptyAudio,
    InvalidIndex,
    SampleFormatUnsupported,
    SampleRateMismatch,
)

SAMPLE_RATE = 16000
N_MELS = 80
WINDOW_SECONDS = 0.025
HOP_SECONDS = 0.010
# 10 ms hop x conv stride 2 x pooling stride 2
ENCODER_FRAME_SECONDS = 0.040
LOG_FLOOR_EPS = 1e-10


@dataclass
class AudioClip:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ChannelCountUnsupported(f"expected mono samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    """T x 80 matrix of log-mel energies with frame-time metadata."""

    values: np.ndarray
    hop_seconds: float = HOP_SECONDS
    window_seconds: float = WINDOW_SECONDS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != N_MELS:
            raise ValueError(f"expected (T, {N_MELS}) matrix, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mel values contain non-finite entries")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SpecAugmentPolicy:
    freq_mask_width_max: int = 0
    n_freq_masks: int = 0
    time_mask_width_max: int = 0
    n_time_masks: int = 0
    seed: int = 0

    def __post_init__(self):
        if min(self.freq_mask_width_max, self.n_freq_masks,
               self.time_mask_width_max, self.n_time_masks) < 0:
            raise ValueError("mask widths and counts must be >= 0")


# SpecAugment "LibriSpeech Basic" (LB) without time warping.
LIBRISPEECH_BASIC = SpecAugmentPolicy(
    freq_mask_width_max=27, n_freq_masks=1,
    time_mask_width_max=100, n_time_masks=1,
)


def read_wav(path) -> AudioClip:
    """Read a mono PCM16 little-endian WAV file."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ChannelCountUnsupported(f"{path}: {f.getnchannels()} channels, expected mono")
        if f.getsampwidth() != 2:
            raise SampleFormatUnsupported(f"{path}: {8 * f.getsampwidth()}-bit samples, expected PCM16")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip) -> None:
    """Write a clip as mono PCM16 little-endian WAV."""
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(clip.sample_rate)
        f.writeframes(pcm.tobytes())


def _sinc_kernel(up: int, down: int, half_width: int = 32, beta: float = 8.0) -> np.ndarray:
    """Kaiser-windowed sinc low-pass for rational resampling by up/down.

    Cutoff is at the smaller of the two Nyquist frequencies, i.e.
    min(pi/up, pi/down) in the zero-stuffed domain; gain `up` restores
    amplitude after zero insertion.
    """
    cutoff = 1.0 / max(up, down)
    taps = 2 * half_width * max(up, down) + 1
    n = np.arange(taps) - (taps - 1) / 2
    kernel = cutoff * np.sinc(cutoff * n) * np.kaiser(taps, beta)
    return kernel * up


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample to target_rate with a windowed-sinc polyphase filter.

    Duration is preserved to within one sample period: the output has
    round(n * target/source) samples aligned to the input's time origin.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if len(clip.samples) == 0:
        raise EmptyAudio("cannot resample an empty clip")
    if clip.sample_rate == target_rate:
        return AudioClip(clip.samples.copy(), target_rate)

    g = math.gcd(clip.sample_rate, target_rate)
    up, down = target_rate // g, clip.sample_rate // g
    kernel = _sinc_kernel(up, down)
    # Shift the kernel's group delay to a multiple of `down` so the
    # decimated stream starts exactly at the input's first sample.
    delay = (len(kernel) - 1) // 2
    pad = (-delay) % down
    if pad:
        kernel = np.concatenate([np.zeros(pad), kernel])
        delay += pad
    out = upfirdn(kernel, clip.samples, up=up, down=down)
    start = delay // down
    n_out = int(round(len(clip.samples) * target_rate / clip.sample_rate))
    out = out[start:start + n_out]
    if len(out) < n_out:
        out = np.pad(out, (0, n_out - len(out)))
    return AudioClip(out, target_rate)


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = 400,
                   sample_rate: int = SAMPLE_RATE, f_min: float = 0.0,
                   f_max: float | None = None) -> np.ndarray:
    """Triangular mel filterbank, (n_mels, n_fft//2 + 1), HTK scale, 0-8 kHz."""
    if f_max is None:
        f_max = sample_rate / 2.0
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (freqs - lo) / max(ctr - lo, 1e-12)
        falling = (hi - freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def filterbank_center_frequencies(n_mels: int = N_MELS, f_min: float = 0.0,
                                  f_max: float = SAMPLE_RATE / 2.0) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    return mel_to_hz(mel_pts[1:-1])


def frame_count(n_samples: int, sample_rate: int = SAMPLE_RATE) -> int:
    """Number of 25 ms windows at a 10 ms hop, no padding."""
    win = int(round(WINDOW_SECONDS * sample_rate))
    hop = int(round(HOP_SECONDS * sample_rate))
    if n_samples < win:
        return 0
    return 1 + (n_samples - win) // hop


_FILTERBANK_CACHE: dict[int, np.ndarray] = {}


def log_mel(clip: AudioClip, normalize: bool = True, eps: float = LOG_FLOOR_EPS) -> MelSpectrogram:
    """80-channel log-mel spectrogram of a 16 kHz clip.

    Frames are 400 samples (25 ms) every 160 samples (10 ms), periodic
    Hann window, power spectrum through an HTK-scale triangular
    filterbank spanning 0-8 kHz. Energies are floored at `eps` before
    the base-10 log. Normalization rule (per utterance): clamp below at
    max - 8, then shift/scale as (x + 4) / 4 to put typical speech
    roughly at zero mean, unit-ish spread.
    """
    if clip.sample_rate != SAMPLE_RATE:
        raise SampleRateMismatch(f"expected {SAMPLE_RATE} Hz, got {clip.sample_rate}")
    win = int(round(WINDOW_SECONDS * SAMPLE_RATE))
    hop = int(round(HOP_SECONDS * SAMPLE_RATE))
    if len(clip.samples) < win:
        raise AudioTooShort(f"need at least {win} samples, got {len(clip.samples)}")

    n_frames = frame_count(len(clip.samples))
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, win)[::hop][:n_frames]
    window = np.hanning(win + 1)[:-1]  # periodic Hann
    spectrum = np.fft.rfft(frames * window, n=win, axis=1)
    power = np.abs(spectrum) ** 2

    if win not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE[win] = mel_filterbank(n_fft=win)
    mel = power @ _FILTERBANK_CACHE[win].T
    log_spec = np.log10(np.maximum(mel, eps))
    if normalize:
        log_spec = np.maximum(log_spec, log_spec.max() - 8.0)
        log_spec = (log_spec + 4.0) / 4.0
    return MelSpectrogram(log_spec)


def spec_augment(mel: MelSpectrogram, policy: SpecAugmentPolicy) -> MelSpectrogram:
    """Mask random time/frequency bands, filling with the utterance mean.

    Deterministic under a fixed policy seed; a policy with zero counts
    is the identity.
    """
    n_frames, n_chan = mel.values.shape
    if policy.freq_mask_width_max > n_chan or policy.time_mask_width_max > n_frames:
        raise ValueError("mask width exceeds the corresponding feature dimension")
    out = mel.values.copy()
    if policy.n_freq_masks == 0 and policy.n_time_masks == 0:
        return MelSpectrogram(out, mel.hop_seconds, mel.window_seconds)
    rng = np.random.default_rng(policy.seed)
    fill = out.mean()
    for _ in range(policy.n_freq_masks):
        width = int(rng.integers(0, policy.freq_mask_width_max + 1))
        start = int(rng.integers(0, n_chan - width + 1))
        out[:, start:start + width] = fill
    for _ in range(policy.n_time_masks):
        width = int(rng.integers(0, policy.time_mask_width_max + 1))
        start = int(rng.integers(0, n_frames - width + 1))
        out[start:start + width, :] = fill
    return MelSpectrogram(out, mel.hop_seconds, mel.window_seconds)


def encoder_frame_to_time(frame_index: int) -> float:
    """Start time (seconds) of an encoder output frame: index x 40 ms."""
    if frame_index < 0:
        raise InvalidIndex(f"frame index must be >= 0, got {frame_index}")
    return frame_index * ENCODER_FRAME_SECONDS


def load_features(path, normalize: bool = True) -> MelSpectrogram:
    """Read a WAV file, resample to 16 kHz if needed, and extract log-mel."""
    clip = read_wav(path)
    if clip.sample_rate != SAMPLE_RATE:
        clip = resample(clip, SAMPLE_RATE)
    return log_mel(clip, normalize=normalize)
