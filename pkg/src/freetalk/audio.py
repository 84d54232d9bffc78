"""Speech audio loading and frame-aligned feature extraction."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError, DataError, FormatError

LOG_EPS = 1e-6


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("non-finite audio samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class AudioFeatures:
    matrix: np.ndarray  # S x C
    native_rate: float  # feature frames per second
    offset: float = 0.0  # time (s) of feature frame 0


@dataclass(frozen=True)
class FrameAlignedFeatures:
    matrix: np.ndarray  # T x C
    fps: float


def load_audio(path) -> Waveform:
    """Read a PCM16 or float32 WAV file as a mono waveform in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return Waveform(x, int(rate))


def save_audio(path, wave: Waveform, pcm16: bool = True) -> None:
    x = np.clip(wave.samples, -1.0, 1.0)
    if pcm16:
        data = np.round(x * 32767.0).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(path, wave.sample_rate, data)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin=0.0, fmax=None) -> np.ndarray:
    """HTK-style triangular mel filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = fmax or sample_rate / 2

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    bins = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, bins.size))
    for k in range(n_mels):
        lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
        up = (bins - lo) / (mid - lo)
        down = (hi - bins) / (hi - mid)
        fb[k] = np.maximum(0.0, np.minimum(up, down))
    return fb


@dataclass(frozen=True)
class LogMelExtractor:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 80

    @property
    def channels(self) -> int:
        return self.n_mels

    def __call__(self, wave: Waveform) -> AudioFeatures:
        sr = wave.sample_rate
        win = int(round(self.window_ms * sr / 1000.0))
        hop = int(round(self.hop_ms * sr / 1000.0))
        x = np.asarray(wave.samples, dtype=np.float64)
        if x.size < win:
            raise DataError(f"audio shorter than one analysis window ({x.size} < {win} samples)")
        n_frames = (x.size - win) // hop + 1
        idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
        frames = x[idx] * np.hanning(win)[None, :]
        n_fft = 1 << (win - 1).bit_length()
        power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2 / win
        mel = power @ mel_filterbank(self.n_mels, n_fft, sr).T
        # frame k covers [k*hop, k*hop + win); its centre is the feature timestamp
        return AudioFeatures(np.log(mel + LOG_EPS), sr / hop, offset=0.5 * win / sr)


class ExternalEncoderExtractor:
    """Adapter for a pretrained speech encoder producing S x 768 token features.

    ``encoder`` maps ``(samples, sample_rate)`` to an ``(S, channels)`` array at
    ``native_rate`` frames per second; nothing is downloaded here.
    """

    def __init__(self, encoder: Callable[[np.ndarray, int], np.ndarray] | None = None,
                 native_rate: float = 50.0, channels: int = 768):
        self.encoder = encoder
        self.native_rate = native_rate
        self.channels = channels

    def __call__(self, wave: Waveform) -> AudioFeatures:
        if self.encoder is None:
            raise ConfigError("the 'external' extractor needs an encoder callable")
        h = np.asarray(self.encoder(wave.samples, wave.sample_rate), dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.channels:
            raise DataError(f"external encoder returned shape {h.shape}, expected (S, {self.channels})")
        return AudioFeatures(h, self.native_rate, offset=0.5 / self.native_rate)


def make_extractor(config: dict | None = None):
    config = dict(config or {})
    kind = config.pop("extractor", "logmel")
    if kind == "logmel":
        return LogMelExtractor(**{k: config[k] for k in ("window_ms", "hop_ms", "n_mels") if k in config})
    if kind == "external":
        return ExternalEncoderExtractor(config.get("encoder"))
    raise ConfigError(f"unknown audio extractor {kind!r}")


def extract_features(wave: Waveform, config: dict | None = None) -> AudioFeatures:
    return make_extractor(config)(wave)


def n_frames_for(duration: float, fps: float) -> int:
    return int(round(duration * fps))


def resample_to_frames(feats: AudioFeatures, fps: float, duration: float) -> FrameAlignedFeatures:
    """Linearly interpolate features at frame centres ``(k + 0.5) / fps``.

    Sample times are clamped to ``[0, duration]``; the output has
    ``round(duration * fps)`` rows.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    h = np.asarray(feats.matrix, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise DataError("empty feature matrix")
    T = n_frames_for(duration, fps)
    t = np.clip((np.arange(T) + 0.5) / fps, 0.0, duration)
    # fractional index into the native feature timeline
    pos = np.clip((t - feats.offset) * feats.native_rate, 0.0, h.shape[0] - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, h.shape[0] - 1)
    w = (pos - lo)[:, None]
    out = (1.0 - w) * h[lo] + w * h[hi]
    return FrameAlignedFeatures(out, fps)


def frame_features(wave: Waveform, fps: float, config: dict | None = None) -> FrameAlignedFeatures:
    """Extract and align features for a whole clip, cached under ``$FREETALK_CACHE``."""
    root = os.environ.get("FREETALK_CACHE")
    key = None
    if root and not (config or {}).get("extractor", "logmel") == "external":
        h = hashlib.sha1(np.ascontiguousarray(wave.samples).tobytes())
        h.update(repr((wave.sample_rate, fps, sorted((config or {}).items()))).encode())
        key = Path(root) / "features" / f"{h.hexdigest()[:20]}.npy"
        if key.exists():
            return FrameAlignedFeatures(np.load(key), fps)
    out = resample_to_frames(extract_features(wave, config), fps, wave.duration)
    if key is not None:
        key.parent.mkdir(parents=True, exist_ok=True)
        tmp = key.with_suffix(".tmp.npy")
        np.save(tmp, out.matrix)
        os.replace(tmp, key)
    return out
