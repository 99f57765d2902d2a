"""Log-Mel feature extraction and global mean-variance normalization (GMVN).

Front-end settings are fixed so that every feature set in a pipeline is
comparable: 16 kHz audio, 25 ms Hann window (400 samples), 10 ms hop
(160 samples), 512-point FFT, 80 HTK-mel triangular filters over 0-8 kHz,
natural log of the filterbank power with a 1e-10 floor.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy.signal import get_window

from . import _io
from .errors import FeatshiftError, ShapeError, TooShortError

SAMPLE_RATE = 16000
N_MELS = 80
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """A ``T x C`` log-Mel matrix plus a flag telling whether GMVN was applied.

    Instances convert transparently with ``np.asarray``.
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ShapeError(f"spectrogram must be 2-D, got shape {v.shape}")
        if v.shape[0] < 1:
            raise ShapeError("spectrogram needs at least one frame")
        if not np.all(np.isfinite(v)):
            raise ShapeError("spectrogram contains non-finite values")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype, copy=False)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = SAMPLE_RATE
    win_length: int = 400
    hop_length: int = 160
    n_fft: int = 512
    n_mels: int = N_MELS
    f_min: float = 0.0
    f_max: float = 8000.0
    log_floor: float = LOG_FLOOR


def mel_scale(f):
    """HTK mel: ``2595 * log10(1 + f / 700)``."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_inverse(m):
    m = np.asarray(m, dtype=np.float64)
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=8)
def _filterbank(cfg: FrontendConfig) -> tuple[np.ndarray, np.ndarray]:
    edges_mel = np.linspace(mel_scale(cfg.f_min), mel_scale(cfg.f_max), cfg.n_mels + 2)
    edges_hz = mel_inverse(edges_mel)
    bins_hz = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bins_hz[None, :] - lo) / (mid - lo)
    falling = (hi - bins_hz[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    centers = edges_mel[1:-1].copy()
    centers.setflags(write=False)
    return fb, centers


def mel_filterbank(cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """``n_mels x (n_fft/2 + 1)`` triangular filters with unit peak."""
    return _filterbank(cfg)[0]


def channel_center_mels(cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    return _filterbank(cfg)[1]


def channel_center_hz(cfg: FrontendConfig = FrontendConfig()) -> np.ndarray:
    return mel_inverse(channel_center_mels(cfg))


def n_frames_for(n_samples: int, cfg: FrontendConfig = FrontendConfig()) -> int:
    if n_samples < cfg.win_length:
        return 0
    return 1 + (n_samples - cfg.win_length) // cfg.hop_length


def extract_logmel(wave, cfg: FrontendConfig = FrontendConfig()) -> Spectrogram:
    """Compute the log-Mel spectrogram of a waveform.

    ``wave`` is anything with ``samples`` and ``sample_rate`` attributes, or a
    bare sample array assumed to be at ``cfg.sample_rate``.
    """
    samples = getattr(wave, "samples", wave)
    sr = getattr(wave, "sample_rate", cfg.sample_rate)
    if sr != cfg.sample_rate:
        raise ValueError(f"expected {cfg.sample_rate} Hz audio, got {sr} Hz")
    x = np.asarray(samples, dtype=np.float64)
    n = n_frames_for(len(x), cfg)
    if n == 0:
        raise TooShortError(f"{len(x)} samples is shorter than one {cfg.win_length}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.win_length)[:: cfg.hop_length][:n]
    window = get_window("hann", cfg.win_length)
    spec = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    mel = power @ mel_filterbank(cfg).T
    return Spectrogram(np.log(np.maximum(mel, cfg.log_floor)))


@dataclass(frozen=True, eq=False)
class GmvnStats:
    mean: np.ndarray
    std: np.ndarray
    floor: float = field(default=STD_FLOOR)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.maximum(np.asarray(self.std, dtype=np.float64), self.floor)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ShapeError("GMVN mean and std must be equal-length vectors")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "GmvnStats":
        d = json.loads(text)
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))

    def save(self, path) -> None:
        _io.write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "GmvnStats":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def gmvn_fit(sets: Iterable) -> GmvnStats:
    """Per-channel mean and population std over all frames pooled together."""
    mats = [np.asarray(s, dtype=np.float64) for s in sets]
    mats = [m for m in mats if m.size]
    if not mats:
        raise FeatshiftError("GMVN needs at least one frame")
    pooled = np.concatenate(mats, axis=0)
    return GmvnStats(pooled.mean(axis=0), pooled.std(axis=0))


def _check_channels(x: np.ndarray, stats: GmvnStats) -> None:
    if x.ndim != 2 or x.shape[1] != stats.mean.shape[0]:
        raise ShapeError(f"features have shape {x.shape}, stats expect {stats.mean.shape[0]} channels")


def gmvn_apply(x, stats: GmvnStats) -> Spectrogram:
    x = np.asarray(x, dtype=np.float64)
    _check_channels(x, stats)
    return Spectrogram((x - stats.mean) / stats.std, normalized=True)


def gmvn_invert(x_norm, stats: GmvnStats) -> Spectrogram:
    x = np.asarray(x_norm, dtype=np.float64)
    _check_channels(x, stats)
    return Spectrogram(x * stats.std + stats.mean, normalized=False)
