"""Statistics-driven feature converters: Stats, Coral and F0-norm.

All three operate on raw (un-normalized) log-Mel frames treated as row vectors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import _io
from .errors import FeatshiftError, ShapeError
from .melfeat import STD_FLOOR, Spectrogram, channel_center_mels, mel_scale

DEFAULT_TARGET_F0 = 270.0
DEFAULT_CORAL_EPS = 1e-5


@dataclass(frozen=True, eq=False)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    cov: np.ndarray
    n_frames: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "mean": self.mean.tolist(),
                "std": self.std.tolist(),
                "cov": self.cov.tolist(),
                "n_frames": int(self.n_frames),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ChannelStats":
        d = json.loads(text)
        return cls(
            np.array(d["mean"], dtype=np.float64),
            np.array(d["std"], dtype=np.float64),
            np.array(d["cov"], dtype=np.float64),
            int(d["n_frames"]),
        )

    def save(self, path) -> None:
        _io.write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "ChannelStats":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def compute_channel_stats(sets: Iterable) -> ChannelStats:
    """Pooled per-channel mean, population std and full population covariance."""
    mats = [np.asarray(s, dtype=np.float64) for s in sets]
    if not mats:
        raise FeatshiftError("no feature matrices given")
    pooled = np.concatenate(mats, axis=0)
    if pooled.shape[0] < 2:
        raise FeatshiftError(f"channel statistics need at least 2 frames, got {pooled.shape[0]}")
    mean = pooled.mean(axis=0)
    centered = pooled - mean
    cov = centered.T @ centered / pooled.shape[0]
    cov = 0.5 * (cov + cov.T)
    std = np.sqrt(np.diag(cov))
    return ChannelStats(mean, std, cov, pooled.shape[0])


def _check(x: np.ndarray, stats: ChannelStats) -> None:
    if x.ndim != 2 or x.shape[1] != stats.mean.shape[0]:
        raise ShapeError(f"features of shape {x.shape} do not match {stats.mean.shape[0]}-channel stats")


def stats_convert(x, src: ChannelStats, tgt: ChannelStats) -> Spectrogram:
    """Standardize with the source set's mean/std, re-color with the target's."""
    x = np.asarray(x, dtype=np.float64)
    _check(x, src)
    _check(x, tgt)
    scale = tgt.std / np.maximum(src.std, STD_FLOOR)
    return Spectrogram((x - src.mean) * scale + tgt.mean)


def psd_sqrt(cov, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Square root and inverse square root of ``cov + eps * I``."""
    c = np.asarray(cov, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeError(f"covariance must be square, got {c.shape}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if np.max(np.abs(c - c.T), initial=0.0) > 1e-6:
        raise FeatshiftError("covariance is not symmetric")
    w, v = np.linalg.eigh(0.5 * (c + c.T) + eps * np.eye(c.shape[0]))
    w = np.maximum(w, np.finfo(np.float64).tiny)
    root = (v * np.sqrt(w)) @ v.T
    inv_root = (v / np.sqrt(w)) @ v.T
    return 0.5 * (root + root.T), 0.5 * (inv_root + inv_root.T)


def coral_transform(src: ChannelStats, tgt: ChannelStats, eps: float = DEFAULT_CORAL_EPS) -> np.ndarray:
    """The matrix ``C_src^-1/2 @ C_tgt^1/2`` applied to centered row vectors."""
    _, src_inv = psd_sqrt(src.cov, eps)
    tgt_root, _ = psd_sqrt(tgt.cov, eps)
    return src_inv @ tgt_root


def coral_convert(x, src: ChannelStats, tgt: ChannelStats, eps: float = DEFAULT_CORAL_EPS,
                  transform: np.ndarray | None = None) -> Spectrogram:
    """Whiten with the source covariance and re-color with the target covariance.

    Pass a precomputed ``transform`` (from :func:`coral_transform`) to avoid
    repeating the eigendecompositions for every utterance of a set.
    """
    x = np.asarray(x, dtype=np.float64)
    _check(x, src)
    _check(x, tgt)
    if transform is None:
        transform = coral_transform(src, tgt, eps)
    return Spectrogram((x - src.mean) @ transform + tgt.mean)


def warp_factor(median_f0: float, target_f0: float = DEFAULT_TARGET_F0) -> float:
    if not median_f0 > 0 or not target_f0 > 0:
        raise ValueError("F0 values must be positive")
    return mel_scale(target_f0) / mel_scale(median_f0)


def warp_channels(x, k: float, centers: np.ndarray | None = None) -> np.ndarray:
    """Resample each frame so content at mel ``m`` moves to mel ``k * m``.

    Output channel ``j`` reads the input at mel ``m_j / k`` by linear
    interpolation over the channel centers; positions beyond the grid take the
    edge channel's value.
    """
    x = np.asarray(x, dtype=np.float64)
    if centers is None:
        centers = channel_center_mels()
    if x.ndim != 2 or x.shape[1] != centers.shape[0]:
        raise ShapeError(f"features of shape {x.shape} do not match {centers.shape[0]} channel centers")
    if k == 1.0:
        return x.copy()
    pos = centers / k
    # fractional index of each read position on the (non-uniform in index) center grid
    idx = np.interp(pos, centers, np.arange(centers.size))
    lo = np.floor(idx).astype(int)
    hi = np.minimum(lo + 1, centers.size - 1)
    frac = idx - lo
    return x[:, lo] * (1.0 - frac) + x[:, hi] * frac


def f0norm_convert(x, median_f0: float, target_f0: float = DEFAULT_TARGET_F0) -> Spectrogram:
    """Formant shift by the mel-scale ratio of target to measured median F0."""
    return Spectrogram(warp_channels(x, warp_factor(median_f0, target_f0)))
