"""F0 tracking, utterance median F0, F0 class bins and 1-D Wasserstein distance."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _io
from .errors import FeatshiftError, NoVoicingError, TooShortError
from .melfeat import SAMPLE_RATE

F0_MIN = 75.0
F0_MAX = 500.0
HOP_SECONDS = 0.01
WINDOW_SECONDS = 0.04
VOICING_THRESHOLD = 0.45
# Among lag peaks within this fraction of the best one, the shortest lag wins (octave guard).
OCTAVE_TOLERANCE = 0.9

N_F0_BINS = 10
F0_BIN_LOW = 100.0
F0_BIN_HIGH = 350.0


@dataclass(frozen=True, eq=False)
class F0Track:
    values: np.ndarray
    hop: float = HOP_SECONDS

    @property
    def voiced(self) -> np.ndarray:
        return self.values[self.values > 0]


def _nccf(frames: np.ndarray, lags: np.ndarray, span: int) -> np.ndarray:
    """Normalized cross-correlation between ``x[0:span]`` and ``x[lag:lag+span]`` per frame."""
    width = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * width)))
    head = frames[:, :span]
    xcorr = np.fft.irfft(np.conj(np.fft.rfft(head, nfft)) * np.fft.rfft(frames, nfft), nfft)
    num = xcorr[:, lags]
    csum = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames**2, axis=1)], axis=1)
    e_lag = csum[:, lags + span] - csum[:, lags]
    e0 = csum[:, span]
    denom = np.sqrt(np.maximum(e0[:, None] * e_lag, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 1e-12, num / np.where(denom > 0, denom, 1.0), 0.0)
    return r


def estimate_f0_track(wave, sample_rate: int | None = None) -> F0Track:
    """Frame-wise F0 (Hz, 0 when unvoiced) on a 10 ms grid with 40 ms windows."""
    samples = np.asarray(getattr(wave, "samples", wave), dtype=np.float64)
    sr = sample_rate or getattr(wave, "sample_rate", SAMPLE_RATE)
    win = int(round(WINDOW_SECONDS * sr))
    hop = int(round(HOP_SECONDS * sr))
    if len(samples) < win:
        raise TooShortError(f"F0 tracking needs at least {win} samples, got {len(samples)}")
    lag_min = int(np.floor(sr / F0_MAX))
    lag_max = int(np.ceil(sr / F0_MIN))
    lag_max = min(lag_max, win - win // 4)
    span = win - lag_max - 1
    lags = np.arange(lag_min - 1, lag_max + 2)

    n = 1 + (len(samples) - win) // hop
    frames = np.lib.stride_tricks.sliding_window_view(samples, win)[::hop][:n]
    frames = frames - frames.mean(axis=1, keepdims=True)
    r = _nccf(frames, lags, span)

    f0 = np.zeros(n)
    inner = r[:, 1:-1]
    is_peak = (inner >= r[:, :-2]) & (inner > r[:, 2:])
    for i in range(n):
        peaks = np.flatnonzero(is_peak[i])
        if peaks.size == 0:
            continue
        best = inner[i, peaks].max()
        if best < VOICING_THRESHOLD:
            continue
        p = peaks[np.argmax(inner[i, peaks] >= OCTAVE_TOLERANCE * best)]
        y0, y1, y2 = r[i, p], r[i, p + 1], r[i, p + 2]
        curv = y0 - 2.0 * y1 + y2
        delta = 0.5 * (y0 - y2) / curv if curv < 0 else 0.0
        lag = lags[p + 1] + delta
        hz = sr / lag
        if F0_MIN <= hz <= F0_MAX:
            f0[i] = hz
    return F0Track(f0)


def median_f0(track) -> float:
    """Median over voiced frames; the lower middle element for even counts."""
    values = np.asarray(getattr(track, "values", track), dtype=np.float64)
    voiced = np.sort(values[values > 0])
    if voiced.size == 0:
        raise NoVoicingError("no voiced frames")
    return float(voiced[(voiced.size - 1) // 2])


def f0_bin(median: float) -> int:
    """Map a median F0 onto one of 10 equal 25 Hz classes spanning 100-350 Hz."""
    if not median > 0:
        raise ValueError(f"median F0 must be positive, got {median}")
    width = (F0_BIN_HIGH - F0_BIN_LOW) / N_F0_BINS
    idx = int(np.floor((median - F0_BIN_LOW) / width))
    return min(max(idx, 0), N_F0_BINS - 1)


def wasserstein1(p: Sequence[float], q: Sequence[float]) -> float:
    """Exact W1 between two empirical distributions.

    Integrates ``|F_p^-1(u) - F_q^-1(u)|`` over ``u`` in [0, 1]; both quantile
    functions are step functions, so the integral is a finite sum over the
    merged breakpoints ``{i/m} | {j/n}``.
    """
    a = np.sort(np.asarray(p, dtype=np.float64))
    b = np.sort(np.asarray(q, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise FeatshiftError("W1 needs two non-empty samples")
    m, n = a.size, b.size
    if m == n:
        return float(np.mean(np.abs(a - b)))
    # breakpoints as exact fractions k/(m*n) to keep the grid merge exact
    grid = np.union1d(np.arange(m + 1) * n, np.arange(n + 1) * m)
    widths = np.diff(grid) / (m * n)
    mids = grid[:-1]
    ia = mids // n
    ib = mids // m
    return float(np.sum(widths * np.abs(a[ia] - b[ib])))


def write_f0_csv(path, rows: Iterable[tuple[str, float]], header=("utterance_id", "median_f0_hz")) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for uid, f0 in rows:
        w.writerow([uid, f"{f0:.6f}"])
    _io.write_text(path, buf.getvalue())
