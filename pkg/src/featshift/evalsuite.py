"""Diagnostics for converted feature sets.

* a small 3-way domain classifier and the share of a set it assigns to a target domain;
* utterance-level F0 of feature sets (waveform tracker when audio exists,
  a spectral proxy otherwise) and the W1 distance between F0 distributions;
* mean log-Mel spectra and Pearson correlation.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import _io, checkpoint
from .corpus_io import DOMAINS, UtteranceRecord, Waveform
from .dae import crop_segment
from .errors import FeatshiftError, NoVoicingError, ShapeError
from .melfeat import GmvnStats, channel_center_hz, channel_center_mels, gmvn_apply, gmvn_fit, mel_inverse
from .nncore import (
    AdamState,
    Conv1d,
    LeakyReLU,
    Linear,
    Sequential,
    TimeMeanPool,
    adam_step,
    cross_entropy,
    zero_grads,
)
from .pitch import estimate_f0_track, median_f0, wasserstein1

CLASSIFIER_MAGIC = b"DCLF"
PROXY_MAX_HZ = 500.0
PROXY_PERCENTILE = 40.0
PROXY_PEAK_DB = 10.0


# --------------------------------------------------------------------------- domain classifier


@dataclass
class ClassifierConfig:
    channels: int = 32
    hidden: int = 32
    kernel: int = 5
    segment_length: int = 128
    batch_size: int = 16
    steps: int = 300
    lr: float = 0.001
    holdout_fraction: float = 0.25
    n_mels: int = 80
    seed: int = 0


class DomainClassifier:
    """Two conv blocks, time average, two fully connected layers, 3-way output."""

    def __init__(self, cfg: ClassifierConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.net = Sequential(
            Conv1d("clf.conv0", cfg.n_mels, cfg.channels, cfg.kernel, rng),
            LeakyReLU(),
            Conv1d("clf.conv1", cfg.channels, cfg.channels, cfg.kernel, rng),
            LeakyReLU(),
            TimeMeanPool(),
            Linear("clf.fc0", cfg.channels, cfg.hidden, rng),
            LeakyReLU(),
            Linear("clf.fc1", cfg.hidden, len(DOMAINS), rng),
        )
        self.gmvn: GmvnStats | None = None
        self.holdout_accuracy: float | None = None

    def parameters(self):
        return self.net.parameters()

    def logits(self, x) -> np.ndarray:
        if self.gmvn is None:
            raise FeatshiftError("classifier has no normalization statistics")
        xn = np.asarray(gmvn_apply(x, self.gmvn))
        return self.net.infer(xn[None])[0]

    def predict(self, feature_set: Sequence) -> np.ndarray:
        return np.array([int(np.argmax(self.logits(x))) for x in feature_set], dtype=int)

    def save(self, path) -> None:
        blocks = {p.name: p.data for p in self.parameters()}
        blocks["gmvn.mean"] = self.gmvn.mean
        blocks["gmvn.std"] = self.gmvn.std
        meta = {"config": dataclasses.asdict(self.cfg), "holdout_accuracy": self.holdout_accuracy}
        checkpoint.save(path, CLASSIFIER_MAGIC, meta, blocks)

    @classmethod
    def load(cls, path) -> "DomainClassifier":
        meta, blocks = checkpoint.load(path, CLASSIFIER_MAGIC)
        clf = cls(ClassifierConfig(**meta["config"]))
        for p in clf.parameters():
            if p.name not in blocks or blocks[p.name].shape != p.data.shape:
                raise ShapeError(f"{path}: parameter {p.name} missing or mis-shaped")
            p.data[...] = blocks[p.name]
        clf.gmvn = GmvnStats(blocks["gmvn.mean"], blocks["gmvn.std"])
        clf.holdout_accuracy = meta.get("holdout_accuracy")
        return clf


def split_holdout(labels: Sequence[int], fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified, seeded train/held-out index split (at least one held-out item per class)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, held = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_held = max(1, int(round(fraction * idx.size))) if idx.size > 1 else 0
        held.extend(idx[:n_held])
        train.extend(idx[n_held:])
    return np.sort(train), np.sort(held)


def train_domain_classifier(features: Sequence, domains: Sequence[str],
                            cfg: ClassifierConfig = ClassifierConfig()) -> DomainClassifier:
    """Train on raw log-Mel features labelled A / C1 / C2; held-out accuracy is stored on the result."""
    missing = [d for d in DOMAINS if d not in set(domains)]
    if missing:
        raise FeatshiftError(f"classifier training needs every domain; missing {missing}")
    labels = np.array([DOMAINS.index(d) for d in domains])
    train_idx, held_idx = split_holdout(labels, cfg.holdout_fraction, cfg.seed)
    init_seq, data_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    clf = DomainClassifier(cfg, np.random.default_rng(init_seq))
    clf.gmvn = gmvn_fit([features[i] for i in train_idx])
    normed = [np.asarray(gmvn_apply(features[i], clf.gmvn)) for i in train_idx]
    y = labels[train_idx]
    rng = np.random.default_rng(data_seq)
    params = clf.parameters()
    state = AdamState(lr=cfg.lr)
    for _ in range(cfg.steps):
        pick = rng.integers(0, len(normed), size=cfg.batch_size)
        batch = np.stack([crop_segment(normed[i], cfg.segment_length, rng) for i in pick])
        zero_grads(params)
        _, g = cross_entropy(clf.net.forward(batch), y[pick])
        clf.net.backward(g)
        adam_step(params, state)
    if held_idx.size:
        pred = clf.predict([features[i] for i in held_idx])
        clf.holdout_accuracy = float(np.mean(pred == labels[held_idx]))
    return clf


def share_pct(predictions: Sequence[int | str], target: str) -> float:
    """Percentage of predicted domains (indices or names) equal to ``target``."""
    if len(predictions) == 0:
        raise FeatshiftError("cannot score an empty set")
    names = [p if isinstance(p, str) else DOMAINS[int(p)] for p in predictions]
    return 100.0 * sum(n == target for n in names) / len(names)


def classified_as_pct(feature_set: Sequence, classifier, target: str = "C1") -> float:
    """Share of utterances the classifier assigns to ``target``, in percent."""
    if len(feature_set) == 0:
        raise FeatshiftError("cannot score an empty set")
    return share_pct(list(classifier.predict(feature_set)), target)


# --------------------------------------------------------------------------- F0 of feature sets


def _lowest_peak_lobe(row: np.ndarray, floor: float) -> slice:
    """Channels on the monotone flanks of the lowest local maximum at or above ``floor``."""
    n = row.size
    left = np.r_[-np.inf, row[:-1]]
    right = np.r_[row[1:], -np.inf]
    p = int(np.argmax((row >= left) & (row >= right) & (row >= floor)))
    lo = hi = p
    while lo > 0 and row[lo - 1] < row[lo]:
        lo -= 1
    while hi < n - 1 and row[hi + 1] < row[hi]:
        hi += 1
    return slice(lo, hi + 1)


def feature_f0_proxy(x) -> float:
    """Rough utterance F0 read off a raw log-Mel spectrogram.

    Only channels centred below 500 Hz are used. In each frame the lowest
    local peak within 10 dB of the band maximum is taken as the fundamental
    and the energy-weighted centroid of its lobe is mapped back to Hz. The
    result is the median over frames whose low-band energy exceeds the
    utterance's 40th percentile.

    Parameters
    ----------
    x : array_like, shape (T, 80)
        Un-normalized log-Mel features.

    Returns
    -------
    float
        Estimated F0 in Hz.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != channel_center_mels().size:
        raise ShapeError(f"expected (T, {channel_center_mels().size}) raw log-Mel features, got {x.shape}")
    low = channel_center_hz() < PROXY_MAX_HZ
    band = x[:, low]
    mels = channel_center_mels()[low]
    energy = logsumexp(band, axis=1)
    keep = energy > np.percentile(energy, PROXY_PERCENTILE)
    if not np.any(keep):
        raise NoVoicingError("no frame rises above the low-band energy threshold")
    floor_drop = PROXY_PEAK_DB * math.log(10.0) / 10.0
    centroids = []
    for row in band[keep]:
        lobe = _lowest_peak_lobe(row, row.max() - floor_drop)
        w = np.exp(row[lobe] - row[lobe].max())
        centroids.append(float(w @ mels[lobe]) / float(w.sum()))
    return float(np.median(mel_inverse(np.array(centroids))))


def utterance_f0(features=None, wave: Waveform | None = None, method: str = "auto") -> float:
    if method not in ("auto", "waveform", "proxy"):
        raise ValueError(f"unknown F0 method {method!r}")
    if method == "waveform" or (method == "auto" and wave is not None):
        if wave is None:
            raise FeatshiftError("waveform F0 requested but no audio given")
        return median_f0(estimate_f0_track(wave))
    if features is None:
        raise FeatshiftError("proxy F0 requested but no features given")
    return feature_f0_proxy(features)


def f0_values(features: Sequence, waves: Sequence[Waveform | None] | None, method: str) -> list[float]:
    waves = waves if waves is not None else [None] * len(features)
    return [utterance_f0(f, w, method) for f, w in zip(features, waves)]


def resolve_f0_method(*wave_sets) -> str:
    """``waveform`` when every utterance of every set has audio, otherwise ``proxy``."""
    for waves in wave_sets:
        if waves is None or any(w is None for w in waves):
            return "proxy"
    return "waveform"


def f0_distance_report(feature_set: Sequence, target_set: Sequence, *, waves=None, target_waves=None,
                       method: str = "auto") -> float:
    """W1 distance (Hz) between utterance-level F0 of two sets.

    With ``method="auto"`` both sets use the waveform tracker if all audio is
    present and the spectral proxy otherwise, so the two sides are always
    measured the same way.
    """
    if len(feature_set) == 0 or len(target_set) == 0:
        raise FeatshiftError("F0 distance needs two non-empty sets")
    if method == "auto":
        method = resolve_f0_method(waves, target_waves)
    return wasserstein1(f0_values(feature_set, waves, method), f0_values(target_set, target_waves, method))


# --------------------------------------------------------------------------- spectra and correlation


def mean_spectrum(feature_set: Sequence) -> np.ndarray:
    mats = [np.asarray(x, dtype=np.float64) for x in feature_set]
    if not mats:
        raise FeatshiftError("mean spectrum of an empty set")
    return np.concatenate(mats, axis=0).mean(axis=0)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length sequences of at least 2 values")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise FeatshiftError("correlation is undefined for a constant sequence")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass
class EvalReport:
    classified_as_target_pct: float
    f0_w1_to_target: float
    mean_spectrum: list[float]
    n_utts: int
    target_domain: str = "C1"
    f0_method: str = "proxy"
    target_mean_spectrum: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.classified_as_target_pct <= 100.0:
            raise ValueError("percentage out of range")
        if self.f0_w1_to_target < 0:
            raise ValueError("distance must be non-negative")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def write_mean_spectrum_csv(path, spectra: dict[str, np.ndarray]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["set", "channel", "value"])
    for name, vec in spectra.items():
        for i, v in enumerate(vec):
            w.writerow([name, i, f"{v:.6f}"])
    _io.write_text(path, buf.getvalue())


def write_f0_csv(path, ids: Sequence[str], values: Sequence[float]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["utterance_id", "f0_hz"])
    for uid, v in zip(ids, values):
        w.writerow([uid, f"{v:.6f}"])
    _io.write_text(path, buf.getvalue())
