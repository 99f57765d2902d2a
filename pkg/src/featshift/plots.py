"""Figures for evaluation reports (mean spectra, F0 histograms), rendered off-screen."""
from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import _io  # noqa: E402


def _save(fig, path) -> None:
    with _io.atomic_path(path) as tmp:
        fig.savefig(tmp, format="png", dpi=100)
    plt.close(fig)


def plot_mean_spectra(spectra: Mapping[str, np.ndarray], path, title: str = "Mean log-Mel spectrum") -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, vec in spectra.items():
        ax.plot(np.arange(len(vec)), vec, label=name)
    ax.set_xlabel("Mel channel")
    ax.set_ylabel("mean log energy")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_f0_distributions(samples: Mapping[str, Sequence[float]], path, bins: int = 20,
                          title: str = "Utterance F0") -> None:
    """Overlaid histograms of utterance-level F0, one per named set."""
    fig, ax = plt.subplots(figsize=(7, 4))
    pooled = np.concatenate([np.asarray(v, dtype=float) for v in samples.values()])
    edges = np.linspace(pooled.min() - 5.0, pooled.max() + 5.0, bins + 1)
    for name, vals in samples.items():
        ax.hist(vals, bins=edges, alpha=0.5, label=name)
    ax.set_xlabel("F0 (Hz)")
    ax.set_ylabel("utterances")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
