from __future__ import annotations

import time
from dataclasses import replace

import numpy as np
import pytest

from featshift import corpus_io, melfeat
from featshift.errors import NoVoicingError
from featshift.pitch import estimate_f0_track, median_f0

CORPUS_SEED = 7
N_PER_DOMAIN = 20

# criterion number -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sine(freq, seconds=1.0, sr=16000, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Seeded synthetic corpus with features and waveform median F0 filled in."""
    root = tmp_path_factory.mktemp("corpus")
    records = corpus_io.synth_corpus(CORPUS_SEED, N_PER_DOMAIN, root)
    feats, waves, out = [], [], []
    for r in records:
        w = corpus_io.read_wav(r.wav_path)
        x = melfeat.extract_logmel(w.samples)
        try:
            f0 = median_f0(estimate_f0_track(w.samples))
        except NoVoicingError:
            f0 = None
        feats.append(np.asarray(x))
        waves.append(w)
        out.append(replace(r, n_frames=x.n_frames, median_f0=f0))
    return {"root": root, "records": out, "features": feats, "waves": waves,
            "truth": corpus_io.read_truth(root)}


def domain_subset(corpus, domain, key="features"):
    return [v for v, r in zip(corpus[key], corpus["records"]) if r.domain == domain]
