import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from conftest import sine
from featshift import pitch
from featshift.errors import FeatshiftError, NoVoicingError, TooShortError
from featshift.pitch import F0Track, f0_bin, median_f0, wasserstein1


@pytest.mark.parametrize("hz", [75.5, 100, 120, 180, 220, 270, 350, 480])
def test_sine_median(hz):
    track = pitch.estimate_f0_track(sine(hz))
    assert abs(median_f0(track) - hz) <= 3.0
    assert np.all((track.voiced >= 75) & (track.voiced <= 500))


def test_track_hop_and_length():
    track = pitch.estimate_f0_track(sine(200, 1.0))
    assert track.hop == 0.01
    assert track.values.size == 1 + (16000 - 640) // 160


def test_noise_mostly_unvoiced():
    noise = np.random.default_rng(5).standard_normal(16000) * 0.3
    track = pitch.estimate_f0_track(noise)
    assert np.mean(track.values == 0) >= 0.8


def test_silence_unvoiced():
    assert np.all(pitch.estimate_f0_track(np.zeros(8000)).values == 0)


def test_too_short():
    with pytest.raises(TooShortError):
        pitch.estimate_f0_track(np.zeros(639))


def test_harmonic_tone_no_octave_error():
    t = np.arange(16000) / 16000
    x = sum(h**-1.0 * np.sin(2 * np.pi * 140 * h * t) for h in range(1, 9))
    assert abs(median_f0(pitch.estimate_f0_track(x)) - 140) < 3


def test_median_examples():
    assert median_f0(F0Track(np.array([100.0, 200, 300]))) == 200
    assert median_f0(F0Track(np.array([100.0, 0, 300, 200, 0]))) == 200
    assert median_f0(np.array([100.0, 300, 0, 200, 400])) == 200  # lower middle of 4
    with pytest.raises(NoVoicingError):
        median_f0(F0Track(np.zeros(5)))


def test_f0_bin_examples():
    assert f0_bin(220) == 4
    assert f0_bin(99) == 0
    assert f0_bin(350) == 9
    assert f0_bin(100) == 0 and f0_bin(124.999) == 0 and f0_bin(125) == 1
    with pytest.raises(ValueError):
        f0_bin(0)
    with pytest.raises(ValueError):
        f0_bin(-3)


@given(st.floats(1e-3, 1e4), st.floats(0, 1e3))
def test_f0_bin_monotone(f, df):
    assert f0_bin(f) <= f0_bin(f + df)
    assert 0 <= f0_bin(f) <= 9


# --------------------------------------------------------------------- W1


def test_w1_examples():
    assert wasserstein1([0, 0], [1, 3]) == 2.0
    assert wasserstein1([0], [0, 10]) == 5.0
    assert wasserstein1([4, 1, 2], [2, 4, 1]) == 0.0
    with pytest.raises(FeatshiftError):
        wasserstein1([], [1.0])


_samples = st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=25)


@settings(max_examples=200, deadline=None)
@given(_samples, _samples)
def test_w1_matches_cdf_oracle(p, q):
    # scipy integrates |F_p - F_q| over x, an independent route to the same quantity
    assert abs(wasserstein1(p, q) - wasserstein_distance(p, q)) <= 1e-9 * max(1.0, max(map(abs, p + q)))


@settings(max_examples=100, deadline=None)
@given(_samples, _samples)
def test_w1_symmetric_nonnegative(p, q):
    assert wasserstein1(p, q) == wasserstein1(q, p)
    assert wasserstein1(p, q) >= 0


@settings(max_examples=100, deadline=None)
@given(_samples, st.floats(-500, 500))
def test_w1_shift(p, c):
    assert abs(wasserstein1(p, [v + c for v in p]) - abs(c)) < 1e-9 * max(1.0, abs(c), max(map(abs, p)))


def test_write_f0_csv(tmp_path):
    pitch.write_f0_csv(tmp_path / "f.csv", [("u1", 123.5), ("u2", 250.0)])
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["utterance_id", "median_f0_hz"]
    assert rows[1] == ["u1", "123.500000"]
