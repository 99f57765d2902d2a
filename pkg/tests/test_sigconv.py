import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from featshift import sigconv
from featshift.errors import FeatshiftError
from featshift.melfeat import channel_center_mels, mel_scale
from featshift.sigconv import ChannelStats, compute_channel_stats, coral_convert, psd_sqrt, stats_convert


def _stats(mean, std):
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    return ChannelStats(mean, std, np.diag(std**2), 100)


def _two_pass_cov(x):
    n, c = x.shape
    mean = [sum(x[:, j]) / n for j in range(c)]
    cov = np.empty((c, c))
    for a in range(c):
        for b in range(c):
            cov[a, b] = sum((x[i, a] - mean[a]) * (x[i, b] - mean[b]) for i in range(n)) / n
    return np.array(mean), cov


def test_two_frame_stats():
    x = np.zeros((2, 80))
    x[:, 0] = [1, 3]
    s = compute_channel_stats([x])
    assert s.mean[0] == 2 and s.std[0] == 1 and s.cov[0, 0] == 1


def test_too_few_frames():
    with pytest.raises(FeatshiftError):
        compute_channel_stats([np.zeros((1, 80))])
    with pytest.raises(FeatshiftError):
        compute_channel_stats([])


def test_duplicated_set_same_stats(rng):
    sets = [rng.standard_normal((10, 80)), rng.standard_normal((7, 80))]
    a, b = compute_channel_stats(sets), compute_channel_stats(sets + sets)
    assert np.allclose(a.mean, b.mean, atol=1e-12) and np.allclose(a.cov, b.cov, atol=1e-12)


def test_cov_matches_two_pass_oracle(rng):
    x = rng.standard_normal((100, 6)) @ rng.standard_normal((6, 6)) + 3.0
    s = compute_channel_stats([x])
    mean, cov = _two_pass_cov(x)
    assert np.max(np.abs(s.cov - cov)) < 1e-9
    assert np.max(np.abs(s.mean - mean)) < 1e-9
    assert np.max(np.abs(s.cov - s.cov.T)) < 1e-9
    assert np.allclose(np.diag(s.cov), s.std**2, rtol=1e-6)


def test_stats_json_roundtrip(tmp_path, rng):
    s = compute_channel_stats([rng.standard_normal((20, 80))])
    d = json.loads(s.to_json())
    assert set(d) == {"mean", "std", "cov", "n_frames"} and np.shape(d["cov"]) == (80, 80)
    s.save(tmp_path / "s.json")
    t = ChannelStats.load(tmp_path / "s.json")
    assert np.array_equal(t.cov, s.cov) and t.n_frames == 20


# --------------------------------------------------------------------- stats


def test_stats_identity(rng):
    x = rng.standard_normal((9, 80))
    s = compute_channel_stats([rng.standard_normal((30, 80))])
    assert np.max(np.abs(np.asarray(stats_convert(x, s, s)) - x)) < 1e-9


def test_stats_arithmetic():
    out = stats_convert(np.ones((1, 80)), _stats(np.zeros(80), np.ones(80)), _stats(np.full(80, 5.0), np.full(80, 2.0)))
    assert np.allclose(np.asarray(out), 7.0)


def test_stats_floor_no_error():
    out = np.asarray(stats_convert(np.ones((2, 80)), _stats(np.zeros(80), np.zeros(80)), _stats(np.zeros(80), np.ones(80))))
    assert np.all(np.isfinite(out))


def test_stats_set_matches_target(rng):
    src_set = [rng.normal(2, 3, (n, 80)) for n in (40, 25)]
    tgt = compute_channel_stats([rng.normal(-1, 0.5, (50, 80))])
    src = compute_channel_stats(src_set)
    conv = compute_channel_stats([np.asarray(stats_convert(x, src, tgt)) for x in src_set])
    assert np.max(np.abs(conv.mean - tgt.mean)) < 1e-6
    assert np.max(np.abs(conv.std - tgt.std)) < 1e-6


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (5, 80), elements=st.floats(-30, 30)), st.integers(0, 2**31 - 1))
def test_stats_exactly_invertible(x, seed):
    r = np.random.default_rng(seed)
    s = _stats(r.normal(0, 5, 80), r.uniform(0.2, 5, 80))
    t = _stats(r.normal(0, 5, 80), r.uniform(0.2, 5, 80))
    back = np.asarray(stats_convert(stats_convert(x, s, t), t, s))
    assert np.max(np.abs(back - x)) < 1e-9


# --------------------------------------------------------------------- psd_sqrt / coral


def test_psd_sqrt_identity_and_diag():
    root, inv = psd_sqrt(np.eye(5), 1e-12)
    assert np.allclose(root, np.eye(5), atol=1e-9) and np.allclose(inv, np.eye(5), atol=1e-9)
    root, _ = psd_sqrt(np.diag([4.0, 9.0]), 1e-9)
    assert np.max(np.abs(root - np.diag([2.0, 3.0]))) <= 1e-6


def test_psd_sqrt_multiply_back(rng):
    a = rng.standard_normal((12, 12))
    m = a @ a.T
    root, inv = psd_sqrt(m, 1e-5)
    assert np.max(np.abs(root @ root - (m + 1e-5 * np.eye(12)))) < 1e-6
    assert np.max(np.abs(root @ inv - np.eye(12))) < 1e-6
    assert np.allclose(root, root.T)
    assert np.min(np.linalg.eigvalsh(root)) >= 0


def test_psd_sqrt_rejects_asymmetric():
    with pytest.raises(FeatshiftError):
        psd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]), 1e-5)


def test_coral_identity(rng):
    x = rng.standard_normal((8, 80))
    s = compute_channel_stats([rng.standard_normal((200, 80))])
    assert np.max(np.abs(np.asarray(coral_convert(x, s, s)) - x)) < 1e-4
    ident = ChannelStats(np.zeros(80), np.ones(80), np.eye(80), 10)
    assert np.max(np.abs(np.asarray(coral_convert(x, ident, ident)) - x)) < 1e-6


def test_coral_diagonal_equals_stats(rng):
    # eps shifts each variance by 1e-5, so agreement is ~1e-5 per standardized unit when std >= 1
    s = _stats(rng.normal(0, 1, 80), rng.uniform(1, 3, 80))
    t = _stats(rng.normal(0, 1, 80), rng.uniform(1, 3, 80))
    x = s.mean + s.std * rng.standard_normal((10, 80))
    assert np.max(np.abs(np.asarray(coral_convert(x, s, t)) - np.asarray(stats_convert(x, s, t)))) < 1e-4


def test_coral_set_matches_target_cov(rng):
    mix_s, mix_t = rng.standard_normal((80, 80)), rng.standard_normal((80, 80))
    src_set = [rng.standard_normal((300, 80)) @ mix_s for _ in range(3)]
    tgt = compute_channel_stats([rng.standard_normal((900, 80)) @ mix_t + 4.0])
    src = compute_channel_stats(src_set)
    conv = compute_channel_stats([np.asarray(coral_convert(x, src, tgt)) for x in src_set])
    assert np.linalg.norm(conv.cov - tgt.cov) / np.linalg.norm(tgt.cov) < 1e-3
    assert np.max(np.abs(conv.mean - tgt.mean)) < 1e-6


# --------------------------------------------------------------------- f0norm


def test_warp_factor_oracle():
    assert sigconv.warp_factor(270) == 1.0
    k = sigconv.warp_factor(135)
    assert k == pytest.approx(mel_scale(270.0) / mel_scale(135.0), rel=1e-15) and k > 1
    with pytest.raises(ValueError):
        sigconv.warp_factor(0)


def test_f0norm_identity(rng):
    x = rng.standard_normal((6, 80))
    assert np.max(np.abs(np.asarray(sigconv.f0norm_convert(x, 270.0)) - x)) <= 1e-9


def test_f0norm_moves_peak_up():
    x = np.zeros((1, 80))
    x[0, 20] = 10.0
    y = np.asarray(sigconv.f0norm_convert(x, 135.0))
    assert int(np.argmax(y[0])) > 20


def test_warp_matches_pointwise_oracle(rng):
    x = rng.standard_normal((3, 80))
    k = 1.3
    c = channel_center_mels()
    y = sigconv.warp_channels(x, k)
    for j in range(80):
        m = min(max(c[j] / k, c[0]), c[-1])
        i = min(int(np.searchsorted(c, m, side="right")) - 1, 78)
        f = (m - c[i]) / (c[i + 1] - c[i])
        assert np.allclose(y[:, j], x[:, i] * (1 - f) + x[:, i + 1] * f, atol=1e-9)


def test_warp_forward_backward_smooth():
    c = channel_center_mels()
    x = np.stack([np.sin(c / 300.0) * 3, np.cos(c / 500.0)])
    k = sigconv.warp_factor(135.0)
    back = sigconv.warp_channels(sigconv.warp_channels(x, k), 1 / k)
    interior = c < c[-1] / k  # content beyond that was clamped away by the first warp
    assert np.max(np.abs(back[:, interior] - x[:, interior])) <= 0.05


@settings(max_examples=40, deadline=None)
@given(st.floats(0.25, 4.0), hnp.arrays(np.float64, (4, 80), elements=st.floats(-30, 30)))
def test_warp_finite_and_bounded(k, x):
    y = sigconv.warp_channels(x, k)
    assert y.shape == x.shape and np.all(np.isfinite(y))
    assert np.all(y <= x.max(axis=1, keepdims=True) + 1e-9) and np.all(y >= x.min(axis=1, keepdims=True) - 1e-9)
