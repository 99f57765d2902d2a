import csv
import io

import numpy as np
import pytest

from featshift import dae
from featshift.corpus_io import UtteranceRecord
from featshift.dae import Batch, DaeConfig, DaeModel, DomainEmbedding
from featshift.errors import ConfigMismatchError, FeatshiftError, MagicError, ShapeError, SizeError
from featshift.melfeat import GmvnStats, Spectrogram
from featshift.nncore import AdamState, finite_diff_check


def tiny(**kw):
    base = dict(channels=4, segment_length=16, batch_size=2, steps=5, dtype="float64")
    base.update(kw)
    return DaeConfig(**base)


def batch(cfg, rng, t=None):
    t = t or cfg.segment_length
    noise = rng.standard_normal((cfg.batch_size, t, cfg.content_dim)) if cfg.kl_weight > 0 else None
    return Batch(x=rng.standard_normal((cfg.batch_size, t, 80)), domain=np.arange(cfg.batch_size) % 3,
                 attr=np.array([[0.0, 0.0], [1.0, 1.0]] * cfg.batch_size)[: cfg.batch_size],
                 f0_bin=np.arange(cfg.batch_size) * 4 % 10, noise=noise)


def records(n):
    doms = ["A", "C1", "C2"]
    return [UtteranceRecord(f"u{i}", doms[i % 3], median_f0=130.0 + 60 * (i % 3)) for i in range(n)]


@pytest.fixture(scope="module")
def trainset():
    # low-rank: three spectral shapes with smoothly varying gains, plus a little noise
    r = np.random.default_rng(11)
    shapes = r.standard_normal((3, 80))
    feats = []
    for _ in range(6):
        t = np.arange(int(r.integers(20, 40)))[:, None]
        gains = np.sin(t * r.uniform(0.1, 0.4, 3) + r.uniform(0, 6, 3))
        feats.append(-5 + 2 * gains @ shapes + 0.05 * r.standard_normal((t.size, 80)))
    return feats, dae.TrainingSet.from_features(feats, records(6), dtype="float64")


# --------------------------------------------------------------------- config and labels


def test_attribute_vectors():
    assert dae.attribute_vector("A", "read") == (0.0, 0.0)
    assert dae.attribute_vector("C1", "read") == (1.0, 0.0)
    assert dae.attribute_vector("C2", "conversational") == (1.0, 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        DaeConfig(kernel=4)
    with pytest.raises(ValueError):
        DaeConfig(lambda_dat=-1)
    with pytest.raises(ValueError):
        DaeConfig(f0_head_location="decoder")
    with pytest.raises(ValueError):
        DaeConfig.from_dict({"channels": 8, "widgets": 2})
    big = DaeConfig.paper_scale()
    assert (big.channels, big.batch_size, big.steps) == (512, 128, 100_000)
    assert DaeConfig(channels=8).content_dim == 8


# --------------------------------------------------------------------- shapes and invariances


def test_shape_laws(rng):
    cfg = tiny(content_dim=3, speaker_dim=5)
    m = DaeModel(cfg)
    x = rng.standard_normal((23, 80))
    zc, zs = m.encode_content(x), m.encode_speaker(x)
    assert zc.shape == (23, 3) and zs.shape == (5,)
    y = m.decode(zc, zs)
    assert isinstance(y, Spectrogram) and y.shape == (23, 80) and y.normalized
    assert m.decode(zc[None], zs[None]).shape == (1, 23, 80)
    with pytest.raises(ShapeError):
        m.decode(zc, np.zeros(4))
    with pytest.raises(ShapeError):
        m.encode_content(np.zeros((5, 40)))


def test_encoders_reject_raw_features(rng):
    m = DaeModel(tiny())
    with pytest.raises(FeatshiftError):
        m.encode_content(Spectrogram(rng.standard_normal((9, 80)), normalized=False))


def test_content_embedding_is_instance_normalized(rng):
    zc = DaeModel(tiny()).encode_content(rng.standard_normal((30, 80)))
    assert np.allclose(zc.mean(axis=0), 0, atol=1e-10)


def test_speaker_embedding_ignores_time_position(rng):
    # zero rims wider than the receptive field: shifting the body only moves constant frames
    m = DaeModel(tiny())
    body = rng.standard_normal((10, 80))
    a = np.concatenate([np.zeros((8, 80)), body, np.zeros((20, 80))])
    b = np.concatenate([np.zeros((20, 80)), body, np.zeros((8, 80))])
    assert np.max(np.abs(m.encode_speaker(a) - m.encode_speaker(b))) < 1e-12


def test_content_differs_between_utterances(rng):
    m = DaeModel(tiny())
    assert not np.allclose(m.encode_content(rng.standard_normal((12, 80))), m.encode_content(rng.standard_normal((12, 80))))


# --------------------------------------------------------------------- losses


def test_vanilla_report_has_only_reconstruction(rng):
    cfg = tiny(lambda_dat=0, lambda_f0=0, lambda_msp=0)
    rep, _ = DaeModel(cfg)._losses(batch(cfg, rng), backward=False)
    assert set(rep.terms()) == {"total", "rec"} and rep.total == rep.rec


def test_full_report_terms(rng):
    cfg = tiny(kl_weight=0.1)
    rep, _ = DaeModel(cfg)._losses(batch(cfg, rng), backward=False)
    assert set(rep.terms()) == {"total", "rec", "dat", "f0", "msp", "kl"}
    want = rep.rec + rep.dat + rep.f0 + rep.msp + 0.1 * rep.kl
    assert rep.total == pytest.approx(want, rel=1e-12)


def test_missing_f0_labels(rng):
    cfg = tiny()
    b = batch(cfg, rng)
    b.f0_bin = None
    with pytest.raises(FeatshiftError):
        DaeModel(cfg).loss(b)


def test_variational_needs_noise(rng):
    cfg = tiny(kl_weight=0.5)
    b = batch(cfg, rng)
    b.noise = None
    with pytest.raises(FeatshiftError):
        DaeModel(cfg).loss(b)


@pytest.mark.parametrize("loc", dae.F0_HEAD_LOCATIONS)
def test_small_gradient_check(rng, loc):
    cfg = tiny(f0_head_location=loc, kl_weight=0.01)
    assert finite_diff_check(DaeModel(cfg), batch(cfg, rng, t=8), max_entries=6) < 1e-4


def test_adversary_step_touches_only_heads(rng):
    cfg = tiny()
    m = DaeModel(cfg)
    b = batch(cfg, rng)
    m.loss(b)
    heads = {p.name for p in m.critic.parameters() + m.f0_head.parameters()}
    before = {n: p.data.copy() for n, p in m.named_parameters().items()}
    dae.adversary_step(b, m, AdamState(lr=0.01))
    for n, p in m.named_parameters().items():
        assert np.array_equal(p.data, before[n]) != (n in heads), n


# --------------------------------------------------------------------- data and training


def test_crop_segment_pads_short(rng):
    x = rng.standard_normal((5, 80))
    assert dae.crop_segment(x, 16, rng).shape == (16, 80)
    one = rng.standard_normal((1, 80))
    assert np.array_equal(dae.crop_segment(one, 4, rng), np.repeat(one, 4, axis=0))
    long = np.arange(40.0)[:, None] * np.ones(80)
    seg = dae.crop_segment(long, 10, rng)
    assert np.all(np.diff(seg[:, 0]) == 1)


def test_training_set_labels(trainset):
    _, ts = trainset
    assert list(ts.domain) == [0, 1, 2, 0, 1, 2]
    assert list(ts.f0_bin) == [1, 3, 6, 1, 3, 6]  # 130, 190, 250 Hz
    assert ts.attr.tolist()[2] == [1.0, 1.0]


def test_missing_median_f0_blocks_f0_head(trainset):
    feats, _ = trainset
    recs = records(6)
    recs[0] = UtteranceRecord("u0", "A")
    ts = dae.TrainingSet.from_features(feats, recs)
    assert ts.f0_bin is None
    with pytest.raises(FeatshiftError):
        dae.sample_batch(ts, tiny(), np.random.default_rng(0))
    dae.sample_batch(ts, tiny(lambda_f0=0), np.random.default_rng(0))


def test_training_lowers_loss_and_is_deterministic(trainset):
    _, ts = trainset
    cfg = tiny(channels=8, steps=200, lr=0.005, batch_size=4, lambda_dat=0, lambda_f0=0, lambda_msp=0)
    m1, h1 = dae.train(ts, cfg)
    m2, h2 = dae.train(ts, cfg)
    first, last = np.mean([h.rec for h in h1[:10]]), np.mean([h.rec for h in h1[-10:]])
    assert last < 0.7 * first
    assert [h.total for h in h1] == [h.total for h in h2]
    for p, q in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(p.data, q.data)


def test_log_format(trainset):
    _, ts = trainset
    _, hist = dae.train(ts, tiny(steps=3, lambda_f0=0))
    rows = list(csv.reader(io.StringIO(dae.format_log(hist))))
    assert tuple(rows[0]) == dae.LOG_COLUMNS
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert rows[1][4] == "" and all(np.isfinite(float(v)) for v in rows[1][1:4])


# --------------------------------------------------------------------- conversion


@pytest.fixture(scope="module")
def trained(trainset):
    _, ts = trainset
    model, _ = dae.train(ts, tiny(steps=4))
    return model


def test_average_embedding(trained, trainset):
    feats, ts = trainset
    one = dae.average_speaker_embedding(feats[:1], trained)
    assert np.allclose(one.vector, trained.encode_speaker(ts.features[0]), atol=1e-12)
    fwd = dae.average_speaker_embedding(feats, trained)
    rev = dae.average_speaker_embedding(feats[::-1], trained)
    assert np.array_equal(fwd.vector, rev.vector) and fwd.n_utts == 6
    pair = dae.average_speaker_embedding(feats[:2], trained).vector
    mid = 0.5 * (trained.encode_speaker(ts.features[0]) + trained.encode_speaker(ts.features[1]))
    assert np.allclose(pair, mid, atol=1e-12)
    with pytest.raises(FeatshiftError):
        dae.average_speaker_embedding([], trained)
    with pytest.raises(FeatshiftError):
        DomainEmbedding(np.zeros(4), "C1", 0)


def test_convert_shape_and_determinism(trained, trainset):
    feats, _ = trainset
    emb = dae.average_speaker_embedding(feats[1::3], trained, "C1")
    for x in feats:
        y = dae.convert_utterance(x, trained, emb)
        assert y.shape == x.shape and not y.normalized
        assert np.array_equal(np.asarray(y), np.asarray(dae.convert_utterance(x, trained, emb)))
    with pytest.raises(ShapeError):
        dae.convert_utterance(np.zeros((4, 81)), trained, emb)


def test_convert_needs_gmvn(rng):
    m = DaeModel(tiny())
    with pytest.raises(FeatshiftError):
        dae.convert_utterance(rng.standard_normal((10, 80)), m, DomainEmbedding(np.zeros(4), "C1", 1))
    g = GmvnStats(np.zeros(80), np.ones(80))
    assert dae.convert_utterance(rng.standard_normal((10, 80)), m, DomainEmbedding(np.zeros(4), "C1", 1), g).shape == (10, 80)


# --------------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(tmp_path, trained):
    path = tmp_path / "m.dae"
    dae.save_model(trained, path)
    back = dae.load_model(path, expected=trained.cfg)
    for name, p in trained.named_parameters().items():
        assert np.array_equal(back.named_parameters()[name].data, p.data)
    assert np.array_equal(back.gmvn.mean, trained.gmvn.mean)
    dae.save_model(back, tmp_path / "again.dae")
    assert (tmp_path / "again.dae").read_bytes() == path.read_bytes()


def test_checkpoint_errors(tmp_path, trained):
    path = tmp_path / "m.dae"
    dae.save_model(trained, path)
    with pytest.raises(ConfigMismatchError):
        dae.load_model(path, expected=tiny(channels=6))
    raw = path.read_bytes()
    (tmp_path / "cut.dae").write_bytes(raw[:-9])
    with pytest.raises(SizeError):
        dae.load_model(tmp_path / "cut.dae")
    (tmp_path / "bad.dae").write_bytes(b"DCLF" + raw[4:])
    with pytest.raises(MagicError):
        dae.load_model(tmp_path / "bad.dae")
