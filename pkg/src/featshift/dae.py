"""Disentangling auto-encoder for adult-to-child feature conversion.

A content encoder (conv blocks ending in instance norm) and a speaker encoder
(conv blocks, time average, linear) feed an AdaIN decoder. Optional auxiliary
objectives shape the two embeddings:

* a domain critic on the content embedding, trained through gradient reversal;
* an F0-class head, either adversarial on the content embedding or predictive
  on the speaker embedding;
* a linear projection of the speaker embedding onto a two-element attribute
  vector (adult/child, read/conversational) with an orthogonality penalty;
* a variational head on the content embedding with a KL penalty.

Conversion decodes the source content with the averaged target-domain speaker
embedding and maps the result back through the GMVN statistics.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _io, checkpoint
from .corpus_io import DOMAINS, UtteranceRecord, load_feature_set
from .errors import ConfigMismatchError, FeatshiftError, ShapeError
from .melfeat import N_MELS, GmvnStats, Spectrogram, gmvn_apply, gmvn_fit, gmvn_invert
from .nncore import (
    AdaIN,
    AdamState,
    Conv1d,
    GradReverse,
    InstanceNorm,
    LeakyReLU,
    Linear,
    NonFiniteError,
    Param,
    Sequential,
    TimeMeanPool,
    adam_step,
    cross_entropy,
    kl_std_normal,
    l1_loss,
    mse,
    pooled_mlp,
    zero_grads,
)
from .pitch import N_F0_BINS, f0_bin

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DAEC"
F0_HEAD_LOCATIONS = ("content_adversarial", "speaker_predictive")
LOG_COLUMNS = ("step", "loss_total", "loss_rec", "loss_dat", "loss_f0", "loss_msp", "loss_kl")


@dataclass
class DaeConfig:
    channels: int = 64
    content_dim: int | None = None
    speaker_dim: int | None = None
    n_enc_blocks: int = 3
    n_dec_blocks: int = 3
    kernel: int = 5
    segment_length: int = 128
    batch_size: int = 16
    steps: int = 2000
    lr: float = 0.0005
    lambda_dat: float = 1.0
    lambda_f0: float = 1.0
    lambda_msp: float = 1.0
    kl_weight: float = 0.0
    f0_head_location: str = "content_adversarial"
    grl_strength: float = 1.0
    adversary_steps: int = 3
    adversary_lr: float = 0.001
    n_mels: int = N_MELS
    dtype: str = "float32"
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.content_dim is None:
            self.content_dim = self.channels
        if self.speaker_dim is None:
            self.speaker_dim = self.channels
        for name in ("channels", "content_dim", "speaker_dim", "n_enc_blocks", "n_dec_blocks",
                     "kernel", "segment_length", "batch_size", "n_mels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        if self.adversary_steps < 0:
            raise ValueError("adversary_steps must be >= 0")
        for name in ("lambda_dat", "lambda_f0", "lambda_msp", "kl_weight", "grl_strength", "lr", "adversary_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.f0_head_location not in F0_HEAD_LOCATIONS:
            raise ValueError(f"f0_head_location must be one of {F0_HEAD_LOCATIONS}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def paper_scale(cls, **overrides) -> "DaeConfig":
        base = dict(channels=512, batch_size=128, steps=100_000)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DaeConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown DAE config keys: {sorted(unknown)}")
        return cls(**d)


def attribute_vector(domain: str, style: str) -> tuple[float, float]:
    """(adult=0 / child=1, read=0 / conversational=1)."""
    return (0.0 if domain == "A" else 1.0, 1.0 if style == "conversational" else 0.0)


@dataclass
class Batch:
    x: np.ndarray  # (B, T, n_mels), GMVN-normalized
    domain: np.ndarray  # (B,) indices into DOMAINS
    attr: np.ndarray  # (B, 2)
    f0_bin: np.ndarray | None = None  # (B,)
    noise: np.ndarray | None = None  # (B, T, content_dim), used when kl_weight > 0


@dataclass
class LossReport:
    total: float
    rec: float
    dat: float | None = None
    f0: float | None = None
    msp: float | None = None
    kl: float | None = None

    def terms(self) -> dict[str, float]:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}

    def row(self, step: int) -> list:
        return [step, self.total, self.rec, self.dat, self.f0, self.msp, self.kl]


@dataclass(frozen=True)
class DomainEmbedding:
    vector: np.ndarray
    source: str
    n_utts: int

    def __post_init__(self):
        if self.n_utts < 1:
            raise FeatshiftError("a domain embedding needs at least one utterance")


def _is_unnormalized(x) -> bool:
    return isinstance(x, Spectrogram) and not x.normalized


class DaeModel:
    def __init__(self, cfg: DaeConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        dt = np.dtype(cfg.dtype)
        self.dtype = dt
        ch, dc, ds, k = cfg.channels, cfg.content_dim, cfg.speaker_dim, cfg.kernel

        layers = []
        for i in range(cfg.n_enc_blocks):
            cin = cfg.n_mels if i == 0 else ch
            cout = dc if i == cfg.n_enc_blocks - 1 else ch
            layers += [Conv1d(f"content.conv{i}", cin, cout, k, rng, dt), LeakyReLU(), InstanceNorm()]
        self.content = Sequential(*layers)
        self.variational = cfg.kl_weight > 0
        if self.variational:
            self.head_mu = Conv1d("content.mu", dc, dc, 1, rng, dt)
            self.head_logvar = Conv1d("content.logvar", dc, dc, 1, rng, dt)

        layers = []
        for i in range(cfg.n_enc_blocks):
            layers += [Conv1d(f"speaker.conv{i}", cfg.n_mels if i == 0 else ch, ch, k, rng, dt), LeakyReLU()]
        layers += [TimeMeanPool(), Linear("speaker.out", ch, ds, rng, dt)]
        self.speaker = Sequential(*layers)

        self.dec_convs, self.dec_acts, self.dec_norms, self.dec_affine = [], [], [], []
        for i in range(cfg.n_dec_blocks):
            self.dec_convs.append(Conv1d(f"decoder.conv{i}", dc if i == 0 else ch, ch, k, rng, dt))
            self.dec_acts.append(LeakyReLU())
            self.dec_norms.append(AdaIN())
            aff = Linear(f"decoder.affine{i}", ds, 2 * ch, rng, dt)
            aff.w.data *= 0.1
            aff.b.data[:ch] = 1.0
            self.dec_affine.append(aff)
        self.dec_out = Conv1d("decoder.out", ch, cfg.n_mels, 1, rng, dt)

        self.critic_grl = GradReverse(cfg.grl_strength)
        self.critic = pooled_mlp("critic", dc, ch, len(DOMAINS), rng, dt)
        if cfg.f0_head_location == "content_adversarial":
            self.f0_grl = GradReverse(cfg.grl_strength)
            self.f0_head = pooled_mlp("f0_clf", dc, ch, N_F0_BINS, rng, dt)
        else:
            self.f0_grl = None
            self.f0_head = pooled_mlp("f0_clf", ds, ch, N_F0_BINS, rng, dt, frame_first=False)
        self.msp = Param("msp.M", (rng.standard_normal((2, ds)) / math.sqrt(ds)).astype(dt))
        self.gmvn: GmvnStats | None = None

    # ------------------------------------------------------------------ parameters

    def content_parameters(self) -> list[Param]:
        ps = self.content.parameters()
        if self.variational:
            ps += self.head_mu.parameters() + self.head_logvar.parameters()
        return ps

    def parameters(self) -> list[Param]:
        ps = self.content_parameters() + self.speaker.parameters()
        for conv, aff in zip(self.dec_convs, self.dec_affine):
            ps += conv.parameters() + aff.parameters()
        ps += self.dec_out.parameters() + self.critic.parameters() + self.f0_head.parameters()
        ps.append(self.msp)
        return ps

    def named_parameters(self) -> dict[str, Param]:
        return {p.name: p for p in self.parameters()}

    # ------------------------------------------------------------------ inference (cache-free)

    def _as_batch(self, x):
        if _is_unnormalized(x):
            raise FeatshiftError("the encoders expect GMVN-normalized features")
        a = np.asarray(x, dtype=self.dtype)
        if a.shape[-1] != self.cfg.n_mels:
            raise ShapeError(f"expected {self.cfg.n_mels} channels, got shape {a.shape}")
        return (a[None], True) if a.ndim == 2 else (a, False)

    def encode_content(self, x) -> np.ndarray:
        a, single = self._as_batch(x)
        zc = self.content.infer(a)
        if self.variational:
            zc = self.head_mu.infer(zc)
        return zc[0] if single else zc

    def encode_speaker(self, x) -> np.ndarray:
        a, single = self._as_batch(x)
        zs = self.speaker.infer(a)
        return zs[0] if single else zs

    def decode(self, zc, zs) -> Spectrogram | np.ndarray:
        zc = np.asarray(zc, dtype=self.dtype)
        zs = np.asarray(zs, dtype=self.dtype)
        single = zc.ndim == 2
        if single:
            zc, zs = zc[None], zs[None]
        if zc.shape[-1] != self.cfg.content_dim or zs.shape[-1] != self.cfg.speaker_dim:
            raise ShapeError(f"decode: zc {zc.shape} / zs {zs.shape} do not match the model dimensions")
        if zs.shape[0] != zc.shape[0]:
            raise ShapeError("decode: zc and zs batch sizes differ")
        ch = self.cfg.channels
        h = zc
        for conv, act, norm, aff in zip(self.dec_convs, self.dec_acts, self.dec_norms, self.dec_affine):
            gb = aff.infer(zs)
            h = norm.infer(act.infer(conv.infer(h)), gb[:, :ch], gb[:, ch:])
        out = self.dec_out.infer(h)
        return Spectrogram(out[0].astype(np.float64), normalized=True) if single else out

    # ------------------------------------------------------------------ training pass

    def _decoder_forward(self, zc, zs):
        ch = self.cfg.channels
        h = zc
        for conv, act, norm, aff in zip(self.dec_convs, self.dec_acts, self.dec_norms, self.dec_affine):
            gb = aff.forward(zs)
            h = norm.forward(act.forward(conv.forward(h)), gb[:, :ch], gb[:, ch:])
        return self.dec_out.forward(h)

    def _decoder_backward(self, g):
        g = self.dec_out.backward(g)
        dzs = 0.0
        for conv, act, norm, aff in reversed(list(zip(self.dec_convs, self.dec_acts, self.dec_norms, self.dec_affine))):
            g, dgamma, dbeta = norm.backward(g)
            dzs = dzs + aff.backward(np.concatenate([dgamma, dbeta], axis=1))
            g = conv.backward(act.backward(g))
        return g, dzs

    def _losses(self, batch: Batch, backward: bool) -> tuple[LossReport, dict[str, float]]:
        cfg = self.cfg
        x = np.asarray(batch.x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[-1] != cfg.n_mels:
            raise ShapeError(f"batch must be (B, T, {cfg.n_mels}), got {x.shape}")
        if cfg.lambda_f0 > 0 and batch.f0_bin is None:
            raise FeatshiftError("F0 class labels are required when lambda_f0 > 0")

        h = self.content.forward(x)
        if self.variational:
            if batch.noise is None:
                raise FeatshiftError("variational content head needs a noise sample")
            mu = self.head_mu.forward(h)
            logvar = self.head_logvar.forward(h)
            sd = np.exp(0.5 * logvar)
            zc = mu + sd * batch.noise
        else:
            zc = h
        self._zc = zc
        zs = self.speaker.forward(x)
        xhat = self._decoder_forward(zc, zs)

        rec, d_xhat = l1_loss(xhat, x)
        self._residual_sign = xhat > x
        report = LossReport(total=rec, rec=rec)
        adversarial = {}
        dzc, dzs = 0.0, 0.0
        if backward:
            dzc, dzs = self._decoder_backward(d_xhat)

        if cfg.lambda_dat > 0:
            logits = self.critic.forward(self.critic_grl.forward(zc))
            ce, dlogits = cross_entropy(logits, batch.domain)
            report.dat = ce
            adversarial["dat"] = cfg.lambda_dat * ce
            if backward:
                dzc = dzc + self.critic_grl.backward(self.critic.backward(cfg.lambda_dat * dlogits))

        if cfg.lambda_f0 > 0:
            if self.f0_grl is not None:
                logits = self.f0_head.forward(self.f0_grl.forward(zc))
            else:
                logits = self.f0_head.forward(zs)
            ce, dlogits = cross_entropy(logits, batch.f0_bin)
            report.f0 = ce
            if self.f0_grl is not None:
                adversarial["f0"] = cfg.lambda_f0 * ce
            if backward:
                g = self.f0_head.backward(cfg.lambda_f0 * dlogits)
                if self.f0_grl is not None:
                    dzc = dzc + self.f0_grl.backward(g)
                else:
                    dzs = dzs + g

        if cfg.lambda_msp > 0:
            m = self.msp.data
            pred = zs @ m.T
            fit, dpred = mse(pred, np.asarray(batch.attr, dtype=self.dtype))
            gram = m @ m.T - np.eye(2, dtype=self.dtype)
            ortho = float(np.sum(gram * gram))
            report.msp = fit + ortho
            if backward:
                lam = cfg.lambda_msp
                self.msp.grad += lam * (dpred.T @ zs + 4.0 * gram @ m)
                dzs = dzs + lam * (dpred @ m)

        if self.variational:
            kl, dmu_kl, dlv_kl = kl_std_normal(mu, logvar)
            report.kl = kl
            if backward:
                w = cfg.kl_weight
                dmu = dzc + w * dmu_kl
                dlv = dzc * batch.noise * 0.5 * sd + w * dlv_kl
                dzc = self.head_mu.backward(dmu) + self.head_logvar.backward(dlv)

        report.total = (
            rec
            + cfg.lambda_dat * (report.dat or 0.0)
            + cfg.lambda_f0 * (report.f0 or 0.0)
            + cfg.lambda_msp * (report.msp or 0.0)
            + cfg.kl_weight * (report.kl or 0.0)
        )
        if not math.isfinite(report.total):
            raise NonFiniteError(f"non-finite loss: {report.terms()}")
        if backward:
            if not np.isscalar(dzc):
                self.content.backward(dzc)
            if not np.isscalar(dzs):
                self.speaker.backward(dzs)
        return report, adversarial

    def loss(self, batch: Batch, backward: bool = True) -> float:
        """Total loss; with ``backward`` the parameter gradients are accumulated."""
        return self._losses(batch, backward)[0].total

    def fd_objective(self, batch: Batch, param: Param) -> float:
        """The scalar whose gradient w.r.t. ``param`` equals what backward produces.

        Parameters upstream of a gradient-reversal layer descend on the
        adversarial terms scaled by ``-grl_strength``; everything else descends
        on the plain total.
        """
        report, adversarial = self._losses(batch, backward=False)
        if any(param is p for p in self.content_parameters()):
            return report.total - (1.0 + self.cfg.grl_strength) * sum(adversarial.values())
        return report.total

    def kink_signature(self) -> np.ndarray:
        """Signs at every non-smooth point of the last forward pass."""
        masks = [layer._mask.ravel() for layer in self._activations() if layer._mask is not None]
        return np.concatenate(masks + [self._residual_sign.ravel()])

    def _activations(self) -> list[LeakyReLU]:
        seqs = [self.content, self.speaker, self.critic, self.f0_head]
        acts = [l for s in seqs for l in s.layers if isinstance(l, LeakyReLU)]
        return acts + self.dec_acts

    def state_blocks(self) -> dict[str, np.ndarray]:
        blocks = {p.name: p.data for p in self.parameters()}
        if self.gmvn is not None:
            blocks["gmvn.mean"] = self.gmvn.mean
            blocks["gmvn.std"] = self.gmvn.std
        return blocks


# ---------------------------------------------------------------------- data and training


@dataclass
class TrainingSet:
    features: list[np.ndarray]  # GMVN-normalized, model dtype
    domain: np.ndarray
    attr: np.ndarray
    f0_bin: np.ndarray | None
    ids: list[str]
    gmvn: GmvnStats

    @classmethod
    def from_features(cls, raw: Sequence, records: Sequence[UtteranceRecord], dtype="float32",
                      gmvn: GmvnStats | None = None) -> "TrainingSet":
        if not records:
            raise FeatshiftError("training manifest is empty")
        if len(raw) != len(records):
            raise FeatshiftError("feature list and manifest differ in length")
        gmvn = gmvn or gmvn_fit(raw)
        feats = [np.asarray(gmvn_apply(x, gmvn), dtype=dtype) for x in raw]
        domain = np.array([DOMAINS.index(r.domain) for r in records])
        attr = np.array([attribute_vector(r.domain, r.style) for r in records])
        bins = None
        if all(r.median_f0 is not None and r.median_f0 > 0 for r in records):
            bins = np.array([f0_bin(r.median_f0) for r in records])
        return cls(feats, domain, attr, bins, [r.id for r in records], gmvn)

    @classmethod
    def from_manifest(cls, records: Sequence[UtteranceRecord], dtype="float32") -> "TrainingSet":
        return cls.from_features(load_feature_set(records), records, dtype)


def crop_segment(x: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Random ``length``-frame crop; shorter inputs are reflect-padded first."""
    while x.shape[0] < length:
        pad = min(length - x.shape[0], x.shape[0] - 1)
        if pad < 1:
            x = np.concatenate([x, x], axis=0)
            continue
        x = np.pad(x, ((0, pad), (0, 0)), mode="reflect")
    start = int(rng.integers(0, x.shape[0] - length + 1))
    return x[start : start + length]


def sample_batch(data: TrainingSet, cfg: DaeConfig, rng: np.random.Generator) -> Batch:
    idx = rng.integers(0, len(data.features), size=cfg.batch_size)
    x = np.stack([crop_segment(data.features[i], cfg.segment_length, rng) for i in idx])
    noise = None
    if cfg.kl_weight > 0:
        noise = rng.standard_normal((cfg.batch_size, cfg.segment_length, cfg.content_dim)).astype(cfg.dtype)
    if cfg.lambda_f0 > 0 and data.f0_bin is None:
        raise FeatshiftError("every utterance needs a median F0 when lambda_f0 > 0")
    bins = data.f0_bin[idx] if data.f0_bin is not None else None
    return Batch(x=x, domain=data.domain[idx], attr=data.attr[idx], f0_bin=bins, noise=noise)


def train_step(batch: Batch, model: DaeModel, state: AdamState) -> LossReport:
    params = model.parameters()
    zero_grads(params)
    report, _ = model._losses(batch, backward=True)
    adam_step(params, state)
    return report


def adversary_step(batch: Batch, model: DaeModel, state: AdamState) -> None:
    """One extra update of the content-side adversaries on the last batch's frozen ``zc``.

    With only the shared step the encoder outruns the critic: the critic's loss
    sits at chance while a freshly trained probe still reads the domain off zc.
    """
    zc = model._zc
    heads = []
    if model.cfg.lambda_dat > 0:
        heads.append((model.critic, batch.domain))
    if model.cfg.lambda_f0 > 0 and model.f0_grl is not None:
        heads.append((model.f0_head, batch.f0_bin))
    for head, labels in heads:
        params = head.parameters()
        zero_grads(params)
        _, g = cross_entropy(head.forward(zc), labels)
        head.backward(g)
        adam_step(params, state)


def train(data: TrainingSet, cfg: DaeConfig, *, checkpoint_path=None,
          progress: Callable[[int, LossReport], None] | None = None) -> tuple[DaeModel, list[LossReport]]:
    """Run ``cfg.steps`` optimisation steps; deterministic for a given ``cfg.seed``."""
    init_seq, data_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    model = DaeModel(cfg, np.random.default_rng(init_seq))
    model.gmvn = data.gmvn
    state = AdamState(lr=cfg.lr)
    adv_state = AdamState(lr=cfg.adversary_lr)
    rng = np.random.default_rng(data_seq)
    history = []
    for step in range(1, cfg.steps + 1):
        batch = sample_batch(data, cfg, rng)
        report = train_step(batch, model, state)
        for _ in range(cfg.adversary_steps):
            adversary_step(batch, model, adv_state)
        history.append(report)
        if progress is not None:
            progress(step, report)
        if checkpoint_path and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_model(model, checkpoint_path)
    return model, history


def format_log(history: Sequence[LossReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for step, rep in enumerate(history, start=1):
        w.writerow(["" if v is None else (v if isinstance(v, int) else f"{v:.8g}") for v in rep.row(step)])
    return buf.getvalue()


def write_log(history: Sequence[LossReport], path) -> None:
    _io.write_text(path, format_log(history))


# ---------------------------------------------------------------------- conversion


def _normalized(x, gmvn: GmvnStats) -> Spectrogram:
    if isinstance(x, Spectrogram) and x.normalized:
        return x
    return gmvn_apply(x, gmvn)


def average_speaker_embedding(subset: Sequence, model: DaeModel, source: str = "",
                              gmvn: GmvnStats | None = None) -> DomainEmbedding:
    """Mean speaker embedding over raw feature matrices (exact, order-free summation)."""
    if len(subset) == 0:
        raise FeatshiftError("cannot average an empty set of utterances")
    gmvn = gmvn or model.gmvn
    if gmvn is None:
        raise FeatshiftError("no GMVN statistics available")
    zs = np.stack([model.encode_speaker(_normalized(x, gmvn)).astype(np.float64) for x in subset])
    mean = np.array([math.fsum(col) / zs.shape[0] for col in zs.T])
    return DomainEmbedding(mean, source, zs.shape[0])


def convert_utterance(x, model: DaeModel, target: DomainEmbedding, gmvn: GmvnStats | None = None) -> Spectrogram:
    """Decode the utterance's content with ``target``'s speaker embedding, in raw log-Mel units."""
    gmvn = gmvn or model.gmvn
    if gmvn is None:
        raise FeatshiftError("no GMVN statistics available")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.cfg.n_mels:
        raise ShapeError(f"expected (T, {model.cfg.n_mels}) features, got {x.shape}")
    zc = model.encode_content(gmvn_apply(x, gmvn))
    xhat = model.decode(zc, target.vector)
    return gmvn_invert(xhat, gmvn)


# ---------------------------------------------------------------------- persistence


def save_model(model: DaeModel, path) -> None:
    checkpoint.save(path, CHECKPOINT_MAGIC, model.cfg.to_dict(), model.state_blocks())


def load_model(path, expected: DaeConfig | None = None) -> DaeModel:
    cfg_dict, blocks = checkpoint.load(path, CHECKPOINT_MAGIC)
    cfg = DaeConfig.from_dict(cfg_dict)
    if expected is not None and expected.to_dict() != cfg.to_dict():
        diff = {k: (v, cfg_dict.get(k)) for k, v in expected.to_dict().items() if cfg_dict.get(k) != v}
        raise ConfigMismatchError(f"{path}: checkpoint config differs from the expected one: {diff}")
    model = DaeModel(cfg)
    params = model.named_parameters()
    missing = set(params) - set(blocks)
    if missing:
        raise ShapeError(f"{path}: checkpoint lacks parameters {sorted(missing)}")
    for name, p in params.items():
        if blocks[name].shape != p.data.shape:
            raise ShapeError(f"{path}: {name} has shape {blocks[name].shape}, model expects {p.data.shape}")
        p.data[...] = blocks[name].astype(p.data.dtype)
    if "gmvn.mean" in blocks:
        model.gmvn = GmvnStats(blocks["gmvn.mean"], blocks["gmvn.std"])
    return model


# ---------------------------------------------------------------------- disentanglement probes


def probe_accuracy(train_x: Sequence[np.ndarray], train_y: Sequence[int], test_x: Sequence[np.ndarray],
                   test_y: Sequence[int], *, n_classes: int = len(DOMAINS), hidden: int = 32,
                   steps: int = 1500, lr: float = 0.002, seed: int = 0) -> float:
    """Held-out accuracy of a freshly trained classifier on frozen representations.

    Inputs are either ``(T, D)`` frame sequences (per-frame layer, time average,
    two more layers) or ``(D,)`` vectors (three layers). Sequences are trained
    one utterance at a time, vectors as a full batch.
    """
    rng = np.random.default_rng(seed)
    sequence = np.asarray(train_x[0]).ndim == 2
    din = np.asarray(train_x[0]).shape[-1]
    net = pooled_mlp("probe", din, hidden, n_classes, rng, np.float64, frame_first=sequence)
    params = net.parameters()
    state = AdamState(lr=lr)
    train_y = np.asarray(train_y)
    if sequence:
        xs = [np.asarray(x, dtype=np.float64)[None] for x in train_x]
    else:
        xs_all = np.stack([np.asarray(x, dtype=np.float64) for x in train_x])
    for _ in range(steps):
        zero_grads(params)
        if sequence:
            order = rng.permutation(len(xs))[: min(16, len(xs))]
            for i in order:
                _, g = cross_entropy(net.forward(xs[i]), train_y[i : i + 1])
                net.backward(g / len(order))
        else:
            _, g = cross_entropy(net.forward(xs_all), train_y)
            net.backward(g)
        adam_step(params, state)
    if sequence:
        pred = [int(np.argmax(net.infer(np.asarray(x, dtype=np.float64)[None]))) for x in test_x]
    else:
        pred = np.argmax(net.infer(np.stack([np.asarray(x, dtype=np.float64) for x in test_x])), axis=1)
    return float(np.mean(np.asarray(pred) == np.asarray(test_y)))
