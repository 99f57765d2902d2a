"""Audio ingestion, manifests, binary feature files and the synthetic corpus."""
from __future__ import annotations

import json
import os
import struct
import wave
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _io
from .errors import (
    DuplicateIdError,
    FeatshiftError,
    FormatError,
    MagicError,
    ShapeError,
    SizeError,
    UnsupportedEncodingError,
    VersionError,
)
from .melfeat import SAMPLE_RATE, Spectrogram

DOMAINS = ("A", "C1", "C2")
STYLES = ("read", "conversational")
DEFAULT_STYLE = {"A": "read", "C1": "read", "C2": "conversational"}

FEATURE_MAGIC = b"FCNV"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if len(self.samples) == 0:
            raise FeatshiftError("waveform is empty")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    domain: str
    style: str | None = None
    wav_path: str = ""
    feat_path: str = ""
    n_frames: int = 0
    median_f0: float | None = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise FeatshiftError(f"unknown domain {self.domain!r} for utterance {self.id!r}")
        if self.style is None:
            object.__setattr__(self, "style", DEFAULT_STYLE[self.domain])
        elif self.style not in STYLES:
            raise FeatshiftError(f"unknown style {self.style!r} for utterance {self.id!r}")


# --------------------------------------------------------------------------- audio


def read_wav(path) -> Waveform:
    """Read a 16-bit mono PCM RIFF/WAVE file, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1 or wf.getsampwidth() != 2 or wf.getcomptype() != "NONE":
                raise UnsupportedEncodingError(
                    f"{path}: need 16-bit mono PCM, got {wf.getnchannels()} channel(s) "
                    f"of {8 * wf.getsampwidth()} bits ({wf.getcomptype()})"
                )
            n = wf.getnframes()
            raw = wf.readframes(n)
            sr = wf.getframerate()
    except (wave.Error, EOFError, struct.error) as exc:
        raise FormatError(f"{path}: malformed WAV header ({exc})") from exc
    if len(raw) != 2 * n:
        raise FormatError(f"{path}: payload truncated ({len(raw)} of {2 * n} bytes)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, sr)


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    x = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    pcm = x.astype("<i2").tobytes()
    with _io.atomic_path(path) as tmp:
        with wave.open(str(tmp), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(sample_rate)
            wf.writeframes(pcm)


# --------------------------------------------------------------------------- features


def encode_features(spec) -> bytes:
    x = np.asarray(spec)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f"feature matrix must be non-empty 2-D, got shape {x.shape}")
    n_frames, n_channels = x.shape
    payload = np.ascontiguousarray(x, dtype="<f4").tobytes()
    return _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n_frames, n_channels) + payload


def decode_features(data: bytes, source: str = "<bytes>") -> Spectrogram:
    if len(data) < _FEATURE_HEADER.size:
        raise SizeError(f"{source}: {len(data)} bytes is shorter than the feature header")
    magic, version, n_frames, n_channels = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise MagicError(f"{source}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise VersionError(f"{source}: unsupported version {version}")
    expected = 4 * n_frames * n_channels
    if len(data) - _FEATURE_HEADER.size != expected or n_frames < 1:
        raise SizeError(
            f"{source}: payload is {len(data) - _FEATURE_HEADER.size} bytes, header implies {expected}"
        )
    x = np.frombuffer(data, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(n_frames, n_channels)
    return Spectrogram(x.astype(np.float32))


def write_features(spec, path) -> None:
    _io.write_bytes(path, encode_features(spec))


def read_features(path) -> Spectrogram:
    with open(path, "rb") as fh:
        return decode_features(fh.read(), str(path))


# --------------------------------------------------------------------------- manifests

_MANIFEST_KEYS = ("id", "domain", "style", "wav_path", "feat_path", "n_frames", "median_f0")


def _resolve(base: Path, p: str) -> str:
    if not p or os.path.isabs(p):
        return p
    return os.path.abspath(base / p)


def _relativize(base: Path, p: str) -> str:
    if not p or not os.path.isabs(p):
        return p
    try:
        return str(Path(p).resolve().relative_to(base.resolve()))
    except ValueError:
        return p


def parse_manifest(lines: Iterable[str], source: str = "<manifest>") -> list[UtteranceRecord]:
    records, seen = [], set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("line is not a JSON object")
            fields = {k: obj[k] for k in _MANIFEST_KEYS if k in obj and obj[k] is not None}
            if "median_f0" in fields:
                fields["median_f0"] = float(fields["median_f0"])
            if "n_frames" in fields:
                fields["n_frames"] = int(fields["n_frames"])
            rec = UtteranceRecord(**fields)
        except (ValueError, TypeError, FeatshiftError) as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from exc
        if rec.id in seen:
            raise DuplicateIdError(f"{source}:{lineno}: duplicate utterance id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    return records


def read_manifest(path, *, resolve_paths: bool = True) -> list[UtteranceRecord]:
    """Read a JSON-lines manifest.

    Relative ``wav_path``/``feat_path`` entries are interpreted against the
    manifest's directory when ``resolve_paths`` is set.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        records = parse_manifest(fh, str(path))
    if resolve_paths:
        base = path.parent
        records = [
            replace(r, wav_path=_resolve(base, r.wav_path), feat_path=_resolve(base, r.feat_path))
            for r in records
        ]
    return records


def format_manifest(records: Sequence[UtteranceRecord]) -> str:
    seen = set()
    out = []
    for r in records:
        if r.id in seen:
            raise DuplicateIdError(f"duplicate utterance id {r.id!r}")
        seen.add(r.id)
        out.append(json.dumps(asdict(r), ensure_ascii=False))
    return "".join(line + "\n" for line in out)


def write_manifest(records: Sequence[UtteranceRecord], path, *, relative_paths: bool = True) -> None:
    path = Path(path)
    if relative_paths:
        base = path.parent
        records = [
            replace(r, wav_path=_relativize(base, r.wav_path), feat_path=_relativize(base, r.feat_path))
            for r in records
        ]
    _io.write_text(path, format_manifest(records))


def select(records: Iterable[UtteranceRecord], domain: str | None = None) -> list[UtteranceRecord]:
    return [r for r in records if domain is None or r.domain == domain]


def load_feature_set(records: Iterable[UtteranceRecord]) -> list[Spectrogram]:
    out = []
    for r in records:
        if not r.feat_path:
            raise FeatshiftError(f"utterance {r.id!r} has no feature file; run extraction first")
        out.append(read_features(r.feat_path))
    return out


# --------------------------------------------------------------------------- synthetic corpus

# Formant frequencies (Hz) of a small adult vowel inventory.
VOWELS = {
    "a": (800.0, 1200.0, 2500.0),
    "e": (500.0, 1900.0, 2600.0),
    "i": (300.0, 2250.0, 3000.0),
    "o": (500.0, 900.0, 2400.0),
    "u": (350.0, 800.0, 2300.0),
}
VOWEL_NAMES = tuple(VOWELS)
N_HARMONICS = 8

SYNTH_DOMAINS = {
    "A": {"f0": (110.0, 160.0), "formant_scale": 1.0},
    "C1": {"f0": (250.0, 320.0), "formant_scale": 1.2},
    "C2": {"f0": (230.0, 330.0), "formant_scale": 1.2},
}


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    kernel = np.ones(width) / width
    pad = width // 2
    padded = np.pad(x, (pad, width - 1 - pad), mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def synth_utterance(rng: np.random.Generator, domain: str, sr: int = SAMPLE_RATE) -> tuple[np.ndarray, float]:
    """Render one harmonic-vowel utterance; returns ``(samples, true_f0)``."""
    params = SYNTH_DOMAINS[domain]
    conversational = DEFAULT_STYLE[domain] == "conversational"
    f0 = float(rng.uniform(*params["f0"]))

    n_seg = int(rng.integers(4, 7))
    formants, voiced = [], []
    for _ in range(n_seg):
        v = VOWEL_NAMES[int(rng.integers(len(VOWEL_NAMES)))]
        n = int(rng.uniform(0.18, 0.32) * sr)
        formants.append(np.tile(np.array(VOWELS[v]) * params["formant_scale"], (n, 1)))
        voiced.append(np.ones(n))
    lead = int(0.05 * sr)
    formants = np.concatenate([np.tile(formants[0][0], (lead, 1)), *formants, np.tile(formants[-1][-1], (lead, 1))])
    gate = np.concatenate([np.zeros(lead), *voiced, np.zeros(lead)])
    n_samples = len(gate)
    ramp = int(0.02 * sr)
    formants = np.stack([_smooth(formants[:, i], ramp) for i in range(3)], axis=1)
    gate = _smooth(gate, int(0.01 * sr))

    t = np.arange(n_samples) / sr
    contour = f0 * (1.0 + 0.03 * (1.0 - 2.0 * t / t[-1]))
    phase = 2 * np.pi * np.cumsum(contour) / sr

    harmonics = np.arange(1, N_HARMONICS + 1)[:, None]
    freqs = harmonics * contour[None, :]
    bw = 120.0 + 0.1 * formants
    resonance = np.exp(-(((freqs[:, None, :] - formants.T[None, :, :]) / bw.T[None, :, :]) ** 2)).sum(axis=1)
    amps = harmonics**-2.0 * (1.0 + 2.0 * resonance)
    voiced_sig = gate * np.sum(amps * np.sin(harmonics * phase[None, :]), axis=0)
    voiced_sig *= rng.uniform(0.3, 0.6) / np.max(np.abs(voiced_sig))

    noise = 1e-3 * rng.standard_normal(n_samples)
    if conversational:
        # breathy phonation: aspiration noise riding on the voicing gate
        noise += 0.02 * gate * rng.standard_normal(n_samples)
    return voiced_sig + noise, f0


def synth_corpus(seed: int, n_per_domain: int, out_dir) -> list[UtteranceRecord]:
    """Write a deterministic three-domain corpus of WAV files plus manifest.

    Produces ``out_dir/manifest.jsonl``, ``out_dir/truth.json`` (true F0 per
    utterance) and ``out_dir/wav/*.wav``. Output depends only on
    ``(seed, n_per_domain)``.
    """
    if n_per_domain < 2:
        raise ValueError("n_per_domain must be at least 2")
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    records, truth = [], {}
    for d_idx, domain in enumerate(DOMAINS):
        for i in range(n_per_domain):
            rng = np.random.default_rng(np.random.SeedSequence([seed, d_idx, i]))
            samples, f0 = synth_utterance(rng, domain)
            uid = f"{domain}_{i:04d}"
            wav_path = out / "wav" / f"{uid}.wav"
            write_wav(wav_path, samples)
            truth[uid] = round(f0, 6)
            records.append(UtteranceRecord(id=uid, domain=domain, wav_path=str(wav_path.resolve())))
    write_manifest(records, out / "manifest.jsonl")
    _io.write_text(out / "truth.json", json.dumps(truth, indent=1, sort_keys=True) + "\n")
    return records


def read_truth(out_dir) -> dict[str, float]:
    with open(Path(out_dir) / "truth.json", encoding="utf-8") as fh:
        return {k: float(v) for k, v in json.load(fh).items()}
