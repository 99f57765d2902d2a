"""Command-line pipeline driver.

Every subcommand accepts ``--config FILE`` (one JSON document). Keys use the
flag names with dashes replaced by underscores; a ``"dae"`` object holds
``DaeConfig`` fields and a ``"classifier"`` object holds ``ClassifierConfig``
fields. Flags given on the command line override the file.

Exit status: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _io, corpus_io, dae, evalsuite, plots, sigconv
from .errors import FeatshiftError, NoVoicingError
from .melfeat import extract_logmel, gmvn_fit
from .pitch import estimate_f0_track, median_f0

log = logging.getLogger("featshift")

METHODS = ("stats", "coral", "f0norm", "dae")
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads() -> int:
    raw = os.environ.get("FEATSHIFT_THREADS", "")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise UsageError(f"FEATSHIFT_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def _pmap(fn, items):
    """Order-preserving map over per-utterance work."""
    items = list(items)
    n = min(_threads(), max(1, len(items)))
    if n == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------- config handling


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FeatshiftError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise FeatshiftError(f"{path}: config must be a JSON object")
    return cfg


def _merge(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """defaults < config file < explicit flags."""
    cfg = _load_config(args.config)
    for key, value in vars(args).items():
        if value is None:
            setattr(args, key, cfg.get(key, defaults.get(key)))
    args.section = cfg
    return args


def _need(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _dae_config(args) -> dae.DaeConfig:
    fields = dict(args.section.get("dae", {}))
    for key in ("steps", "seed", "lambda_dat", "lambda_f0", "lambda_msp", "kl_weight"):
        if getattr(args, key, None) is not None:
            fields[key] = getattr(args, key)
    try:
        return dae.DaeConfig.from_dict(fields)
    except (TypeError, ValueError) as exc:
        raise FeatshiftError(f"bad dae config: {exc}") from exc


# ---------------------------------------------------------------------- commands


def cmd_synth(args) -> None:
    _need(args, "seed", "n", "out")
    recs = corpus_io.synth_corpus(int(args.seed), int(args.n), args.out)
    log.info("wrote %d utterances to %s", len(recs), args.out)


def _extract_one(rec, feat_dir: Path):
    wave = corpus_io.read_wav(rec.wav_path)
    feats = extract_logmel(wave.samples)
    path = feat_dir / f"{rec.id}.fcnv"
    corpus_io.write_features(feats, path)
    try:
        f0 = median_f0(estimate_f0_track(wave.samples, wave.sample_rate))
    except NoVoicingError:
        f0 = None
    return replace(rec, feat_path=str(path.resolve()), n_frames=feats.n_frames, median_f0=f0)


def cmd_extract(args) -> None:
    _need(args, "manifest", "out")
    recs = corpus_io.read_manifest(args.manifest)
    missing = [r.id for r in recs if not r.wav_path]
    if missing:
        raise FeatshiftError(f"utterances without audio: {missing[:5]}")
    out = Path(args.out)
    feat_dir = out / "feats"
    feat_dir.mkdir(parents=True, exist_ok=True)
    new = _pmap(lambda r: _extract_one(r, feat_dir), recs)
    corpus_io.write_manifest(new, out / "manifest.jsonl")
    log.info("extracted %d utterances", len(new))


def cmd_stats_fit(args) -> None:
    _need(args, "manifest", "domain", "out")
    recs = corpus_io.select(corpus_io.read_manifest(args.manifest), args.domain)
    if not recs:
        raise FeatshiftError(f"no utterances of domain {args.domain} in {args.manifest}")
    feats = corpus_io.load_feature_set(recs)
    if args.kind == "gmvn":
        gmvn_fit(feats).save(args.out)
    else:
        sigconv.compute_channel_stats(feats).save(args.out)


def _domain_stats(recs, domain, path):
    if path:
        return sigconv.ChannelStats.load(path)
    sub = corpus_io.select(recs, domain)
    if not sub:
        raise FeatshiftError(f"no utterances of domain {domain} to fit statistics on")
    return sigconv.compute_channel_stats(corpus_io.load_feature_set(sub))


def _converter(args, recs):
    method = args.method
    if method == "stats":
        src = _domain_stats(recs, args.src_domain, args.src_stats)
        tgt = _domain_stats(recs, args.tgt_domain, args.tgt_stats)
        return lambda rec, x: sigconv.stats_convert(x, src, tgt)
    if method == "coral":
        src = _domain_stats(recs, args.src_domain, args.src_stats)
        tgt = _domain_stats(recs, args.tgt_domain, args.tgt_stats)
        transform = sigconv.coral_transform(src, tgt, float(args.coral_eps))
        return lambda rec, x: sigconv.coral_convert(x, src, tgt, float(args.coral_eps), transform=transform)
    if method == "f0norm":
        def f0norm(rec, x):
            if rec.median_f0 is None:
                raise FeatshiftError(f"utterance {rec.id!r} has no median F0; run extract first")
            return sigconv.f0norm_convert(x, rec.median_f0, float(args.target_f0))
        return f0norm
    model = dae.load_model(args.model)
    tgt = corpus_io.select(recs, args.tgt_domain)
    if not tgt:
        raise FeatshiftError(f"no utterances of domain {args.tgt_domain} to average a speaker embedding over")
    embedding = dae.average_speaker_embedding(corpus_io.load_feature_set(tgt), model, args.tgt_domain)
    return lambda rec, x: dae.convert_utterance(x, model, embedding)


def cmd_convert(args) -> None:
    _need(args, "method", "manifest", "out")
    if args.method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; choose from {', '.join(METHODS)}")
    if args.method == "dae" and not args.model:
        raise UsageError("--method dae needs --model")
    recs = corpus_io.read_manifest(args.manifest)
    src = corpus_io.select(recs, args.src_domain)
    if not src:
        raise FeatshiftError(f"no utterances of domain {args.src_domain} in {args.manifest}")
    convert = _converter(args, recs)
    out = Path(args.out)
    feat_dir = out / "feats"
    feat_dir.mkdir(parents=True, exist_ok=True)

    def one(rec):
        y = convert(rec, corpus_io.read_features(rec.feat_path))
        path = feat_dir / f"{rec.id}.fcnv"
        corpus_io.write_features(y, path)
        return replace(rec, wav_path="", feat_path=str(path.resolve()), n_frames=int(np.asarray(y).shape[0]),
                       median_f0=None)

    corpus_io.write_manifest(_pmap(one, src), out / "manifest.jsonl")


def cmd_train_dae(args) -> None:
    _need(args, "manifest", "out")
    cfg = _dae_config(args)
    recs = corpus_io.read_manifest(args.manifest)
    data = dae.TrainingSet.from_manifest(recs, cfg.dtype)
    every = max(1, cfg.steps // 20)

    def progress(step, rep):
        if step == 1 or step % every == 0:
            log.info("step %d  %s", step, "  ".join(f"{k}={v:.4f}" for k, v in rep.terms().items()))

    model, history = dae.train(data, cfg, checkpoint_path=args.out, progress=progress)
    dae.save_model(model, args.out)
    dae.write_log(history, args.log or f"{args.out}.log.csv")


def cmd_train_classifier(args) -> None:
    _need(args, "manifest", "out")
    fields = dict(args.section.get("classifier", {}))
    for key in ("steps", "seed"):
        if getattr(args, key, None) is not None:
            fields[key] = getattr(args, key)
    try:
        cfg = evalsuite.ClassifierConfig(**fields)
    except TypeError as exc:
        raise FeatshiftError(f"bad classifier config: {exc}") from exc
    recs = corpus_io.read_manifest(args.manifest)
    clf = evalsuite.train_domain_classifier(corpus_io.load_feature_set(recs), [r.domain for r in recs], cfg)
    clf.save(args.out)
    log.info("held-out accuracy %.3f", clf.holdout_accuracy or float("nan"))


def _waves(recs):
    if any(not r.wav_path for r in recs):
        return None
    return _pmap(lambda r: corpus_io.read_wav(r.wav_path), recs)


def cmd_eval(args) -> None:
    _need(args, "converted", "target", "classifier", "out")
    conv_recs = corpus_io.read_manifest(args.converted)
    tgt_recs = corpus_io.select(corpus_io.read_manifest(args.target), args.tgt_domain)
    if not conv_recs or not tgt_recs:
        raise FeatshiftError("both the converted set and the target domain set must be non-empty")
    conv = corpus_io.load_feature_set(conv_recs)
    tgt = corpus_io.load_feature_set(tgt_recs)
    clf = evalsuite.DomainClassifier.load(args.classifier)

    method = args.f0_method
    conv_waves = tgt_waves = None
    if method != "proxy":
        conv_waves, tgt_waves = _waves(conv_recs), _waves(tgt_recs)
    if method == "auto":
        method = evalsuite.resolve_f0_method(conv_waves, tgt_waves)
    conv_f0 = evalsuite.f0_values(conv, conv_waves, method)
    tgt_f0 = evalsuite.f0_values(tgt, tgt_waves, method)
    conv_mean = evalsuite.mean_spectrum(conv)
    tgt_mean = evalsuite.mean_spectrum(tgt)
    report = evalsuite.EvalReport(
        classified_as_target_pct=evalsuite.classified_as_pct(conv, clf, args.tgt_domain),
        f0_w1_to_target=evalsuite.wasserstein1(conv_f0, tgt_f0),
        mean_spectrum=[float(v) for v in conv_mean],
        n_utts=len(conv),
        target_domain=args.tgt_domain,
        f0_method=method,
        target_mean_spectrum=[float(v) for v in tgt_mean],
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _io.write_text(out, report.to_json() + "\n")
    stem = out.with_suffix("")
    spectra = {"converted": conv_mean, args.tgt_domain: tgt_mean}
    evalsuite.write_mean_spectrum_csv(f"{stem}.mean_spectrum.csv", spectra)
    evalsuite.write_f0_csv(f"{stem}.f0.csv", [r.id for r in conv_recs] + [r.id for r in tgt_recs],
                           conv_f0 + tgt_f0)
    plots.plot_mean_spectra(spectra, f"{stem}.mean_spectrum.png")
    plots.plot_f0_distributions({"converted": conv_f0, args.tgt_domain: tgt_f0}, f"{stem}.f0.png")
    log.info("classified as %s: %.1f%%  F0 W1: %.2f Hz (%s)", args.tgt_domain,
             report.classified_as_target_pct, report.f0_w1_to_target, method)


# ---------------------------------------------------------------------- parser


DEFAULTS = {
    "src_domain": "A",
    "tgt_domain": "C1",
    "target_f0": sigconv.DEFAULT_TARGET_F0,
    "coral_eps": sigconv.DEFAULT_CORAL_EPS,
    "kind": "channel",
    "f0_method": "auto",
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="featshift", description="Adult-to-child acoustic feature conversion toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON config; flags override its keys")
        sp.set_defaults(func=func)
        return sp

    sp = add("synth", cmd_synth, "write a seeded synthetic three-domain corpus")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n", type=int, help="utterances per domain")
    sp.add_argument("--out")

    sp = add("extract", cmd_extract, "log-Mel features and median F0 for every utterance")
    sp.add_argument("--manifest")
    sp.add_argument("--out")

    stats = sub.add_parser("stats", help="statistics files")
    stats_sub = stats.add_subparsers(dest="stats_command", parser_class=_Parser)
    stats_sub.required = True
    sp = stats_sub.add_parser("fit", help="fit per-channel statistics of one domain")
    sp.set_defaults(func=cmd_stats_fit)
    sp.add_argument("--config")
    sp.add_argument("--manifest")
    sp.add_argument("--domain", choices=corpus_io.DOMAINS)
    sp.add_argument("--kind", choices=("channel", "gmvn"))
    sp.add_argument("--out")

    sp = add("convert", cmd_convert, "convert the source-domain features of a manifest")
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--manifest")
    sp.add_argument("--src-domain", choices=corpus_io.DOMAINS)
    sp.add_argument("--tgt-domain", choices=corpus_io.DOMAINS)
    sp.add_argument("--out")
    sp.add_argument("--model")
    sp.add_argument("--target-f0", type=float)
    sp.add_argument("--coral-eps", type=float)
    sp.add_argument("--src-stats", help="precomputed source ChannelStats JSON")
    sp.add_argument("--tgt-stats", help="precomputed target ChannelStats JSON")

    sp = add("train-dae", cmd_train_dae, "train the disentangling auto-encoder")
    sp.add_argument("--manifest")
    sp.add_argument("--out")
    sp.add_argument("--log", help="CSV loss log (default: OUT.log.csv)")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lambda-dat", type=float)
    sp.add_argument("--lambda-f0", type=float)
    sp.add_argument("--lambda-msp", type=float)
    sp.add_argument("--kl-weight", type=float)

    sp = add("train-classifier", cmd_train_classifier, "train the 3-way domain classifier used by eval")
    sp.add_argument("--manifest")
    sp.add_argument("--out")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)

    sp = add("eval", cmd_eval, "score a converted set against a target domain")
    sp.add_argument("--converted")
    sp.add_argument("--target")
    sp.add_argument("--tgt-domain", choices=corpus_io.DOMAINS)
    sp.add_argument("--classifier")
    sp.add_argument("--f0-method", choices=("auto", "waveform", "proxy"))
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _merge(args, DEFAULTS)
        args.func(args)
    except UsageError as exc:
        print(f"featshift: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FeatshiftError, OSError, ValueError) as exc:
        print(f"featshift: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
