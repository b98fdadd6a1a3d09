"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 external command failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import augmentation, corpus, metrics, synthesis
from .diffusion import DiffusionError, NoiseSchedule
from .score import GaussianScore

log = logging.getLogger("dysdiff")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EXTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--config", type=Path, default=None, help="JSON file supplying defaults for these flags")


def _emit(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _severity(path):
    reg = corpus.load_severity_registry(path) if path else corpus.TORGO_DYSARTHRIC
    return {s: p.severity for s, p in reg.items()}


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    speakers = list(corpus.TORGO_DYSARTHRIC)
    if args.speakers:
        speakers = args.speakers.split(",")
    jobs = []
    if args.manifest:
        for r in corpus.load_manifest(args.manifest):
            jobs.append((r.utterance_id, r.speaker, r.prompt))
    elif args.text:
        if not args.speaker:
            raise UsageError("--speaker is required with --text")
        jobs.append((None, args.speaker, args.text))
    else:
        raise UsageError("one of --text or --manifest is required")
    sched = NoiseSchedule(args.beta0, args.betaT)
    table = synthesis.EncoderTable.default(n_speakers=len(speakers), seed=args.seed)
    if args.score_model:
        score = synthesis.load_score_net(args.score_model)
    else:
        score = _CenteredGaussianScore(sched, args.data_var)
    rng = np.random.default_rng(args.seed)
    vocoder_manifest = Path(args.vocoder_manifest or Path(args.out_dir) / "vocoder.tsv")
    for uid, spk, text in jobs:
        if spk not in speakers:
            raise corpus.CorpusError(f"speaker {spk!r} not in the speaker table {speakers}")
        mel = synthesis.synthesize(text, speakers.index(spk), score, sched, args.n_steps, rng, table=table)
        rec = synthesis.vocoder_handoff(mel, args.out_dir, vocoder_manifest, speaker=spk, text=text,
                                        utterance_id=uid)
        print(f"{rec.id}\t{rec.mel_path}")
    return EXIT_OK


class _CenteredGaussianScore:
    """Analytic score for data distributed ``N(mu, data_var * I)`` around the encoder output."""

    def __init__(self, sched, data_var):
        self.sched, self.data_var = sched, data_var

    def __call__(self, x, t, mu, speaker=None):
        return GaussianScore(self.sched, mu, self.data_var)(x, t, mu, speaker)


# -- eval ------------------------------------------------------------------

def cmd_eval_mcd(args) -> int:
    value = metrics.mcd(synthesis.read_mel(args.ref), synthesis.read_mel(args.syn), args.order)
    print(f"MCD {value:.2f} dB")
    return EXIT_OK


def _read_transcripts(path):
    lines = [ln.rstrip("\n") for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln.strip()]
    if lines and all("\t" in ln for ln in lines):
        return dict(ln.split("\t", 1) for ln in lines)
    return {str(i): ln for i, ln in enumerate(lines)}


def cmd_eval_wer(args) -> int:
    hyp = _read_transcripts(args.hyp)
    if args.manifest:
        records = corpus.load_manifest(args.manifest)
        per = {}
        for r in records:
            ref = metrics.normalize_text(r.prompt)
            s, d, i = metrics.edit_counts(ref, metrics.normalize_text(hyp.get(r.utterance_id, "")))
            prev = per.get(r.speaker, (0, 0, 0, 0))
            per[r.speaker] = (prev[0] + s, prev[1] + d, prev[2] + i, prev[3] + len(ref))
        breakdowns = {k: metrics.WerBreakdown(*v) for k, v in per.items()}
        report = metrics.aggregate_wer(breakdowns, _severity(args.severity_registry))
        _emit(metrics.report_to_csv(report), args.out)
        print(f"WER {metrics.round_half_up(report.ovl * 100)}%", file=sys.stderr)
        return EXIT_OK
    if not args.ref:
        raise UsageError("--ref or --manifest is required")
    ref = _read_transcripts(args.ref)
    missing = set(hyp) - set(ref)
    if missing:
        raise metrics.MetricError(f"hypotheses without reference: {sorted(missing)[:5]}")
    s = d = i = n = 0
    for key, text in ref.items():
        r = metrics.normalize_text(text)
        cs, cd, ci = metrics.edit_counts(r, metrics.normalize_text(hyp.get(key, "")))
        s, d, i, n = s + cs, d + cd, i + ci, n + len(r)
    b = metrics.WerBreakdown(s, d, i, n)
    print(f"WER {metrics.round_half_up(b.wer * 100)}%")
    print(f"S={b.substitutions} D={b.deletions} I={b.insertions} N={b.reference_words}", file=sys.stderr)
    return EXIT_OK


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_eval_tau(args) -> int:
    tau = metrics.kendall_tau(_floats(args.x), _floats(args.y))
    print(f"tau {tau:.4f}")
    return EXIT_OK


# -- split -----------------------------------------------------------------

def cmd_split_make(args) -> int:
    records = corpus.load_manifest(args.manifest)
    pairing = corpus.pair_microphones(records)
    if pairing.n_unpaired:
        log.info("%d unpaired units (single microphone)", pairing.n_unpaired)
    plan = corpus.make_splits(pairing, tuple(_floats(args.ratios)), args.seed)
    _emit(corpus.dumps_manifest(plan.apply(records)), args.out)
    return EXIT_OK


def cmd_split_loso(args) -> int:
    records = corpus.load_manifest(args.manifest)
    speakers = args.speakers.split(",") if args.speakers else sorted({r.speaker for r in records})
    train, test = corpus.loso_records(records, speakers, args.target)
    out = Path(args.out_dir)
    corpus.save_manifest(train, out / "train.jsonl")
    corpus.save_manifest(test, out / "test.jsonl")
    print(json.dumps({"target": args.target, "train_speakers": [s for s in speakers if s != args.target],
                      "n_train": len(train), "n_test": len(test)}))
    return EXIT_OK


# -- mix / specaug -------------------------------------------------------------

def cmd_mix(args) -> int:
    real = corpus.load_manifest(args.real)
    synthetic = corpus.load_manifest(args.synthetic)
    plan = augmentation.mix_ratio(real, synthetic, args.ratio, args.seed)
    _emit(corpus.dumps_manifest(plan.records), args.out)
    log.info("added %d synthetic records to %d real", len(plan.synthetic_ids), plan.n_real)
    return EXIT_OK


def cmd_specaug(args) -> int:
    params = augmentation.SpecAugmentParams(args.n_freq_masks, args.max_freq_width, args.n_time_masks,
                                            args.max_time_width, args.mask_probability, args.seed)
    mel = synthesis.read_mel(args.mel)
    synthesis.write_mel(augmentation.spec_augment(mel, params), args.out)
    return EXIT_OK


# -- experiment / report ---------------------------------------------------------

def cmd_experiment_run(args) -> int:
    if args.config is None:
        raise UsageError("experiment run needs --config")
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        raw["seed"] = args.seed
    raw.setdefault("seed", 0)
    if args.dry_run:
        raw["dry_run"] = True
    if args.jobs is not None:
        raw["jobs"] = args.jobs
    if args.workdir:
        raw["workdir"] = args.workdir
    elif "workdir" not in raw and os.environ.get("DYSDIFF_WORKDIR"):
        raw["workdir"] = os.environ["DYSDIFF_WORKDIR"]
    config = augmentation.ExperimentConfig.from_dict(raw, Path(args.config).parent)
    Path(config.workdir).mkdir(parents=True, exist_ok=True)
    result = augmentation.run_experiment(config)
    n_ok = sum(c.status == "ok" for c in result.cells)
    log.info("%d cells, %d scored, %d external invocations", len(result.cells), n_ok, result.n_invocations)
    print(str(Path(config.workdir) / "results.json"))
    if any(c.external_failure for c in result.cells):
        return EXIT_EXTERNAL
    if any(c.status == "error" for c in result.cells):
        return EXIT_DATA
    return EXIT_OK


def cmd_report(args) -> int:
    result = augmentation.ExperimentResult.from_json(Path(args.results).read_text(encoding="utf-8"))
    rendered = augmentation.render_report(result)
    sys.stdout.write(rendered.text)
    if args.csv:
        Path(args.csv).write_text(rendered.csv, encoding="utf-8")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dysdiff", description="Diffusion-based dysarthric speech augmentation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize mel-spectrograms and a vocoder job manifest")
    _common(p)
    p.add_argument("--text")
    p.add_argument("--speaker", help="speaker id (with --text)")
    p.add_argument("--manifest", help="JSONL manifest; each record's prompt is synthesized for its speaker")
    p.add_argument("--speakers", help="comma-separated speaker table (default: the 8 TORGO dysarthric ids)")
    p.add_argument("--out-dir", default="synth_out")
    p.add_argument("--vocoder-manifest")
    p.add_argument("--score-model", help="ToyScoreNet parameter file (default: analytic Gaussian score)")
    p.add_argument("--data-var", type=float, default=0.1, help="variance of the analytic data distribution")
    p.add_argument("--beta0", type=float, default=0.05)
    p.add_argument("--betaT", type=float, default=20.0)
    p.add_argument("--n-steps", type=int, default=100)
    p.set_defaults(func=cmd_synth)

    ev = sub.add_parser("eval", help="evaluation metrics")
    evs = ev.add_subparsers(dest="metric", parser_class=_Parser)
    p = evs.add_parser("mcd", help="mel-cepstral distortion between two mel files")
    _common(p)
    p.add_argument("--ref", required=True)
    p.add_argument("--syn", required=True)
    p.add_argument("--order", type=int, default=13)
    p.set_defaults(func=cmd_eval_mcd)
    p = evs.add_parser("wer", help="word error rate")
    _common(p)
    p.add_argument("--ref", help="reference transcripts, one per line or 'id<TAB>text'")
    p.add_argument("--hyp", required=True)
    p.add_argument("--manifest", help="score per speaker using manifest prompts as references; writes CSV")
    p.add_argument("--severity-registry")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_wer)
    p = evs.add_parser("tau", help="Kendall's tau-b")
    _common(p)
    p.add_argument("--x", required=True, help="comma-separated values")
    p.add_argument("--y", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_eval_tau)

    sp = sub.add_parser("split", help="corpus split protocols")
    sps = sp.add_subparsers(dest="split_command", parser_class=_Parser)
    p = sps.add_parser("make", help="paired-microphone train/validation/test split per speaker")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--out")
    p.set_defaults(func=cmd_split_make)
    p = sps.add_parser("loso", help="leave-one-speaker-out train/test manifests")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--speakers")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split_loso)

    p = sub.add_parser("mix", help="add a percentage of synthetic records to a real manifest")
    _common(p)
    p.add_argument("--real", required=True)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--ratio", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("specaug", help="apply frequency/time masking to a mel file")
    _common(p)
    p.add_argument("--mel", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-freq-masks", type=int, default=2)
    p.add_argument("--max-freq-width", type=int, default=15)
    p.add_argument("--n-time-masks", type=int, default=2)
    p.add_argument("--max-time-width", type=int, default=50)
    p.add_argument("--mask-probability", type=float, default=0.5)
    p.set_defaults(func=cmd_specaug)

    ex = sub.add_parser("experiment", help="LOSO augmentation experiments")
    exs = ex.add_subparsers(dest="experiment_command", parser_class=_Parser)
    p = exs.add_parser("run", help="plan and run every (target, ratio) cell")
    _common(p)
    p.add_argument("--dry-run", action="store_true", help="write manifests and the plan without invoking commands")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--workdir", help="overrides the config and $DYSDIFF_WORKDIR")
    p.set_defaults(func=cmd_experiment_run)

    p = sub.add_parser("report", help="render the WER table for an experiment")
    _common(p)
    p.add_argument("--results", required=True, help="results.json written by 'experiment run'")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config_defaults(args, parser_dests) -> None:
    if args.config is None or args.func is cmd_experiment_run:
        return
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest in parser_dests and getattr(args, dest, None) in (None, parser_dests[dest]):
            setattr(args, dest, value)


def _dests(parser: argparse.ArgumentParser) -> dict:
    # flag defaults, so config values only replace flags left untouched
    out = {}
    stack = [parser]
    while stack:
        p = stack.pop()
        for a in p._actions:
            if isinstance(a, argparse._SubParsersAction):
                stack.extend(a.choices.values())
            elif a.dest not in out:
                out[a.dest] = a.default
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        _apply_config_defaults(args, _dests(parser))
        if args.seed is None:
            args.seed = 0
        return args.func(args)
    except UsageError as exc:
        print(f"dysdiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"dysdiff: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
