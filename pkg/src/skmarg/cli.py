"""Command-line entry point: ``skmarg {gen,train,decode,eval}``.

Exit status is 0 on success, 2 on a configuration error and 1 on any other
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from typing import Dict, Optional, Sequence, Tuple

from skmarg.evaluation import corpus_wer, edit_distance, significance
from skmarg.marginal import (
    ConfigError,
    MarginalConfig,
    TrainSettings,
    decode,
    format_records,
    parse_config_text,
    train,
)
from skmarg.scorer import read_params, write_params
from skmarg.synth import (
    gen_corpus,
    make_spec,
    manifest_summary,
    read_corpus,
    split_corpus,
    write_corpus,
)

logger = logging.getLogger("skmarg")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def _echo_config(run_dir: str, command: str, values: Dict[str, object]) -> None:
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.echo"), "w", encoding="utf-8") as f:
        json.dump({"command": command, **values}, f, indent=1, sort_keys=True, default=str)
        f.write("\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_marginal_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("marginal config (MarginalConfig fields)")
    g.add_argument("--config", help="JSON or key=value file with MarginalConfig fields")
    g.add_argument("--strategy", choices=["tkm", "randomized_tkm", "skm"])
    g.add_argument("--K", type=int, help="candidates per example (beam width or sample count)")
    g.add_argument("--n", type=int, help="randomized-TKM subset size, must be < K")
    g.add_argument("--temperature", type=float, help="SKM sampling temperature")
    g.add_argument("--decode-K", dest="decode_K", type=int, help="beam candidates used when decoding")
    g.add_argument("--decode-beam", dest="decode_beam", type=int, help="grapheme beam per candidate")
    g.add_argument(
        "--resample-each-step",
        dest="resample_each_step",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="draw fresh SKM samples at every step",
    )
    g.add_argument(
        "--renormalize",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="renormalize candidate weights within each set (ablation)",
    )
    g.add_argument(
        "--merge-duplicates",
        dest="merge_duplicates",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="merge repeated SKM samples (off keeps multiplicities; ablation)",
    )


def _marginal_config(args) -> MarginalConfig:
    values: Dict[str, object] = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            values.update(parse_config_text(f.read()))
    for name in (
        "strategy",
        "K",
        "n",
        "temperature",
        "decode_K",
        "decode_beam",
        "resample_each_step",
        "renormalize",
        "merge_duplicates",
    ):
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return MarginalConfig.from_mapping(values)


def _add_split_args(p: argparse.ArgumentParser, default: str) -> None:
    p.add_argument("--split", choices=["train", "test", "all"], default=default)
    p.add_argument("--test-fraction", type=float, default=0.2, help="held-out tail of the corpus")


def _select(examples, split: str, fraction: float):
    if split == "all":
        return list(examples)
    train_part, test_part = split_corpus(examples, fraction)
    return train_part if split == "train" else test_part


def cmd_gen(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    spec = make_spec(
        num_graphemes=args.num_graphemes,
        num_phonemes=args.num_phonemes,
        ambiguous=not args.unambiguous,
        min_len=args.min_len,
        max_len=args.max_len,
        frames_per_phoneme=args.frames_per_phoneme,
        noise=args.noise,
        seed=args.seed,
        frame_shift_ms=args.frame_shift_ms,
    )
    examples = gen_corpus(spec, args.count)
    write_corpus(args.out, spec, examples)
    _echo_config(args.out, "gen", {k: v for k, v in vars(args).items() if k != "func"})
    summary = manifest_summary(examples)
    print("\t".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def cmd_train(args) -> int:
    config = _marginal_config(args)
    settings = TrainSettings(
        steps=args.steps,
        lr=args.lr,
        batch_size=args.batch_size,
        clip_norm=args.clip_norm,
        log_every=args.log_every,
        monitor_size=args.monitor_size,
        monitor_samples=args.monitor_samples,
    )
    spec, examples = read_corpus(args.corpus)
    chosen = _select(examples, args.split, args.test_fraction)
    vocab = spec.phoneme_vocab()
    echo = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    echo.update(config.to_dict())
    _echo_config(args.run_dir, "train", echo)

    def progress(rec):
        logger.info("step %d loss %.4f batch_loss %.4f", rec.step, rec.loss, rec.batch_loss)

    params, records = train(
        [(ex.lattice, ex.y_true) for ex in chosen],
        vocab,
        spec.num_graphemes,
        config,
        settings,
        seed=args.seed,
        progress=progress,
    )
    write_params(params, os.path.join(args.run_dir, "params.txt"))
    with open(os.path.join(args.run_dir, "loss.csv"), "w", encoding="utf-8") as f:
        f.write(format_records(records))
    if records[-1].skipped:
        logger.warning("%d examples skipped: target impossible", records[-1].skipped)
    print(f"final loss {records[-1].loss:.4f} after {records[-1].step} steps")
    return EXIT_OK


def cmd_decode(args) -> int:
    config = _marginal_config(args)
    spec, examples = read_corpus(args.corpus)
    if not os.path.exists(args.params):
        raise FileNotFoundError(args.params)
    params = read_params(args.params)
    vocab, gvocab = spec.phoneme_vocab(), spec.grapheme_vocab()
    if params.num_phonemes != vocab.size or params.num_graphemes != gvocab.size:
        raise ConfigError("params do not match the corpus vocabularies")
    chosen = _select(examples, args.split, args.test_fraction)
    echo = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    echo.update(config.to_dict())
    _echo_config(args.run_dir, "decode", echo)

    hyp_lines, timing_lines = [], ["id\twall_s\taudio_s"]
    for ex in chosen:
        start = time.perf_counter()
        y, logp = decode(ex.lattice, vocab, params, config)
        wall = time.perf_counter() - start
        hyp_lines.append(f"{ex.uid}\t{' '.join(gvocab.decode(y))}\t{logp!r}")
        timing_lines.append(f"{ex.uid}\t{wall:.6f}\t{ex.lattice.duration_s!r}")
    with open(os.path.join(args.run_dir, "hyps.tsv"), "w", encoding="utf-8") as f:
        f.write("\n".join(hyp_lines) + "\n")
    with open(os.path.join(args.run_dir, "timing.tsv"), "w", encoding="utf-8") as f:
        f.write("\n".join(timing_lines) + "\n")
    print(f"decoded {len(chosen)} utterances")
    return EXIT_OK


def read_hyps(path) -> Dict[str, Tuple[str, ...]]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            out[parts[0]] = tuple(parts[1].split()) if len(parts) > 1 else ()
    return out


def read_timing(path) -> Tuple[float, float]:
    wall = audio = 0.0
    with open(path, encoding="utf-8") as f:
        next(f)
        for line in f:
            if line.strip():
                _, w, a = line.rstrip("\n").split("\t")
                wall += float(w)
                audio += float(a)
    return wall, audio


def cmd_eval(args) -> int:
    spec, examples = read_corpus(args.corpus)
    gvocab = spec.grapheme_vocab()
    refs = {ex.uid: gvocab.decode(ex.y_true) for ex in examples}
    hyps_a = read_hyps(args.hyps)
    ids = sorted(hyps_a)
    missing = [i for i in ids if i not in refs]
    if missing:
        raise UsageError(f"hypotheses for unknown utterances: {missing[:3]}")
    report_a = corpus_wer([(refs[i], hyps_a[i]) for i in ids])
    p_value = None
    report_b = None
    if args.hyps_b:
        hyps_b = read_hyps(args.hyps_b)
        if sorted(hyps_b) != ids:
            raise UsageError("the two hypothesis files cover different utterances")
        report_b = corpus_wer([(refs[i], hyps_b[i]) for i in ids])
        errs_a = [edit_distance(refs[i], hyps_a[i])[0] for i in ids]
        errs_b = [edit_distance(refs[i], hyps_b[i])[0] for i in ids]
        p_value = significance(errs_a, errs_b, resamples=args.resamples, seed=args.seed)
    rtf_value = None
    if args.timing:
        wall, audio = read_timing(args.timing)
        if audio <= 0:
            raise UsageError("timing file has zero audio duration")
        rtf_value = wall / audio

    rows = [replace(report_a, rtf=rtf_value, p_value=p_value)]
    if report_b is not None:
        rows.append(replace(report_b, p_value=p_value))
    tsv = rows[0].to_tsv() + "".join(r.to_tsv().split("\n", 1)[1] for r in rows[1:])
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(tsv)
    print(rows[0].summary(os.path.basename(args.hyps)))
    if len(rows) > 1:
        print(rows[1].summary(os.path.basename(args.hyps_b)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skmarg", description="Marginalized phoneme-to-grapheme training and decoding."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic corpus")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.5, help="uniform mixture weight in [0, 1)")
    p.add_argument("--frames-per-phoneme", type=_positive_int, default=2)
    p.add_argument("--num-graphemes", type=_positive_int, default=6)
    p.add_argument("--num-phonemes", type=_positive_int, default=8)
    p.add_argument("--min-len", type=_positive_int, default=3)
    p.add_argument("--max-len", type=_positive_int, default=6)
    p.add_argument("--frame-shift-ms", type=float, default=10.0)
    p.add_argument("--unambiguous", action="store_true", help="one-to-one grapheme/phoneme map")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the scorer on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_marginal_args(p)
    g = p.add_argument_group("optimizer settings")
    g.add_argument("--steps", type=_positive_int, default=TrainSettings.steps)
    g.add_argument("--lr", type=float, default=TrainSettings.lr)
    g.add_argument("--batch-size", type=_positive_int, default=TrainSettings.batch_size)
    g.add_argument("--clip-norm", type=float, default=TrainSettings.clip_norm)
    g.add_argument("--log-every", type=_positive_int, default=TrainSettings.log_every)
    g.add_argument("--monitor-size", type=_positive_int, default=TrainSettings.monitor_size)
    g.add_argument("--monitor-samples", type=_positive_int, default=TrainSettings.monitor_samples)
    _add_split_args(p, "train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a corpus split with trained params")
    p.add_argument("--corpus", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--run-dir", required=True)
    _add_marginal_args(p)
    _add_split_args(p, "test")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score hypotheses against corpus references")
    p.add_argument("--corpus", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--hyps-b", help="second system for the paired significance test")
    p.add_argument("--timing", help="timing.tsv written by decode")
    p.add_argument("--out", help="report TSV path")
    p.add_argument("--resamples", type=_positive_int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"skmarg {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if args.command == "gen":
            print(f"skmarg gen: config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"skmarg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError) as exc:
        print(f"skmarg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

