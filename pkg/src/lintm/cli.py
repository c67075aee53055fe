"""Command-line interface: ``lintm <subcommand> ...`` (or ``python -m lintm``).

Exit codes: 0 success, 2 configuration error, 3 data or I/O error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import evalkit, experiments
from .checkpoint import check_compatible, load_checkpoint
from .corpus import Corpus, Vocabulary
from .exceptions import ConfigError, LintmError
from .synthlab import (empirical_perplexity_lower_bound, exact_perplexity_lower_bound, gen_dataset,
                       make_trial)

logger = logging.getLogger("lintm")


def parse_value(text: str):
    """JSON scalar/list if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_assignments(items: Optional[List[str]]) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"expected key=value, got {item!r}", field="--set")
        out[key.strip()] = parse_value(value)
    return out


def parse_axes(items: Optional[List[str]]) -> dict:
    axes = {}
    for item in items or []:
        key, sep, values = item.partition("=")
        if not sep or not key or not values:
            raise ConfigError(f"expected key=v1,v2,..., got {item!r}", field="--axis")
        axes[key.strip()] = [parse_value(v) for v in values.split(",")]
    return axes


def build_config(args) -> dict:
    """Config file, then ``--set`` overrides, then dedicated flags."""
    cfg = experiments.load_config_file(args.config) if args.config else {}
    cfg.update(parse_assignments(args.set))
    for key in ("model", "seed", "split_seed"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    out = getattr(args, "out", None)
    if out is not None:
        cfg["output_dir"] = str(out)
    return cfg


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------- subcommands

def cmd_synth_gen(args) -> int:
    if args.num_docs < 1:
        raise ConfigError(f"must be a positive integer, got {args.num_docs}", field="num_docs")
    params = make_trial(args.seed, V=args.vocab_size, num_docs=args.num_docs,
                        doc_length_dist=(args.doc_len_min, args.doc_len_max))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for mode in ("ideal", "worst_case"):
        gen_dataset(params, mode).save(out / f"{mode}.json")
    bound = {
        "empirical": empirical_perplexity_lower_bound(params, num_samples=args.lower_bound_samples),
        "exact": exact_perplexity_lower_bound(params),
        "num_samples": args.lower_bound_samples,
        "trial": {"seed": params.seed, "num_docs": params.num_docs,
                  "doc_length_dist": list(params.doc_length_dist),
                  "d1_weights": params.d1_weights.tolist(), "d2_weights": params.d2_weights.tolist()},
    }
    (out / "lower_bound.json").write_text(json.dumps(bound, indent=2, sort_keys=True))
    print(f"wrote {out / 'ideal.json'}, {out / 'worst_case.json'} and {out / 'lower_bound.json'} "
          f"(lower bound {bound['empirical']:.4f})")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    if not cfg.get("output_dir"):
        raise ConfigError("a run directory is required (--out or output_dir)", field="output_dir")
    result = experiments.run_experiment(cfg)
    out = experiments.write_run_dir(result, result.config["output_dir"])
    rep = result.report
    line = f"perplexity {rep.perplexity:.4f}"
    if rep.accuracy is not None:
        line += f"  accuracy {rep.accuracy:.4f}"
    print(f"{line}  ->  {out}")
    return 0


def _eval_report(model, test: Corpus, config: dict) -> evalkit.MetricsReport:
    acc = None
    extra = {"n_test": len(test)}
    if model.has_classifier and test.is_labeled:
        pred = evalkit.predict_labels(test, model)
        acc = float(np.mean(pred == test.labels()))
        extra["aligned_accuracy"] = evalkit.aligned_accuracy(test.labels(), pred, test.num_labels)
    return evalkit.MetricsReport(perplexity=evalkit.perplexity(test, model), accuracy=acc,
                                 per_label_topics=evalkit.label_topic_tables(model, test.vocab),
                                 config=config, seed=config.get("seed"), extra=extra)


def cmd_eval(args) -> int:
    run = Path(args.run) if args.run else None
    ckpt = args.checkpoint or (run / "checkpoint.json" if run else None)
    corpus_path = args.corpus or (run / "splits" / "test.json" if run else None)
    if ckpt is None:
        raise ConfigError("give --checkpoint or --run", field="checkpoint")
    if corpus_path is None:
        raise ConfigError("give --corpus or --run", field="corpus")
    model = load_checkpoint(ckpt)
    test = Corpus.load(corpus_path)
    check_compatible(model, test)
    config = model.cfg.to_dict()
    if run is not None and (run / "config.json").exists():
        config = json.loads((run / "config.json").read_text())
    report = _eval_report(model, test, config)
    if run is not None:
        train_docs = []
        for name in ("labeled", "unlabeled"):
            path = run / "splits" / f"{name}.json"
            if path.exists():
                train_docs += Corpus.load(path).docs
        if train_docs:
            train_ppl = evalkit.perplexity(Corpus(test.vocab, train_docs, test.num_labels), model)
            report.extra["train_perplexity"] = train_ppl
            if train_ppl > report.perplexity:
                logger.warning("training perplexity %.4f exceeds test perplexity %.4f",
                               train_ppl, report.perplexity)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        experiments.write_report(report, out)
    _print_json({k: v for k, v in report.to_dict().items() if k != "per_label_topics"})
    return 0


def cmd_sweep(args) -> int:
    overrides = build_config(args)
    overrides.pop("output_dir", None)
    if args.preset:
        if args.axis:
            raise ConfigError("--axis cannot be combined with --preset", field="axis")
        result = experiments.run_preset(args.preset, overrides, trials=args.trials,
                                        workers=args.workers)
    else:
        axes = parse_axes(args.axis)
        if not axes:
            raise ConfigError("give --preset or at least one --axis", field="axis")
        result = experiments.sweep(overrides, axes, trials=args.trials, baseline=args.baseline,
                                   workers=args.workers)
    if args.out:
        experiments.write_sweep(result, args.out)
    sys.stdout.write(result.summary_csv())
    failed = sum(r["status"] != "ok" for r in result.runs)
    if failed:
        logger.warning("%d of %d runs failed; see the error column", failed, len(result.runs))
    return 0


def cmd_baseline_clf(args) -> int:
    cfg = build_config(args)
    report = experiments.run_baseline(cfg)
    if cfg.get("output_dir"):
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        experiments.write_report(report, out)
    print(f"baseline accuracy {report.accuracy:.4f}")
    return 0


def cmd_topics(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.corpus:
        corpus = Corpus.load(args.corpus)
        check_compatible(model, corpus)
        vocab = corpus.vocab
    elif model.vocab_terms is not None:
        vocab = Vocabulary(tuple(model.vocab_terms))
    else:
        raise ConfigError("the checkpoint stores no vocabulary; pass --corpus", field="corpus")
    tables = evalkit.label_topic_tables(model, vocab, n=args.n)
    text = evalkit.format_topics_csv(tables) if args.format == "csv" else evalkit.format_topics_text(tables)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser

def _add_config_args(p, model_flag: bool = True) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (value parsed as JSON when possible)")
    if model_flag:
        p.add_argument("--model", choices=experiments.MODELS)
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--split-seed", dest="split_seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lintm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="write ideal and worst-case synthetic corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="trial seed")
    p.add_argument("--num-docs", type=int, default=2500)
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--doc-len-min", type=int, default=20)
    p.add_argument("--doc-len-max", type=int, default=80)
    p.add_argument("--lower-bound-samples", type=int, default=100_000)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train", help="train, evaluate and write a run directory")
    _add_config_args(p)
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="recompute test metrics from a checkpoint")
    p.add_argument("--run", help="run directory written by 'train'")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus", help="corpus JSON to evaluate on")
    p.add_argument("--out", help="directory for report.json / report.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid of runs with per-cell mean and std")
    _add_config_args(p)
    p.add_argument("--preset", choices=sorted(experiments.PRESETS))
    p.add_argument("--axis", action="append", metavar="KEY=V1,V2,...")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--baseline", action="store_true", help="add the classifier-only baseline column")
    p.add_argument("--out", help="directory for sweep.json, runs.csv and summary.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline-clf", help="train the classifier alone and report its accuracy")
    _add_config_args(p, model_flag=False)
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline_clf)

    p = sub.add_parser("topics", help="print top words per topic from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", help="corpus JSON supplying the vocabulary")
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_topics)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LintmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
