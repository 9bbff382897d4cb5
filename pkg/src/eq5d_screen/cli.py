"""Command-line entry point.

Subcommands:
    enrich    segment + entity-enrich a corpus, writing the sentence cache
    train     run one backbone x enricher x approach cell over its seeds
    evaluate  score a predictions file against corpus labels
    matrix    run the full (or restricted) experiment grid plus the baseline
    report    render comparison tables from a results store
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .aggregation import load_sentence_predictions, load_study_predictions
from .classifier import TrainConfig
from .corpus import load_corpus
from .enrichment import enrich_corpus, get_backend, save_sentences
from .evaluation import compute_metrics
from .runner import (
    DEFAULT_SEEDS,
    ExperimentConfig,
    MatrixSpec,
    report,
    run_cell,
    run_matrix,
)


def _add_corpus_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--corpus", required=True, help="corpus file path")
    parser.add_argument("--corpus-format", default="jsonl", choices=["jsonl", "csv"])


def _add_train_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backbone", default="mini",
                        help="backbone id (mini, bert, scibert, biobert)")
    parser.add_argument("--enricher", default="test_regex",
                        help="enricher id (test_regex, sci_sm, sci_md, sci_scibert)")
    parser.add_argument("--seeds", default=",".join(str(s) for s in DEFAULT_SEEDS),
                        help="comma-separated run seeds")
    parser.add_argument("--lr", default="2e-5",
                        help="learning rate, or 'grid' to select on validation F1")
    parser.add_argument("--max-epochs", type=int, default=20)
    parser.add_argument("--patience", type=int, default=5)
    parser.add_argument("--max-len", type=int, default=256)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--deterministic", action="store_true",
                        help="request deterministic torch kernels")
    parser.add_argument("--force", action="store_true",
                        help="rerun cells even when a completed manifest exists")
    parser.add_argument("--freeze-split", action="store_true",
                        help="reuse the first seed's split for every run")


def _parse_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


def _train_config(args, backbone: str) -> tuple[TrainConfig, bool]:
    select_lr = args.lr == "grid"
    lr = 2e-5 if select_lr else float(args.lr)
    config = TrainConfig(
        backbone_id=backbone,
        learning_rate=lr,
        max_epochs=args.max_epochs,
        patience=args.patience,
        max_len=args.max_len,
        batch_size=args.batch_size,
    )
    return config, select_lr


def cmd_enrich(args) -> int:
    records = load_corpus(args.corpus, args.corpus_format).records
    backend = get_backend(args.enricher)
    sentences = enrich_corpus(records, backend)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_sentences(sentences, out)
    print(f"enriched {len(records)} studies into {len(sentences)} sentences -> {out}")
    return 0


def cmd_train(args) -> int:
    train_config, select_lr = _train_config(args, args.backbone)
    config = ExperimentConfig(
        backbone_id=args.backbone,
        enricher_id=args.enricher,
        approach=args.approach,
        train_config=train_config,
        run_seeds=_parse_seeds(args.seeds),
        corpus_path=args.corpus,
        corpus_format=args.corpus_format,
        output_dir=args.output,
    )
    manifest = run_cell(config, select_lr=select_lr, freeze_split=args.freeze_split,
                        force=args.force, deterministic=args.deterministic)
    print(json.dumps({"config_id": manifest["config_id"],
                      "runs": manifest["runs"]}, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    gold = {r.study_id: r.label
            for r in load_corpus(args.corpus, args.corpus_format).records}
    if args.level == "sentence":
        preds = load_sentence_predictions(args.predictions)
    else:
        preds = load_study_predictions(args.predictions)
    pairs = [(p.predicted_label, gold[p.study_id]) for p in preds]
    metrics = compute_metrics(pairs, args.level)
    print(json.dumps({
        "level": metrics.level,
        "accuracy": metrics.accuracy,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "counts": {"tp": metrics.counts[0], "fp": metrics.counts[1],
                   "fn": metrics.counts[2], "tn": metrics.counts[3]},
    }, indent=2))
    return 0


def cmd_matrix(args) -> int:
    train_config, select_lr = _train_config(args, args.backbone.split(",")[0])
    spec = MatrixSpec(
        corpus_path=args.corpus,
        output_dir=args.output,
        backbones=tuple(args.backbone.split(",")),
        enrichers=tuple(args.enricher.split(",")),
        approaches=tuple(args.approach.split(",")),
        run_seeds=_parse_seeds(args.seeds),
        corpus_format=args.corpus_format,
        train_config=train_config,
        select_lr=select_lr,
        freeze_split=args.freeze_split,
        include_baseline=not args.no_baseline,
        force=args.force,
        deterministic=args.deterministic,
    )
    summary = run_matrix(spec)
    print(json.dumps(summary["cells"], indent=2))
    if summary["failed"]:
        for failure in summary["failed"]:
            print(f"FAILED {failure['config_id']}: {failure['error']}",
                  file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    comparison = report(args.output)
    print(comparison.read_text(encoding="utf-8"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eq5d-screen",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enrich", help="enrich a corpus into sentence records")
    _add_corpus_args(p)
    p.add_argument("--enricher", default="test_regex")
    p.add_argument("--output", required=True, help="output sentences file")
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("train", help="run one experiment cell")
    _add_corpus_args(p)
    _add_train_args(p)
    p.add_argument("--approach", default="sentence_agg",
                   choices=["sentence_agg", "mil"])
    p.add_argument("--output", default="runs", help="results directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score stored predictions against labels")
    _add_corpus_args(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--level", default="study", choices=["sentence", "study"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("matrix", help="run the experiment grid")
    _add_corpus_args(p)
    _add_train_args(p)
    p.add_argument("--approach", default="sentence_agg,mil",
                   help="comma-separated list of sentence_agg and/or mil")
    p.add_argument("--output", default="runs", help="results directory")
    p.add_argument("--no-baseline", action="store_true",
                   help="skip the Naive Bayes baseline")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("report", help="render comparison tables")
    p.add_argument("--output", default="runs", help="results directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
