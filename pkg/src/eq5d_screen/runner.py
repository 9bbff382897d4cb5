"""Experiment orchestration: the enricher x backbone x approach matrix,
5 seeded runs per cell, manifests, caching, and the results store.

Each cell writes under its own directory (safe for concurrent cells), appends
one record per (config, run, level) to ``results.jsonl``, and is skipped on
re-runs with an unchanged manifest unless forced. By default every seed
reshuffles both the split and training randomness; ``freeze_split`` pins the
split to the first seed instead.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
import traceback
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import torch

from . import __version__
from .aggregation import (
    aggregate_corpus,
    save_sentence_predictions,
    save_study_predictions,
)
from .baselines import bow_predict, bow_train, save_bow_model
from .classifier import (
    LEARNING_RATE_GRID,
    TrainConfig,
    fine_tune,
    predict_sentences,
    select_learning_rate,
)
from .corpus import load_corpus, save_split, select_records, split_corpus
from .encoding import encode
from .enrichment import enrich_corpus, get_backend, load_sentences, save_sentences
from .evaluation import MetricsReport, compute_metrics, render_tables
from .mil import make_bags, mil_predict, mil_train

logger = logging.getLogger(__name__)

APPROACHES = ("sentence_agg", "mil")
DEFAULT_SEEDS = (11, 23, 37, 53, 71)
BASELINE_CONFIG_ID = "bow_nb"

RESOLVED_DECISIONS = {
    "split_unit": "study",
    "split_stratified": True,
    "truncation_side": "head",
    "tie_rule": "positive",
    "sentence_labels": "inherited_from_study",
    "enrichment_suffix": "space+[ENTS: surface|TAG; ...]",
    "weight_decay": 0.01,
    "grad_clip_norm": 1.0,
    "classification_head": "single_linear_over_first_token",
    "attention_form": "ungated_tanh_softmax",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of the matrix plus its seeds and data source."""

    backbone_id: str
    enricher_id: str
    approach: str
    train_config: TrainConfig
    run_seeds: tuple[int, ...] = DEFAULT_SEEDS
    corpus_path: str = ""
    corpus_format: str = "jsonl"
    output_dir: str = "runs"

    @property
    def config_id(self) -> str:
        return f"{self.backbone_id}:{self.enricher_id}:{self.approach}"

    def declared(self) -> dict:
        payload = dataclasses.asdict(self)
        payload.pop("output_dir")
        return payload

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.declared(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class MatrixSpec:
    """The full experiment grid and shared run options."""

    corpus_path: str
    output_dir: str
    backbones: tuple[str, ...] = ("bert", "scibert", "biobert")
    enrichers: tuple[str, ...] = ("sci_sm", "sci_md", "sci_scibert")
    approaches: tuple[str, ...] = APPROACHES
    run_seeds: tuple[int, ...] = DEFAULT_SEEDS
    corpus_format: str = "jsonl"
    train_config: TrainConfig = field(default_factory=TrainConfig)
    select_lr: bool = False
    freeze_split: bool = False
    include_baseline: bool = True
    force: bool = False
    deterministic: bool = False


def plan_matrix(spec: MatrixSpec) -> list[ExperimentConfig]:
    """Expand the grid into one ExperimentConfig per cell."""
    cells = []
    for backbone, enricher, approach in product(spec.backbones, spec.enrichers,
                                                spec.approaches):
        if approach not in APPROACHES:
            raise ValueError(f"unknown approach {approach!r}; expected {APPROACHES}")
        cells.append(ExperimentConfig(
            backbone_id=backbone,
            enricher_id=enricher,
            approach=approach,
            train_config=dataclasses.replace(spec.train_config, backbone_id=backbone),
            run_seeds=spec.run_seeds,
            corpus_path=spec.corpus_path,
            corpus_format=spec.corpus_format,
            output_dir=spec.output_dir,
        ))
    return cells


def cache_dir_for(output_dir: str | Path) -> Path:
    env = os.environ.get("EQ5D_SCREEN_CACHE_DIR")
    return Path(env) if env else Path(output_dir) / "cache"


def _corpus_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


def cached_enrich(records, enricher_id: str, corpus_path, cache_dir: Path,
                  force: bool = False):
    """Enrich once per (corpus, enricher, pipeline version); reuse afterwards."""
    backend = get_backend(enricher_id)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = f"enriched-{_corpus_digest(corpus_path)}-{enricher_id}-{backend.version}.jsonl"
    cache_path = cache_dir / key
    if cache_path.exists() and not force:
        logger.info("enrichment cache hit: %s", cache_path)
        return load_sentences(cache_path), backend.version
    sentences = enrich_corpus(records, backend)
    save_sentences(sentences, cache_path)
    return sentences, backend.version


def _write_results(cell_dir: Path, rows: list[dict]) -> None:
    # one results file per cell keeps concurrent cells isolated
    with (cell_dir / "results.jsonl").open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _result_row(report: MetricsReport, config_hash: str) -> dict:
    return {
        "config_id": report.config_id,
        "config_hash": config_hash,
        "run_id": report.run_id,
        "level": report.level,
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "counts": list(report.counts),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }


def load_results(output_dir: str | Path) -> list[MetricsReport]:
    """Rebuild MetricsReports from every cell's results file."""
    reports = []
    for path in sorted(Path(output_dir).glob("cells/*/results.jsonl")):
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                reports.append(MetricsReport(
                    level=row["level"],
                    accuracy=row["accuracy"],
                    precision=row["precision"],
                    recall=row["recall"],
                    f1=row["f1"],
                    counts=tuple(row["counts"]),
                    run_id=row["run_id"],
                    config_id=row["config_id"],
                ))
    return reports


def _split_for_seed(records, seed: int, freeze_split: bool, first_seed: int):
    return split_corpus(records, first_seed if freeze_split else seed)


def run_cell(config: ExperimentConfig, select_lr: bool = False,
             freeze_split: bool = False, force: bool = False,
             deterministic: bool = False) -> dict:
    """Execute one matrix cell: five seeded runs, metrics at both levels."""
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)

    output_dir = Path(config.output_dir)
    cell_dir = output_dir / "cells" / f"{config.config_id.replace(':', '-')}-{config.config_hash}"
    manifest_path = cell_dir / "manifest.json"
    if manifest_path.exists() and not force:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("config_hash") == config.config_hash and manifest.get("completed"):
            logger.info("cell %s already complete; skipping (use force to rerun)",
                        config.config_id)
            return manifest
    cell_dir.mkdir(parents=True, exist_ok=True)

    loaded = load_corpus(config.corpus_path, config.corpus_format)
    records = loaded.records
    gold = {r.study_id: r.label for r in records}

    cache_dir = cache_dir_for(output_dir)
    sentences, enricher_version = cached_enrich(
        records, config.enricher_id, config.corpus_path, cache_dir, force=False)
    encoded = encode(sentences, config.backbone_id, config.train_config.max_len)
    by_study: dict[str, list] = {}
    for seq in encoded:
        by_study.setdefault(seq.origin[0], []).append(seq)

    chosen_lr = config.train_config.learning_rate
    manifest = {
        "config_id": config.config_id,
        "config_hash": config.config_hash,
        "config": config.declared(),
        "decisions": dict(RESOLVED_DECISIONS,
                          lr_policy="grid_selected" if select_lr else "fixed",
                          split_policy="frozen" if freeze_split else "reshuffled_per_seed"),
        "versions": {
            "eq5d_screen": __version__,
            "torch": torch.__version__,
            "enricher_pipeline": enricher_version,
        },
        "dropped_records": loaded.dropped,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "runs": [],
        "completed": False,
    }

    rows = []
    for i, seed in enumerate(config.run_seeds):
        run_dir = cell_dir / "runs" / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        split = _split_for_seed(records, seed, freeze_split, config.run_seeds[0])
        save_split(split, run_dir / "split.json")

        train_seq = [s for sid in split.train_ids for s in by_study.get(sid, [])]
        val_seq = [s for sid in split.val_ids for s in by_study.get(sid, [])]
        test_seq = [s for sid in split.test_ids for s in by_study.get(sid, [])]
        for seq in test_seq:
            if seq.label != gold[seq.origin[0]]:
                raise ValueError(
                    f"inherited label of {seq.origin} disagrees with the corpus "
                    "label; stale enrichment cache?"
                )
        run_config = dataclasses.replace(config.train_config, seed=seed,
                                         learning_rate=chosen_lr)

        if select_lr and i == 0:
            # chosen once per cell on the first seed, recorded in the manifest;
            # MIL cells reuse the sentence-level selection as a surrogate
            grid = [dataclasses.replace(run_config, learning_rate=lr)
                    for lr in LEARNING_RATE_GRID]
            chosen_lr = select_learning_rate(train_seq, val_seq, grid).learning_rate
            run_config = dataclasses.replace(run_config, learning_rate=chosen_lr)

        run_id = f"seed{seed}"
        if config.approach == "sentence_agg":
            model, history = fine_tune(train_seq, val_seq, run_config)
            model.save(run_dir / "best")
            (run_dir / "best" / "history.json").write_text(history.to_json(),
                                                           encoding="utf-8")
            preds = predict_sentences(model, test_seq)
            save_sentence_predictions(preds, run_dir / "sentence_predictions.jsonl")
            sentence_pairs = [(p.predicted_label, gold[p.study_id]) for p in preds]
            reports = [compute_metrics(sentence_pairs, "sentence", run_id,
                                       config.config_id)]
            studies = aggregate_corpus(preds)
            save_study_predictions(studies, run_dir / "study_predictions.jsonl")
            study_pairs = [(s.predicted_label, gold[s.study_id]) for s in studies]
            reports.append(compute_metrics(study_pairs, "study", run_id,
                                           config.config_id))
        else:
            train_bags = make_bags(train_seq)
            val_bags = make_bags(val_seq)
            test_bags = make_bags(test_seq)
            model, history = mil_train(train_bags, val_bags, run_config)
            model.save(run_dir / "best")
            (run_dir / "best" / "history.json").write_text(history.to_json(),
                                                           encoding="utf-8")
            preds = [mil_predict(model, bag) for bag in test_bags]
            with (run_dir / "bag_predictions.jsonl").open("w", encoding="utf-8") as fh:
                for p in preds:
                    fh.write(json.dumps({
                        "study_id": p.study_id,
                        "p_positive": p.p_positive,
                        "p_negative": p.p_negative,
                        "predicted_label": p.predicted_label,
                        "attention_weights": list(p.attention_weights),
                    }) + "\n")
            bag_pairs = [(p.predicted_label, gold[p.study_id]) for p in preds]
            reports = [compute_metrics(bag_pairs, "bag", run_id, config.config_id)]

        rows.extend(_result_row(r, config.config_hash) for r in reports)
        manifest["runs"].append({
            "run_id": run_id,
            "seed": seed,
            "learning_rate": run_config.learning_rate,
            "best_epoch": model.best_epoch,
            "best_val_f1": model.best_val_f1,
            "stop_reason": history.stop_reason,
            "split_manifest": str(run_dir / "split.json"),
        })

    manifest["decisions"]["learning_rate_used"] = chosen_lr
    manifest["completed"] = True
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    _write_results(cell_dir, rows)
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest


def run_baseline(corpus_path: str, corpus_format: str, output_dir: str | Path,
                 run_seeds=DEFAULT_SEEDS, alpha: float = 1.0) -> list[MetricsReport]:
    """Train/evaluate the bag-of-words Naive Bayes baseline per seed."""
    output_dir = Path(output_dir)
    records = load_corpus(corpus_path, corpus_format).records
    base_dir = output_dir / "cells" / BASELINE_CONFIG_ID
    base_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for seed in run_seeds:
        split = split_corpus(records, seed)
        model = bow_train(select_records(records, split.train_ids), alpha)
        save_bow_model(model, base_dir / f"model-seed{seed}.json")
        test_records = select_records(records, split.test_ids)
        pairs = [(bow_predict(model, r.abstract)[0], r.label) for r in test_records]
        reports.append(compute_metrics(pairs, "study", f"seed{seed}",
                                       BASELINE_CONFIG_ID))
    _write_results(base_dir, [_result_row(r, BASELINE_CONFIG_ID) for r in reports])
    return reports


def run_matrix(spec: MatrixSpec) -> dict:
    """Run every cell; per-cell failures are recorded, not propagated."""
    output_dir = Path(spec.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    cells = plan_matrix(spec)
    summary = {"cells": [], "failed": []}
    for cell in cells:
        try:
            manifest = run_cell(cell, select_lr=spec.select_lr,
                                freeze_split=spec.freeze_split, force=spec.force,
                                deterministic=spec.deterministic)
            summary["cells"].append({"config_id": cell.config_id, "status": "ok",
                                     "hash": manifest["config_hash"]})
        except Exception as exc:  # continue-on-error across cells
            logger.error("cell %s failed: %s", cell.config_id, exc)
            summary["failed"].append({
                "config_id": cell.config_id,
                "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc(),
            })
    if spec.include_baseline:
        try:
            run_baseline(spec.corpus_path, spec.corpus_format, output_dir,
                         spec.run_seeds)
            summary["cells"].append({"config_id": BASELINE_CONFIG_ID, "status": "ok"})
        except Exception as exc:
            logger.error("baseline failed: %s", exc)
            summary["failed"].append({"config_id": BASELINE_CONFIG_ID,
                                      "error": f"{type(exc).__name__}: {exc}",
                                      "traceback": traceback.format_exc()})
    (output_dir / "matrix_summary.json").write_text(json.dumps(summary, indent=2),
                                                    encoding="utf-8")
    return summary


def _comparison_lines(reports: list[MetricsReport]) -> list[str]:
    from .evaluation import average_runs

    grouped: dict[tuple[str, str], list[MetricsReport]] = {}
    for r in reports:
        grouped.setdefault((r.config_id, r.level), []).append(r)

    header = f"{'model':<30} {'level':<10} {'acc':>5} {'prec':>5} {'rec':>5} {'f1':>5}"
    lines = ["Summary comparison (AVG across runs)", "=" * len(header), header,
             "-" * len(header)]

    baseline_keys = [k for k in grouped if k[0] == BASELINE_CONFIG_ID]
    for key in sorted(baseline_keys):
        avg = average_runs(grouped[key])
        lines.append(f"{'Naive Bayes (BoW)':<30} {'study':<10} {avg.accuracy:>5.2f} "
                     f"{avg.precision:>5.2f} {avg.recall:>5.2f} {avg.f1:>5.2f}")
    if baseline_keys:
        lines.append("-" * len(header))

    best_study: dict[str, float] = {}
    for (config_id, level), runs in grouped.items():
        if level == "study" and config_id != BASELINE_CONFIG_ID:
            backbone = config_id.split(":")[0]
            f1 = average_runs(runs).f1
            best_study[backbone] = max(best_study.get(backbone, 0.0), f1)

    for (config_id, level) in sorted(grouped):
        if config_id == BASELINE_CONFIG_ID:
            continue
        avg = average_runs(grouped[(config_id, level)])
        marker = ""
        if level == "study":
            backbone = config_id.split(":")[0]
            if abs(avg.f1 - best_study.get(backbone, -1)) < 1e-12:
                marker = " *"
        lines.append(f"{config_id:<30} {level:<10} {avg.accuracy:>5.2f} "
                     f"{avg.precision:>5.2f} {avg.recall:>5.2f} {avg.f1:>5.2f}{marker}")
    lines.append("")
    lines.append("* best study-level F1 for that backbone")
    return lines


def report(output_dir: str | Path) -> Path:
    """Render the comparison document and per-attempt tables from the store."""
    output_dir = Path(output_dir)
    reports = load_results(output_dir)
    if not reports:
        raise ValueError(f"no results found under {output_dir}")
    report_dir = output_dir / "report"
    render_tables(reports, report_dir)
    comparison = report_dir / "comparison.txt"
    comparison.write_text("\n".join(_comparison_lines(reports)) + "\n",
                          encoding="utf-8")
    return comparison
