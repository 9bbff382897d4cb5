"""Study-level verdicts from per-sentence confidences.

A study's confidence in each class is the unweighted arithmetic mean of its
sentences' confidences; the predicted label is the class with the larger
mean, with exact ties resolving to positive (screening favors recall).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class PredictionRecord:
    """Per-sentence class confidences; p_positive + p_negative == 1."""

    study_id: str
    sentence_index: int
    p_positive: float
    p_negative: float
    predicted_label: int


@dataclass(frozen=True)
class StudyPrediction:
    study_id: str
    mean_p_positive: float
    mean_p_negative: float
    predicted_label: int
    n_sentences: int


def aggregate_study(preds: list[PredictionRecord]) -> StudyPrediction:
    """Average sentence confidences for one study and pick the argmax label."""
    if not preds:
        raise ValueError("cannot aggregate an empty prediction list")
    study_ids = {p.study_id for p in preds}
    if len(study_ids) != 1:
        raise ValueError(f"mixed study_ids in one aggregation call: {sorted(study_ids)}")
    n = len(preds)
    mean_pos = math.fsum(p.p_positive for p in preds) / n
    mean_neg = math.fsum(p.p_negative for p in preds) / n
    return StudyPrediction(
        study_id=preds[0].study_id,
        mean_p_positive=mean_pos,
        mean_p_negative=mean_neg,
        predicted_label=1 if mean_pos >= mean_neg else 0,
        n_sentences=n,
    )


def aggregate_corpus(preds: list[PredictionRecord]) -> list[StudyPrediction]:
    """One StudyPrediction per distinct study_id, ordered by study_id."""
    grouped: dict[str, list[PredictionRecord]] = {}
    for p in preds:
        grouped.setdefault(p.study_id, []).append(p)
    return [aggregate_study(grouped[sid]) for sid in sorted(grouped)]


def save_study_predictions(predictions, path: str | Path) -> None:
    """One JSON record per line: study id, mean confidences, label."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps({
                "study_id": p.study_id,
                "mean_p_positive": p.mean_p_positive,
                "mean_p_negative": p.mean_p_negative,
                "predicted_label": p.predicted_label,
                "n_sentences": p.n_sentences,
            }) + "\n")


def load_study_predictions(path: str | Path) -> list[StudyPrediction]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            out.append(StudyPrediction(
                study_id=row["study_id"],
                mean_p_positive=float(row["mean_p_positive"]),
                mean_p_negative=float(row["mean_p_negative"]),
                predicted_label=int(row["predicted_label"]),
                n_sentences=int(row["n_sentences"]),
            ))
    return out


def save_sentence_predictions(predictions, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps({
                "study_id": p.study_id,
                "sentence_index": p.sentence_index,
                "p_positive": p.p_positive,
                "p_negative": p.p_negative,
                "predicted_label": p.predicted_label,
            }) + "\n")


def load_sentence_predictions(path: str | Path) -> list[PredictionRecord]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            out.append(PredictionRecord(
                study_id=row["study_id"],
                sentence_index=int(row["sentence_index"]),
                p_positive=float(row["p_positive"]),
                p_negative=float(row["p_negative"]),
                predicted_label=int(row["predicted_label"]),
            ))
    return out
