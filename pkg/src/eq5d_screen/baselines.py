"""Bag-of-words multinomial Naive Bayes over raw abstracts, the classical
study-level comparison baseline.

Preprocessing is the most standard configuration: lowercase, strip
punctuation, whitespace tokens, Laplace smoothing (alpha=1), abstract text
only. The vocabulary comes from training abstracts alone; unseen query
tokens are ignored. Ties resolve to positive, matching the aggregation rule.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

from sklearn.base import BaseEstimator, ClassifierMixin

_PUNCT = re.compile(r"[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass
class BowModel:
    """Vocabulary, class log-priors, and smoothed per-class token
    log-likelihoods. In probability space each class's likelihoods sum to 1
    over the vocabulary. Raw token counts are kept for inspection."""

    vocabulary: dict[str, int]
    log_priors: dict[int, float]
    log_likelihoods: dict[int, list[float]]
    alpha: float
    token_counts: dict[int, list[int]]


def bow_train(records, alpha: float = 1.0) -> BowModel:
    """Fit the model on training abstracts; deterministic."""
    if alpha <= 0:
        raise ValueError("alpha must be positive: zero smoothing gives unseen "
                         "tokens zero probability")
    records = list(records)
    if not records:
        raise ValueError("training set is empty")
    labels = {r.label for r in records}
    if labels != {0, 1}:
        raise ValueError(f"training set must contain both classes, got labels {sorted(labels)}")

    vocabulary: dict[str, int] = {}
    for record in records:
        for token in tokenize(record.abstract):
            if token not in vocabulary:
                vocabulary[token] = len(vocabulary)

    counts = {0: [0] * len(vocabulary), 1: [0] * len(vocabulary)}
    docs = {0: 0, 1: 0}
    for record in records:
        docs[record.label] += 1
        row = counts[record.label]
        for token in tokenize(record.abstract):
            row[vocabulary[token]] += 1

    n = len(records)
    log_priors = {c: math.log(docs[c] / n) for c in (0, 1)}
    log_likelihoods = {}
    for c in (0, 1):
        total = sum(counts[c]) + alpha * len(vocabulary)
        log_likelihoods[c] = [math.log((k + alpha) / total) for k in counts[c]]
    return BowModel(vocabulary=vocabulary, log_priors=log_priors,
                    log_likelihoods=log_likelihoods, alpha=alpha,
                    token_counts=counts)


def bow_score(model: BowModel, abstract: str) -> dict[int, float]:
    """Per-class log-posterior scores; out-of-vocabulary tokens are skipped."""
    scores = dict(model.log_priors)
    for token in tokenize(abstract):
        idx = model.vocabulary.get(token)
        if idx is None:
            continue
        for c in (0, 1):
            scores[c] += model.log_likelihoods[c][idx]
    return scores


def bow_predict(model: BowModel, abstract: str) -> tuple[int, dict[int, float]]:
    """Predicted label (tie -> positive) plus the per-class log scores."""
    scores = bow_score(model, abstract)
    return (1 if scores[1] >= scores[0] else 0), scores


def save_bow_model(model: BowModel, path: str | Path) -> None:
    """Persist vocabulary, counts, and probabilities as inspectable text."""
    payload = {
        "alpha": model.alpha,
        "vocabulary": model.vocabulary,
        "log_priors": {str(c): v for c, v in model.log_priors.items()},
        "log_likelihoods": {str(c): v for c, v in model.log_likelihoods.items()},
        "token_counts": {str(c): v for c, v in model.token_counts.items()},
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_bow_model(path: str | Path) -> BowModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return BowModel(
        vocabulary=payload["vocabulary"],
        log_priors={int(c): v for c, v in payload["log_priors"].items()},
        log_likelihoods={int(c): v for c, v in payload["log_likelihoods"].items()},
        alpha=payload["alpha"],
        token_counts={int(c): v for c, v in payload["token_counts"].items()},
    )


class BowNaiveBayes(BaseEstimator, ClassifierMixin):
    """sklearn-style face of the baseline: fit on study records, predict 0/1
    labels for abstracts."""

    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def fit(self, records, y=None):
        self.model_ = bow_train(records, self.alpha)
        return self

    def predict(self, abstracts) -> list[int]:
        return [bow_predict(self.model_, a)[0] for a in abstracts]

    def score_records(self, records) -> list[tuple[int, dict[int, float]]]:
        return [bow_predict(self.model_, r.abstract) for r in records]
