"""Shared fixtures: synthetic corpora with a planted marker sentence.

Positive studies contain exactly one sentence mentioning the marker term;
negative studies are filler only. With weak sentence labels this is
learnable by a small randomly initialized encoder, which makes end-to-end
smoke runs possible without downloads.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from eq5d_screen.corpus import StudyRecord
from eq5d_screen.encoding import encode
from eq5d_screen.enrichment import RegexBackend, enrich_corpus

MARKER = "eq5d"

# a small closed set of neutral sentences keeps their label statistics tight,
# so the study-level signal comes from the single marker sentence alone
FILLER_SENTENCES = (
    "Patients were recruited from the outpatient clinic.",
    "Baseline characteristics were recorded at the first visit.",
    "Followup assessments took place after twelve weeks.",
    "The cohort included adults with chronic disease.",
    "Outcomes were compared between treatment groups.",
    "Survey responses were collected by trained staff.",
    "Statistical analyses used standard regression models.",
    "Participants provided written informed consent.",
)

MARKER_SENTENCE = f"The {MARKER} instrument was administered to all participants."


def make_filler_sentence(rng: np.random.Generator) -> str:
    return FILLER_SENTENCES[int(rng.integers(0, len(FILLER_SENTENCES)))]


def make_marker_sentence(rng: np.random.Generator) -> str:
    return MARKER_SENTENCE


def make_marker_records(n_pos: int, n_neg: int, seed: int = 0,
                        fillers_per_study: int = 1) -> list[StudyRecord]:
    """Positive studies: one marker sentence among ``fillers_per_study``
    fillers. Negative studies carry two extra fillers, which keeps the
    sentence-level F1 optimum aligned with calibrated filler confidences."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_pos):
        sentences = [make_filler_sentence(rng) for _ in range(fillers_per_study)]
        sentences.insert(int(rng.integers(0, fillers_per_study + 1)),
                         make_marker_sentence(rng))
        records.append(StudyRecord(
            study_id=f"pos-{i:03d}", title=f"positive study {i}",
            abstract=" ".join(sentences), keywords=(), label=1,
        ))
    for i in range(n_neg):
        sentences = [make_filler_sentence(rng) for _ in range(fillers_per_study + 2)]
        records.append(StudyRecord(
            study_id=f"neg-{i:03d}", title=f"negative study {i}",
            abstract=" ".join(sentences), keywords=(), label=0,
        ))
    return records


def encode_records(records, max_len: int = 32):
    """Enrich with the regex test backend (marker as the entity pattern) and
    encode with the mini tokenizer."""
    backend = RegexBackend(patterns=(MARKER,))
    sentences = enrich_corpus(records, backend)
    return encode(sentences, "mini", max_len)


def sequences_for(records, encoded, ids):
    wanted = set(ids)
    return [s for s in encoded if s.origin[0] in wanted]


def write_corpus_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "study_id": r.study_id,
                "title": r.title,
                "abstract": r.abstract,
                "keywords": list(r.keywords),
                "label": r.label,
            }) + "\n")


@pytest.fixture
def marker_records():
    return make_marker_records(n_pos=12, n_neg=12, seed=7)


@pytest.fixture
def marker_corpus_path(tmp_path, marker_records):
    path = tmp_path / "corpus.jsonl"
    write_corpus_jsonl(marker_records, path)
    return path
