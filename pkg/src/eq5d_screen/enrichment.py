"""Sentence segmentation, biomedical entity extraction, and enriched-string rendering.

An enriched sentence is the raw sentence followed by a bracketed suffix
listing every extracted mention::

    <sentence> [ENTS: surface|TAG; surface|TAG; ...]

Sentences with no mentions are emitted unchanged. Duplicate surfaces are kept
as separate mentions, in order of appearance.

Backends: ``sci_sm`` / ``sci_md`` / ``sci_scibert`` bind to external scispaCy
pipelines (optional dependency); ``test_regex`` is a dependency-free
deterministic backend for tests and smoke runs. A backend instance must not
be shared across concurrent workers unless its binding is reentrant.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import StudyRecord
from .errors import ConfigurationError

logger = logging.getLogger(__name__)

SUFFIX_OPEN = " [ENTS: "
SUFFIX_CLOSE = "]"
ITEM_SEPARATOR = "; "
DEFAULT_ENTITY_TAG = "ENTITY"

SCISPACY_BACKEND_IDS = ("sci_sm", "sci_md", "sci_scibert")


@dataclass(frozen=True)
class EntityMention:
    """A mention located at ``span`` (character offsets) within its sentence."""

    surface: str
    entity_label: str
    span: tuple[int, int]


@dataclass(frozen=True)
class EnrichedSentence:
    study_id: str
    sentence_index: int
    raw_text: str
    entities: tuple[EntityMention, ...]
    enriched_text: str
    inherited_label: int


def validate_mentions(raw_text: str, entities) -> None:
    for ent in entities:
        start, end = ent.span
        if not (0 <= start < end <= len(raw_text)):
            raise ValueError(
                f"mention span {ent.span} out of bounds for sentence of length {len(raw_text)}"
            )
        if raw_text[start:end] != ent.surface:
            raise ValueError(
                f"mention surface {ent.surface!r} does not match sentence slice "
                f"{raw_text[start:end]!r} at {ent.span}"
            )


def render_enriched(raw_text: str, entities) -> str:
    """Append the bracketed mention suffix; zero mentions leave the text unchanged."""
    entities = tuple(entities)
    validate_mentions(raw_text, entities)
    if not entities:
        return raw_text
    items = ITEM_SEPARATOR.join(f"{e.surface}|{e.entity_label}" for e in entities)
    return f"{raw_text}{SUFFIX_OPEN}{items}{SUFFIX_CLOSE}"


class RegexBackend:
    """Deterministic test backend: splits sentences on ". " and matches
    entities against a configurable regex pattern list."""

    backend_id = "test_regex"
    version = "builtin-1"

    def __init__(self, patterns=("EQ-5D",)):
        self.patterns = tuple(patterns)
        self._compiled = [re.compile(p) for p in self.patterns]

    def segment(self, abstract: str) -> list[str]:
        parts = abstract.split(". ")
        sentences = []
        for i, part in enumerate(parts):
            part = part.strip()
            if not part:
                continue
            if i < len(parts) - 1:
                part += "."
            sentences.append(part)
        return sentences

    def entities(self, sentence: str) -> list[EntityMention]:
        mentions = [
            EntityMention(m.group(0), DEFAULT_ENTITY_TAG, (m.start(), m.end()))
            for pat in self._compiled
            for m in pat.finditer(sentence)
        ]
        mentions.sort(key=lambda e: e.span)
        return mentions


class ScispacyBackend:
    """Binding to an external scispaCy pipeline named in the backend registry."""

    def __init__(self, backend_id: str, pipeline_name: str):
        self.backend_id = backend_id
        self.pipeline_name = pipeline_name
        try:
            import spacy
        except ImportError as exc:
            raise ConfigurationError(
                f"backend {backend_id!r} needs spacy+scispacy and the "
                f"{pipeline_name!r} pipeline installed"
            ) from exc
        try:
            self._nlp = spacy.load(pipeline_name)
        except OSError as exc:
            raise ConfigurationError(
                f"backend {backend_id!r}: pipeline {pipeline_name!r} is not installed"
            ) from exc
        self.version = str(self._nlp.meta.get("version", "unknown"))

    def segment(self, abstract: str) -> list[str]:
        doc = self._nlp(abstract)
        return [sent.text.strip() for sent in doc.sents if sent.text.strip()]

    def entities(self, sentence: str) -> list[EntityMention]:
        doc = self._nlp(sentence)
        mentions = [
            EntityMention(ent.text, ent.label_, (ent.start_char, ent.end_char))
            for ent in doc.ents
        ]
        mentions.sort(key=lambda e: e.span)
        return mentions


def backend_registry() -> dict[str, str]:
    """Backend id -> external pipeline name, from the packaged registry file."""
    text = resources.files("eq5d_screen.data").joinpath("enrichers.json").read_text("utf-8")
    return json.loads(text)


def get_backend(backend_id: str, patterns=None):
    """Resolve a backend id to a live backend instance."""
    if backend_id == RegexBackend.backend_id:
        return RegexBackend(patterns) if patterns is not None else RegexBackend()
    registry = backend_registry()
    if backend_id not in registry:
        known = sorted([*registry, RegexBackend.backend_id])
        raise ConfigurationError(f"unknown enricher backend {backend_id!r}; known: {known}")
    return ScispacyBackend(backend_id, registry[backend_id])


def segment_abstract(abstract: str, backend) -> list[str]:
    """Split an abstract into sentences, preserving order and content."""
    if not abstract.strip():
        raise ValueError("abstract is empty")
    return backend.segment(abstract)


def extract_entities(sentence: str, backend) -> list[EntityMention]:
    """Mentions in the sentence, ordered by start offset, duplicates retained."""
    if not sentence.strip():
        raise ValueError("sentence is empty")
    return backend.entities(sentence)


def enrich_study(record: StudyRecord, backend) -> list[EnrichedSentence]:
    """Segment, extract, and render every sentence of one study's abstract."""
    sentences = segment_abstract(record.abstract, backend)
    enriched = []
    for index, raw in enumerate(sentences):
        mentions = tuple(extract_entities(raw, backend))
        enriched.append(
            EnrichedSentence(
                study_id=record.study_id,
                sentence_index=index,
                raw_text=raw,
                entities=mentions,
                enriched_text=render_enriched(raw, mentions),
                inherited_label=record.label,
            )
        )
    return enriched


def enrich_corpus(records, backend) -> list[EnrichedSentence]:
    out: list[EnrichedSentence] = []
    for record in records:
        out.extend(enrich_study(record, backend))
    return out


class SentenceEnricher(BaseEstimator, TransformerMixin):
    """Estimator-style wrapper: ``transform`` maps study records to enriched
    sentences. Stateless apart from the backend binding; ``fit`` only resolves it."""

    def __init__(self, backend_id: str = "test_regex", patterns=None):
        self.backend_id = backend_id
        self.patterns = patterns

    def fit(self, records=None, y=None):
        self.backend_ = get_backend(self.backend_id, self.patterns)
        return self

    def transform(self, records) -> list[EnrichedSentence]:
        if not hasattr(self, "backend_"):
            self.fit()
        return enrich_corpus(records, self.backend_)


def save_sentences(sentences, path: str | Path) -> None:
    """Write the enrichment cache: one JSON record per sentence."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(json.dumps({
                "study_id": s.study_id,
                "sentence_index": s.sentence_index,
                "raw_text": s.raw_text,
                "entities": [
                    {"surface": e.surface, "entity_label": e.entity_label,
                     "span": list(e.span)}
                    for e in s.entities
                ],
                "enriched_text": s.enriched_text,
                "inherited_label": s.inherited_label,
            }) + "\n")


def load_sentences(path: str | Path) -> list[EnrichedSentence]:
    sentences = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            sentences.append(EnrichedSentence(
                study_id=row["study_id"],
                sentence_index=int(row["sentence_index"]),
                raw_text=row["raw_text"],
                entities=tuple(
                    EntityMention(e["surface"], e["entity_label"], tuple(e["span"]))
                    for e in row["entities"]
                ),
                enriched_text=row["enriched_text"],
                inherited_label=int(row["inherited_label"]),
            ))
    return sentences
