import numpy as np
import pytest

from eq5d_screen.corpus import StudyRecord
from eq5d_screen.enrichment import (
    EntityMention,
    RegexBackend,
    SentenceEnricher,
    enrich_study,
    extract_entities,
    get_backend,
    load_sentences,
    render_enriched,
    save_sentences,
    segment_abstract,
)
from eq5d_screen.errors import ConfigurationError

EXAMPLE_SENTENCE = (
    "This index was found to be highly correlated with a measure of health "
    "(EQ-5D) and wellbeing (global QoL), although some differences were apparent."
)
EXAMPLE_SURFACES = ["correlated", "measure", "health", "EQ-5D", "wellbeing",
                    "global", "QoL", "apparent"]
EXAMPLE_ENRICHED = (
    EXAMPLE_SENTENCE
    + " [ENTS: correlated|ENTITY; measure|ENTITY; health|ENTITY; EQ-5D|ENTITY; "
    + "wellbeing|ENTITY; global|ENTITY; QoL|ENTITY; apparent|ENTITY]"
)


def mention_at(sentence, surface, occurrence=0):
    start = -1
    for _ in range(occurrence + 1):
        start = sentence.index(surface, start + 1)
    return EntityMention(surface, "ENTITY", (start, start + len(surface)))


def example_mentions():
    return [mention_at(EXAMPLE_SENTENCE, s) for s in EXAMPLE_SURFACES]


class TestRenderEnriched:
    def test_reference_example_byte_exact(self):
        assert render_enriched(EXAMPLE_SENTENCE, example_mentions()) == EXAMPLE_ENRICHED
        assert EXAMPLE_ENRICHED.endswith("global|ENTITY; QoL|ENTITY; apparent|ENTITY]")

    def test_no_entities_identity(self):
        for text in ["EQ-5D was used.", "", "a b c", " spaced  out "]:
            assert render_enriched(text, []) == text

    def test_single_mention(self):
        text = "EQ-5D was used."
        mention = EntityMention("EQ-5D", "ENTITY", (0, 5))
        assert render_enriched(text, [mention]) == "EQ-5D was used. [ENTS: EQ-5D|ENTITY]"

    def test_surface_mismatch_rejected(self):
        with pytest.raises(ValueError, match="surface"):
            render_enriched("abcdef", [EntityMention("zzz", "ENTITY", (0, 3))])

    def test_out_of_bounds_span_rejected(self):
        with pytest.raises(ValueError, match="span"):
            render_enriched("short", [EntityMention("short", "ENTITY", (0, 99))])

    def test_format_roundtrip_property(self):
        rng = np.random.default_rng(0)
        words = ["alpha", "beta", "gamma", "delta", "health", "eq5d"]
        for _ in range(50):
            n_words = int(rng.integers(3, 10))
            chosen = [words[i] for i in rng.integers(0, len(words), n_words)]
            sentence = " ".join(chosen) + "."
            n_ents = int(rng.integers(1, 4))
            mentions = []
            for _ in range(n_ents):
                surface = chosen[int(rng.integers(0, len(chosen)))]
                mentions.append(mention_at(sentence, surface))
            mentions.sort(key=lambda m: m.span)
            rendered = render_enriched(sentence, mentions)
            assert rendered.startswith(sentence)
            suffix = rendered[len(sentence) + len(" [ENTS: "):-1]
            items = suffix.split("; ")
            assert len(items) == len(mentions)
            assert all(item.count("|") == 1 for item in items)


class TestSegmentation:
    def test_two_sentences(self):
        backend = RegexBackend()
        assert segment_abstract("A. B.", backend) == ["A.", "B."]

    def test_single_sentence_identity(self):
        backend = RegexBackend()
        text = "One sentence without internal boundaries."
        assert segment_abstract(text, backend) == [text]

    def test_reference_sentence_stays_whole(self):
        backend = RegexBackend()
        assert segment_abstract(EXAMPLE_SENTENCE, backend) == [EXAMPLE_SENTENCE]

    def test_empty_abstract_rejected(self):
        with pytest.raises(ValueError):
            segment_abstract("   ", RegexBackend())

    def test_reconstruction_modulo_whitespace(self):
        rng = np.random.default_rng(1)
        words = ["alpha", "beta", "gamma", "delta"]
        for _ in range(30):
            n_sent = int(rng.integers(1, 6))
            sentences = [
                " ".join(words[i] for i in rng.integers(0, len(words), 4)) + "."
                for _ in range(n_sent)
            ]
            abstract = " ".join(sentences)
            segmented = segment_abstract(abstract, RegexBackend())
            assert " ".join(segmented).split() == abstract.split()


class TestExtractEntities:
    def test_no_match_empty(self):
        assert extract_entities("nothing biomedical here", RegexBackend()) == []

    def test_duplicate_mentions_kept(self):
        sentence = "EQ-5D improved EQ-5D scores"
        mentions = extract_entities(sentence, RegexBackend())
        assert [m.span for m in mentions] == [(0, 5), (15, 20)]
        assert all(m.surface == "EQ-5D" for m in mentions)
        assert all(m.entity_label == "ENTITY" for m in mentions)

    def test_multiple_patterns_ordered_by_offset(self):
        backend = RegexBackend(patterns=("health", "EQ-5D"))
        mentions = extract_entities("health (EQ-5D) and wellbeing", backend)
        assert [m.surface for m in mentions] == ["health", "EQ-5D"]
        assert mentions[0].span[0] < mentions[1].span[0]

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError):
            extract_entities("", RegexBackend())


class TestEnrichStudy:
    def record(self, abstract, label=1):
        return StudyRecord("s1", "t", abstract, (), label)

    def test_indices_dense_and_label_propagated(self):
        record = self.record("One. Two. Three. Four. Five.", label=1)
        sentences = enrich_study(record, RegexBackend())
        assert [s.sentence_index for s in sentences] == [0, 1, 2, 3, 4]
        assert all(s.inherited_label == 1 for s in sentences)
        assert all(s.study_id == "s1" for s in sentences)

    def test_negative_label_propagated(self):
        record = self.record("One. Two.", label=0)
        assert all(s.inherited_label == 0 for s in enrich_study(record, RegexBackend()))

    def test_enriched_text_begins_with_raw(self):
        record = self.record("EQ-5D used here. Plain sentence.")
        for s in enrich_study(record, RegexBackend()):
            assert s.enriched_text.startswith(s.raw_text)

    def test_deterministic_across_runs(self):
        record = self.record("EQ-5D was measured. Results improved. EQ-5D again.")
        first = enrich_study(record, RegexBackend())
        second = enrich_study(record, RegexBackend())
        assert [s.enriched_text for s in first] == [s.enriched_text for s in second]


class TestBackendsAndCache:
    def test_unknown_backend_named_in_error(self):
        with pytest.raises(ConfigurationError, match="no_such"):
            get_backend("no_such")

    def test_scispacy_missing_raises_configuration_error(self):
        try:
            import spacy  # noqa: F401
            pytest.skip("spacy installed")
        except ImportError:
            pass
        with pytest.raises(ConfigurationError, match="sci_sm"):
            get_backend("sci_sm")

    def test_cache_roundtrip(self, tmp_path):
        record = StudyRecord("s1", "t", "EQ-5D was measured. Plain text.", (), 1)
        sentences = enrich_study(record, RegexBackend())
        path = tmp_path / "cache.jsonl"
        save_sentences(sentences, path)
        assert load_sentences(path) == sentences

    def test_enricher_estimator(self):
        records = [StudyRecord("s1", "t", "EQ-5D here. And there.", (), 1)]
        enricher = SentenceEnricher(backend_id="test_regex")
        sentences = enricher.fit(records).transform(records)
        assert len(sentences) == 2
        assert enricher.get_params()["backend_id"] == "test_regex"
