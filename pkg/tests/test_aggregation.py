import numpy as np
import pytest

from eq5d_screen.aggregation import (
    PredictionRecord,
    aggregate_corpus,
    aggregate_study,
    load_sentence_predictions,
    load_study_predictions,
    save_sentence_predictions,
    save_study_predictions,
)


def pred(p_pos, study="s1", index=0):
    return PredictionRecord(study_id=study, sentence_index=index,
                            p_positive=p_pos, p_negative=1.0 - p_pos,
                            predicted_label=1 if p_pos >= 0.5 else 0)


def brute_force(preds):
    """Independent oracle: plain accumulation and explicit comparison."""
    total_pos = 0.0
    total_neg = 0.0
    for p in preds:
        total_pos = total_pos + p.p_positive
        total_neg = total_neg + p.p_negative
    mean_pos = total_pos / len(preds)
    mean_neg = total_neg / len(preds)
    if mean_pos > mean_neg:
        label = 1
    elif mean_pos < mean_neg:
        label = 0
    else:
        label = 1  # tie resolves positive
    return mean_pos, mean_neg, label


class TestAggregateStudy:
    def test_single_sentence(self):
        result = aggregate_study([pred(0.9)])
        assert result.mean_p_positive == pytest.approx(0.9)
        assert result.mean_p_negative == pytest.approx(0.1)
        assert result.predicted_label == 1
        assert result.n_sentences == 1

    def test_two_sentences_hand_arithmetic(self):
        result = aggregate_study([pred(0.6, index=0), pred(0.2, index=1)])
        assert result.mean_p_positive == pytest.approx(0.4)
        assert result.mean_p_negative == pytest.approx(0.6)
        assert result.predicted_label == 0

    def test_exact_tie_resolves_positive(self):
        result = aggregate_study([pred(0.7, index=0), pred(0.3, index=1)])
        assert result.mean_p_positive == pytest.approx(0.5)
        assert result.predicted_label == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_study([])

    def test_mixed_studies_rejected(self):
        with pytest.raises(ValueError, match="mixed"):
            aggregate_study([pred(0.5, study="a"), pred(0.5, study="b")])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        preds = [pred(float(rng.uniform()), index=i) for i in range(8)]
        shuffled = [preds[i] for i in rng.permutation(len(preds))]
        a = aggregate_study(preds)
        b = aggregate_study(shuffled)
        assert a.mean_p_positive == b.mean_p_positive
        assert a.mean_p_negative == b.mean_p_negative
        assert a.predicted_label == b.predicted_label

    def test_mean_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            preds = [pred(float(rng.uniform()), index=i) for i in range(n)]
            result = aggregate_study(preds)
            values = [p.p_positive for p in preds]
            assert min(values) - 1e-12 <= result.mean_p_positive <= max(values) + 1e-12

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            n = int(rng.integers(1, 9))
            preds = [pred(float(rng.uniform()), index=i) for i in range(n)]
            result = aggregate_study(preds)
            mean_pos, mean_neg, label = brute_force(preds)
            assert abs(result.mean_p_positive - mean_pos) <= 1e-12
            assert abs(result.mean_p_negative - mean_neg) <= 1e-12
            assert result.predicted_label == label


class TestAggregateCorpus:
    def test_empty(self):
        assert aggregate_corpus([]) == []

    def test_three_studies(self):
        preds = [pred(0.9, study="b"), pred(0.2, study="a"), pred(0.6, study="c"),
                 pred(0.8, study="a", index=1)]
        out = aggregate_corpus(preds)
        assert [s.study_id for s in out] == ["a", "b", "c"]
        assert out[0].n_sentences == 2

    def test_shuffle_invariant(self):
        rng = np.random.default_rng(9)
        preds = [pred(float(rng.uniform()), study=f"s{i % 5}", index=i)
                 for i in range(40)]
        shuffled = [preds[i] for i in rng.permutation(len(preds))]
        assert aggregate_corpus(preds) == aggregate_corpus(shuffled)


class TestPersistence:
    def test_study_roundtrip(self, tmp_path):
        studies = aggregate_corpus([pred(0.9, study="a"), pred(0.4, study="b")])
        path = tmp_path / "studies.jsonl"
        save_study_predictions(studies, path)
        assert load_study_predictions(path) == studies

    def test_sentence_roundtrip(self, tmp_path):
        preds = [pred(0.25, study="a", index=i) for i in range(3)]
        path = tmp_path / "sents.jsonl"
        save_sentence_predictions(preds, path)
        assert load_sentence_predictions(path) == preds
