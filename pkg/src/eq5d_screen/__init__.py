"""Screening biomedical abstracts for EQ-5D mentions.

Two routes from an abstract to a study-level verdict: (1) fine-tune a
transformer on entity-enriched sentences and average per-sentence
confidences, or (2) treat the abstract as a bag of enriched sentences and
train attention pooling end to end. A bag-of-words Naive Bayes baseline and
an experiment-matrix runner round out the pipeline.
"""

__version__ = "0.1.0"

from .aggregation import (
    PredictionRecord,
    StudyPrediction,
    aggregate_corpus,
    aggregate_study,
)
from .baselines import BowNaiveBayes, bow_predict, bow_train
from .classifier import (
    SentenceClassifier,
    TrainConfig,
    TrainedModel,
    TrainHistory,
    fine_tune,
    predict_sentences,
    select_learning_rate,
)
from .corpus import (
    DatasetSplit,
    LoadedCorpus,
    StudyRecord,
    load_corpus,
    split_corpus,
)
from .encoding import (
    BatchPlan,
    EncodedSequence,
    SequenceEncoder,
    encode,
    iterate_batches,
)
from .enrichment import (
    EnrichedSentence,
    EntityMention,
    SentenceEnricher,
    enrich_study,
    extract_entities,
    render_enriched,
    segment_abstract,
)
from .evaluation import (
    AveragedReport,
    MetricsReport,
    average_runs,
    compute_metrics,
    render_tables,
)
from .mil import (
    AttentionPoolParams,
    Bag,
    BagPrediction,
    MilClassifier,
    attention_pool,
    embed_instances,
    make_bags,
    mil_predict,
    mil_train,
)
from .runner import ExperimentConfig, MatrixSpec, plan_matrix, report, run_matrix

__all__ = [
    "AttentionPoolParams",
    "AveragedReport",
    "Bag",
    "BagPrediction",
    "BatchPlan",
    "BowNaiveBayes",
    "DatasetSplit",
    "EncodedSequence",
    "EnrichedSentence",
    "EntityMention",
    "ExperimentConfig",
    "LoadedCorpus",
    "MatrixSpec",
    "MetricsReport",
    "MilClassifier",
    "PredictionRecord",
    "SentenceClassifier",
    "SentenceEnricher",
    "SequenceEncoder",
    "StudyPrediction",
    "StudyRecord",
    "TrainConfig",
    "TrainHistory",
    "TrainedModel",
    "aggregate_corpus",
    "aggregate_study",
    "attention_pool",
    "average_runs",
    "bow_predict",
    "bow_train",
    "compute_metrics",
    "embed_instances",
    "encode",
    "enrich_study",
    "extract_entities",
    "fine_tune",
    "iterate_batches",
    "load_corpus",
    "make_bags",
    "mil_predict",
    "mil_train",
    "plan_matrix",
    "predict_sentences",
    "render_enriched",
    "render_tables",
    "report",
    "run_matrix",
    "segment_abstract",
    "select_learning_rate",
    "split_corpus",
]
