"""Multi-criteria document screening: corpora, features, models, ensembles.

The library trains and compares four architectures for deciding whether an
article satisfies a conjunction of gating criteria (publication format,
topic, study purpose, methodological rigor): a single integrated model on
the conjunction label, a sequential cascade of per-criterion filters, an
AND-combined conjunction ensemble, and per-criterion networks fused by a
learned combiner.  The ``litscreen`` command line wraps the experimental
protocol: imbalance-aware sampling, hashed n-gram features with optional
publication-type tags, stratified k-fold cross-validation with
micro-averaged metrics, and fixed-recall operating points.
"""

from .baselines import Baseline, compare_to_baseline, load_baselines
from .corpus import (
    CRITERIA,
    Article,
    Corpus,
    CorpusError,
    CriteriaSpec,
    CriterionRatings,
    Format,
    Purpose,
    StopRule,
    TriState,
    default_positive_spec,
    del_fiol_subset_spec,
    derive_label,
    derive_labels,
    filter_subset,
    load_corpus,
    write_corpus,
)
from .ensembles import (
    ARCHITECTURES,
    CascadeClassifier,
    ConjunctionEnsembleClassifier,
    EmbeddingCombinerClassifier,
    IntegratedClassifier,
    StageDecision,
    TaskSpec,
    TaskStage,
    derived_seed,
    load_ensemble,
    save_ensemble,
)
from .evaluation import (
    ConfusionCounts,
    EvalReport,
    FoldResult,
    OperatingPoint,
    StageLabelMetrics,
    StageReport,
    cross_validate,
    error_rate_reduction,
    f_measure,
    fix_recall,
    per_stage_report,
    prf,
    stratified_kfold,
)
from .features import FeatureVector, HashingFeaturizer, LengthStats, corpus_length_stats
from .models import (
    LogisticClassifier,
    MlpClassifier,
    TrainingError,
    grad_check,
    load_model,
    save_model,
)
from .pubmed import (
    EutilsTransport,
    FetchFailure,
    FetchRecord,
    FixtureTransport,
    fetch_articles,
    records_to_articles,
)
from .sampling import SamplingPlan, balanced_stage_sample, resample
from .synth import SynthConfig, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # corpus
    "CRITERIA",
    "Article",
    "Corpus",
    "CorpusError",
    "CriteriaSpec",
    "CriterionRatings",
    "Format",
    "Purpose",
    "StopRule",
    "TriState",
    "default_positive_spec",
    "del_fiol_subset_spec",
    "derive_label",
    "derive_labels",
    "filter_subset",
    "load_corpus",
    "write_corpus",
    # synthetic corpora
    "SynthConfig",
    "generate_synthetic",
    # features
    "FeatureVector",
    "HashingFeaturizer",
    "LengthStats",
    "corpus_length_stats",
    # sampling
    "SamplingPlan",
    "balanced_stage_sample",
    "resample",
    # models
    "LogisticClassifier",
    "MlpClassifier",
    "TrainingError",
    "grad_check",
    "load_model",
    "save_model",
    # ensembles
    "ARCHITECTURES",
    "CascadeClassifier",
    "ConjunctionEnsembleClassifier",
    "EmbeddingCombinerClassifier",
    "IntegratedClassifier",
    "StageDecision",
    "TaskSpec",
    "TaskStage",
    "derived_seed",
    "load_ensemble",
    "save_ensemble",
    # evaluation
    "ConfusionCounts",
    "EvalReport",
    "FoldResult",
    "OperatingPoint",
    "StageLabelMetrics",
    "StageReport",
    "cross_validate",
    "error_rate_reduction",
    "f_measure",
    "fix_recall",
    "per_stage_report",
    "prf",
    "stratified_kfold",
    # fetching
    "EutilsTransport",
    "FetchFailure",
    "FetchRecord",
    "FixtureTransport",
    "fetch_articles",
    "records_to_articles",
    # baselines
    "Baseline",
    "compare_to_baseline",
    "load_baselines",
]
