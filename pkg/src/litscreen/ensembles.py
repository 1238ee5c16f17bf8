"""Four architectures for screening articles against a criterion conjunction.

* ``IntegratedClassifier``: one model trained directly on the conjunction
  label (positive iff every criterion is accepted).
* ``CascadeClassifier``: one model per criterion applied in sequence; an
  article rejected at a stage skips all later stages.  Stage training pools
  are filtered by the *upstream* stages (gold ratings by default, predicted
  decisions optionally), mirroring how the stage will be used at inference.
* ``ConjunctionEnsembleClassifier``: one model per criterion, each trained
  on the full training split (minus articles unrated for that criterion);
  the final label is the AND of all stage decisions.
* ``EmbeddingCombinerClassifier``: per-criterion MLPs whose hidden-layer
  embeddings are concatenated and fed to a small feed-forward combiner;
  the combiner and the stage hidden layers are then trained jointly,
  end-to-end, on the conjunction label.

All architectures share one featurizer, derive their stage labels from gold
ratings, rebalance training pools 1:1 by default, and are deterministic in
``seed``.  ``fit``/``predict`` accept article sequences; precomputed feature
matrices can be passed via ``features=`` to avoid re-hashing in folded
evaluation (they must align row-for-row with the articles).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.exceptions import NotFittedError

from .corpus import (
    CRITERIA,
    Article,
    CriteriaSpec,
    CriterionRatings,
    default_positive_spec,
    derive_labels,
)
from .features import HashingFeaturizer
from .models import (
    LogisticClassifier,
    MlpClassifier,
    TrainingError,
    _activation,
    bce_from_logits,
    check_labels,
)
from .sampling import SamplingPlan, balanced_stage_sample, resample

__all__ = [
    "TaskStage",
    "TaskSpec",
    "IntegratedClassifier",
    "CascadeClassifier",
    "ConjunctionEnsembleClassifier",
    "EmbeddingCombinerClassifier",
    "StageDecision",
    "ARCHITECTURES",
    "derived_seed",
    "save_ensemble",
    "load_ensemble",
]

ENSEMBLE_FORMAT_VERSION = 1


def derived_seed(base: int, *salts: int) -> int:
    """Stable sub-seed for a training role, mixed from the experiment seed.

    The salt count is folded in because SeedSequence treats trailing zero
    entropy words as absent, so [7] and [7, 0] would otherwise collide."""
    sequence = np.random.SeedSequence(
        [int(base), len(salts), *(int(s) for s in salts)]
    )
    return int(sequence.generate_state(1)[0])


@dataclass(frozen=True)
class TaskStage:
    """One criterion plus the rating values that count as stage-positive."""

    criterion: str
    accept: frozenset

    def gold(self, ratings: CriterionRatings) -> bool:
        return ratings.get(self.criterion) in self.accept

    def is_rated(self, ratings: CriterionRatings) -> bool:
        return ratings.is_rated(self.criterion)


@dataclass(frozen=True)
class TaskSpec:
    """Ordered stage definitions whose conjunction is the positive class.

    Exactly one stage per criterion; the order is configurable and only
    matters to the cascade.  By construction the AND of the stage predicates
    equals ``positive_spec()``.
    """

    stages: tuple[TaskStage, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))
        criteria = [s.criterion for s in self.stages]
        if sorted(criteria) != sorted(CRITERIA):
            raise ValueError(
                f"task spec must cover each criterion exactly once, got {criteria}"
            )

    @classmethod
    def from_criteria(
        cls, spec: CriteriaSpec, order: Sequence[str] = CRITERIA
    ) -> "TaskSpec":
        return cls(
            stages=tuple(
                TaskStage(criterion=c, accept=spec.accept_set(c)) for c in order
            )
        )

    def positive_spec(self) -> CriteriaSpec:
        accepts = {s.criterion: s.accept for s in self.stages}
        return CriteriaSpec(
            format_accept=accepts["format"],
            hhc_accept=accepts["hhc"],
            purpose_accept=accepts["purpose"],
            rigor_accept=accepts["rigor"],
        )

    def order(self) -> tuple[str, ...]:
        return tuple(s.criterion for s in self.stages)

    def to_dict(self) -> dict:
        return {"order": list(self.order()), "positive": self.positive_spec().to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        return cls.from_criteria(
            CriteriaSpec.from_dict(data["positive"]), order=data["order"]
        )


@dataclass(frozen=True)
class StageDecision:
    """Cascade trace entry: what one stage saw and decided for one article.

    ``skipped`` stages (after an upstream rejection) carry no probability.
    """

    criterion: str
    probability: float | None
    passed: bool | None
    skipped: bool


def _gold_stage_labels(articles: Sequence[Article], stage: TaskStage) -> np.ndarray:
    return np.array([stage.gold(a.ratings) for a in articles], dtype=bool)


def _rated_mask(articles: Sequence[Article], stage: TaskStage) -> np.ndarray:
    return np.array([stage.is_rated(a.ratings) for a in articles], dtype=bool)


class _EnsembleBase(BaseEstimator, ClassifierMixin):
    """Featurizer plumbing and fitted-state checks shared by architectures."""

    def _resolved_featurizer(self) -> HashingFeaturizer:
        featurizer = self.featurizer if self.featurizer is not None else HashingFeaturizer()
        featurizer.fit()
        return featurizer

    def _features(self, articles, features) -> sp.csr_matrix:
        if features is not None:
            X = features.tocsr() if sp.issparse(features) else sp.csr_matrix(features)
            n = len(articles) if articles is not None else X.shape[0]
            if X.shape[0] != n:
                raise ValueError(
                    f"features have {X.shape[0]} rows for {n} articles"
                )
            return X
        return self.featurizer_.transform(articles)

    def _require_fitted(self) -> None:
        if not hasattr(self, "featurizer_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet"
            )

    @staticmethod
    def _articles_list(articles) -> list[Article]:
        return list(articles)


def _train_stage_model(
    prototype, X: sp.csr_matrix, labels: np.ndarray, idx: np.ndarray, seed: int
):
    model = clone(prototype)
    model.set_params(seed=seed)
    return model.fit(X[idx], labels)


def _stage_sample(
    idx_pool: np.ndarray,
    gold: np.ndarray,
    plan: SamplingPlan | None,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Resolve one stage's training rows: balanced 1:1 by default, or an
    explicit plan.  Returns (row indices, labels) in shuffled order."""
    items = idx_pool.tolist()
    labels = gold.tolist()
    if plan is None:
        pairs = balanced_stage_sample(items, labels, seed=seed)
    else:
        pos = [i for i, l in zip(items, labels) if l]
        neg = [i for i, l in zip(items, labels) if not l]
        if not pos or not neg:
            raise ValueError(
                f"stage pool needs both labels: {len(pos)} positive, {len(neg)} negative"
            )
        pairs = resample(pos, neg, SamplingPlan(plan.pos_target, plan.neg_target, seed=seed))
    rows = np.array([i for i, _ in pairs], dtype=np.int64)
    labs = np.array([l for _, l in pairs], dtype=np.int64)
    return rows, labs


class IntegratedClassifier(_EnsembleBase):
    """Single model trained end-to-end on the conjunction label."""

    def __init__(
        self,
        positive_spec: CriteriaSpec | None = None,
        featurizer: HashingFeaturizer | None = None,
        estimator=None,
        plan: SamplingPlan | None = None,
        seed: int = 0,
    ) -> None:
        self.positive_spec = positive_spec
        self.featurizer = featurizer
        self.estimator = estimator
        self.plan = plan
        self.seed = seed

    def fit(self, articles, y=None, *, features=None):
        articles = self._articles_list(articles)
        spec = self.positive_spec or default_positive_spec()
        self.featurizer_ = self._resolved_featurizer()
        X = self._features(articles, features)
        if y is None:
            yarr = derive_labels(articles, spec)
        else:
            yarr = check_labels(y, len(articles)).astype(bool)
        pos = np.flatnonzero(yarr)
        neg = np.flatnonzero(~yarr)
        if pos.size == 0 or neg.size == 0:
            raise TrainingError(
                f"training corpus needs both classes: {pos.size} positive, "
                f"{neg.size} negative"
            )
        plan = self.plan or SamplingPlan(
            pos_target=pos.size,
            neg_target=min(neg.size, pos.size),
            seed=derived_seed(self.seed, 1),
        )
        pairs = resample(pos.tolist(), neg.tolist(), plan)
        rows = np.array([i for i, _ in pairs], dtype=np.int64)
        labs = np.array([l for _, l in pairs], dtype=np.int64)
        prototype = self.estimator if self.estimator is not None else LogisticClassifier()
        self.model_ = _train_stage_model(prototype, X, labs, rows, derived_seed(self.seed, 0))
        self.positive_spec_ = spec
        return self

    def predict_proba(self, articles, *, features=None) -> np.ndarray:
        self._require_fitted()
        X = self._features(self._articles_list(articles) if features is None else articles, features)
        return self.model_.predict_proba(X)

    def predict(self, articles, *, features=None) -> np.ndarray:
        self._require_fitted()
        probs = self.predict_proba(articles, features=features)
        return (probs >= self.model_.threshold).astype(np.int64)


class _StagedEnsembleBase(_EnsembleBase):
    """Shared stage plumbing for per-criterion architectures."""

    _supports_external_stages = True

    def _resolved_task(self) -> TaskSpec:
        if self.task_spec is not None:
            return self.task_spec
        return TaskSpec.from_criteria(default_positive_spec())

    def _stage_plan(self, k: int) -> SamplingPlan | None:
        plans = self.stage_plans
        if plans is None or isinstance(plans, SamplingPlan):
            return plans
        plans = list(plans)
        if len(plans) != len(self.task_spec_.stages):
            raise ValueError(
                f"stage_plans has {len(plans)} entries for "
                f"{len(self.task_spec_.stages)} stages"
            )
        return plans[k]

    def _stage_thresholds(self) -> np.ndarray:
        raw = self.stage_thresholds
        n = len(self.stage_models_)
        if raw is None:
            return np.array([m.threshold for m in self.stage_models_], dtype=float)
        values = np.broadcast_to(np.asarray(raw, dtype=float), (n,)).copy()
        if ((values < 0) | (values > 1)).any():
            raise ValueError(f"stage thresholds must lie in [0, 1], got {raw!r}")
        return values

    def _attach_fitted(self, task: TaskSpec, featurizer: HashingFeaturizer, models) -> None:
        models = list(models)
        if len(models) != len(task.stages):
            raise ValueError(
                f"{len(models)} stage models for {len(task.stages)} stages"
            )
        self.task_spec_ = task
        self.featurizer_ = featurizer
        self.stage_models_ = models

    @classmethod
    def from_stage_models(
        cls,
        stage_models,
        task_spec: TaskSpec | None = None,
        featurizer: HashingFeaturizer | None = None,
        stage_thresholds=None,
    ):
        """Assemble a fitted ensemble around externally trained stage models.

        The same models installed in a cascade and a conjunction ensemble
        produce identical labels, so this is the bridge for comparing the
        two inference styles on equal footing.
        """
        if not cls._supports_external_stages:
            raise TypeError(
                f"{cls.__name__} cannot be assembled from bare stage models"
            )
        est = cls(
            task_spec=task_spec, featurizer=featurizer, stage_thresholds=stage_thresholds
        )
        task = est._resolved_task()
        est._attach_fitted(task, est._resolved_featurizer(), stage_models)
        return est

    def stage_criteria(self) -> tuple[str, ...]:
        self._require_fitted()
        return self.task_spec_.order()

    def predict_stage_proba(self, articles, *, features=None) -> np.ndarray:
        """Every stage's probability for every article, shape (n, n_stages).

        The cascade's short-circuit applies only to labels, not to this
        diagnostic view."""
        self._require_fitted()
        X = self._features(self._articles_list(articles) if features is None else articles, features)
        return np.column_stack([m.predict_proba(X) for m in self.stage_models_])


class CascadeClassifier(_StagedEnsembleBase):
    """Sequential per-criterion filters with short-circuit rejection.

    ``train_filter`` picks what defines each stage's training pool: articles
    whose *gold* upstream ratings pass all earlier stages (default), or
    articles the already-trained upstream models *predict* positive.
    """

    def __init__(
        self,
        task_spec: TaskSpec | None = None,
        featurizer: HashingFeaturizer | None = None,
        estimator=None,
        stage_plans=None,
        train_filter: str = "gold",
        stage_thresholds=None,
        seed: int = 0,
    ) -> None:
        self.task_spec = task_spec
        self.featurizer = featurizer
        self.estimator = estimator
        self.stage_plans = stage_plans
        self.train_filter = train_filter
        self.stage_thresholds = stage_thresholds
        self.seed = seed

    def fit(self, articles, y=None, *, features=None):
        if y is not None:
            raise ValueError("cascade labels derive from gold ratings; pass y=None")
        if self.train_filter not in ("gold", "predicted"):
            raise ValueError(
                f"train_filter must be 'gold' or 'predicted', got {self.train_filter!r}"
            )
        articles = self._articles_list(articles)
        task = self._resolved_task()
        self.task_spec_ = task
        self.featurizer_ = self._resolved_featurizer()
        X = self._features(articles, features)
        prototype = self.estimator if self.estimator is not None else LogisticClassifier()
        pool = np.arange(len(articles))
        models = []
        for k, stage in enumerate(task.stages):
            rated = _rated_mask(articles, stage)
            gold_all = _gold_stage_labels(articles, stage)
            train_pool = pool[rated[pool]]
            if train_pool.size == 0:
                raise TrainingError(
                    f"stage {k} ({stage.criterion}): no rated articles left in pool"
                )
            plan = self._stage_plan(k)
            try:
                rows, labs = _stage_sample(
                    train_pool, gold_all[train_pool], plan,
                    derived_seed(self.seed, k, 1),
                )
            except ValueError as exc:
                raise TrainingError(f"stage {k} ({stage.criterion}): {exc}") from None
            model = _train_stage_model(prototype, X, labs, rows, derived_seed(self.seed, k, 0))
            models.append(model)
            if self.train_filter == "gold":
                pool = pool[gold_all[pool]]
            else:
                threshold = self._threshold_for(model, k)
                probs = model.predict_proba(X[pool])
                pool = pool[probs >= threshold]
        self.stage_models_ = models
        return self

    def _threshold_for(self, model, k: int) -> float:
        raw = self.stage_thresholds
        if raw is None:
            return float(model.threshold)
        return float(np.broadcast_to(np.asarray(raw, dtype=float), (len(self.task_spec_.stages),))[k])

    def predict_with_trace(self, articles, *, features=None):
        """Labels plus one ``StageDecision`` per stage per article."""
        self._require_fitted()
        X = self._features(self._articles_list(articles) if features is None else articles, features)
        n = X.shape[0]
        thresholds = self._stage_thresholds()
        alive = np.arange(n)
        probabilities = np.full((n, len(self.stage_models_)), np.nan)
        passed = np.zeros((n, len(self.stage_models_)), dtype=bool)
        evaluated = np.zeros((n, len(self.stage_models_)), dtype=bool)
        for k, model in enumerate(self.stage_models_):
            if alive.size:
                probs = model.predict_proba(X[alive])
                ok = probs >= thresholds[k]
                probabilities[alive, k] = probs
                passed[alive, k] = ok
                evaluated[alive, k] = True
                alive = alive[ok]
        labels = np.zeros(n, dtype=np.int64)
        labels[alive] = 1
        traces = []
        criteria = self.task_spec_.order()
        for i in range(n):
            row = []
            for k, criterion in enumerate(criteria):
                if evaluated[i, k]:
                    row.append(
                        StageDecision(
                            criterion=criterion,
                            probability=float(probabilities[i, k]),
                            passed=bool(passed[i, k]),
                            skipped=False,
                        )
                    )
                else:
                    row.append(
                        StageDecision(
                            criterion=criterion, probability=None, passed=None, skipped=True
                        )
                    )
            traces.append(tuple(row))
        return labels, traces

    def predict(self, articles, *, features=None) -> np.ndarray:
        self._require_fitted()
        X = self._features(self._articles_list(articles) if features is None else articles, features)
        thresholds = self._stage_thresholds()
        alive = np.arange(X.shape[0])
        for k, model in enumerate(self.stage_models_):
            if alive.size == 0:
                break
            probs = model.predict_proba(X[alive])
            alive = alive[probs >= thresholds[k]]
        labels = np.zeros(X.shape[0], dtype=np.int64)
        labels[alive] = 1
        return labels


class ConjunctionEnsembleClassifier(_StagedEnsembleBase):
    """Independent per-criterion models whose decisions are AND-combined.

    Unlike the cascade, every stage trains on the full split (minus articles
    unrated for its criterion) and every stage scores every article."""

    def __init__(
        self,
        task_spec: TaskSpec | None = None,
        featurizer: HashingFeaturizer | None = None,
        estimator=None,
        stage_plans=None,
        stage_thresholds=None,
        seed: int = 0,
    ) -> None:
        self.task_spec = task_spec
        self.featurizer = featurizer
        self.estimator = estimator
        self.stage_plans = stage_plans
        self.stage_thresholds = stage_thresholds
        self.seed = seed

    def fit(self, articles, y=None, *, features=None):
        if y is not None:
            raise ValueError("stage labels derive from gold ratings; pass y=None")
        articles = self._articles_list(articles)
        task = self._resolved_task()
        self.task_spec_ = task
        self.featurizer_ = self._resolved_featurizer()
        X = self._features(articles, features)
        prototype = self.estimator if self.estimator is not None else LogisticClassifier()
        models = []
        for k, stage in enumerate(task.stages):
            rated_idx = np.flatnonzero(_rated_mask(articles, stage))
            if rated_idx.size == 0:
                raise TrainingError(
                    f"stage {k} ({stage.criterion}): no rated articles"
                )
            gold = _gold_stage_labels(articles, stage)
            plan = self._stage_plan(k)
            try:
                rows, labs = _stage_sample(
                    rated_idx, gold[rated_idx], plan,
                    derived_seed(self.seed, k, 1),
                )
            except ValueError as exc:
                raise TrainingError(f"stage {k} ({stage.criterion}): {exc}") from None
            models.append(
                _train_stage_model(prototype, X, labs, rows, derived_seed(self.seed, k, 0))
            )
        self.stage_models_ = models
        return self

    def predict(self, articles, *, features=None) -> np.ndarray:
        self._require_fitted()
        probs = self.predict_stage_proba(articles, features=features)
        decisions = probs >= self._stage_thresholds()[None, :]
        return decisions.all(axis=1).astype(np.int64)


class EmbeddingCombinerClassifier(_StagedEnsembleBase):
    """Per-criterion MLPs fused by a learned feed-forward combiner.

    Stage models are first trained like the conjunction ensemble's; their
    output layers are then set aside and a combiner network is trained on
    the concatenated hidden embeddings.  During the joint phase gradients
    flow through the combiner *and* back into each stage's hidden layer
    (disable with ``joint_update_stages=False`` to train the combiner on
    frozen embeddings).
    """

    def __init__(
        self,
        task_spec: TaskSpec | None = None,
        featurizer: HashingFeaturizer | None = None,
        stage_estimator=None,
        stage_plans=None,
        plan: SamplingPlan | None = None,
        combiner_hidden_dim: int = 32,
        combiner_activation: str = "relu",
        joint_learning_rate: float = 0.5,
        joint_epochs: int = 10,
        joint_batch_size: int = 64,
        joint_update_stages: bool = True,
        threshold: float = 0.5,
        seed: int = 0,
    ) -> None:
        self.task_spec = task_spec
        self.featurizer = featurizer
        self.stage_estimator = stage_estimator
        self.stage_plans = stage_plans
        self.plan = plan
        self.combiner_hidden_dim = combiner_hidden_dim
        self.combiner_activation = combiner_activation
        self.joint_learning_rate = joint_learning_rate
        self.joint_epochs = joint_epochs
        self.joint_batch_size = joint_batch_size
        self.joint_update_stages = joint_update_stages
        self.threshold = threshold
        self.seed = seed

    # stage_thresholds are meaningless here (stage outputs are bypassed) but
    # _StagedEnsembleBase plumbing expects the attribute
    stage_thresholds = None

    def _check_params(self) -> None:
        if int(self.combiner_hidden_dim) < 1:
            raise ValueError(f"combiner_hidden_dim must be >= 1, got {self.combiner_hidden_dim}")
        if self.joint_learning_rate <= 0:
            raise ValueError(f"joint_learning_rate must be > 0, got {self.joint_learning_rate}")
        if int(self.joint_epochs) < 0:
            raise ValueError(f"joint_epochs must be >= 0, got {self.joint_epochs}")
        if int(self.joint_batch_size) < 1:
            raise ValueError(f"joint_batch_size must be >= 1, got {self.joint_batch_size}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")
        _activation(self.combiner_activation)

    _supports_external_stages = False

    def fit(self, articles, y=None, *, features=None):
        if y is not None:
            raise ValueError("labels derive from gold ratings; pass y=None")
        self._check_params()
        articles = self._articles_list(articles)
        task = self._resolved_task()
        self.task_spec_ = task
        self.featurizer_ = self._resolved_featurizer()
        X = self._features(articles, features)
        prototype = self.stage_estimator if self.stage_estimator is not None else MlpClassifier()
        if not isinstance(prototype, MlpClassifier):
            raise TypeError(
                "stage_estimator must be an MlpClassifier: the combiner "
                "consumes hidden-layer embeddings"
            )
        # phase 1: stage models on their own criterion labels
        models = []
        for k, stage in enumerate(task.stages):
            rated_idx = np.flatnonzero(_rated_mask(articles, stage))
            gold = _gold_stage_labels(articles, stage)
            if rated_idx.size == 0:
                raise TrainingError(f"stage {k} ({stage.criterion}): no rated articles")
            plan = self._stage_plan(k)
            try:
                rows, labs = _stage_sample(
                    rated_idx, gold[rated_idx], plan,
                    derived_seed(self.seed, k, 1),
                )
            except ValueError as exc:
                raise TrainingError(f"stage {k} ({stage.criterion}): {exc}") from None
            models.append(
                _train_stage_model(prototype, X, labs, rows, derived_seed(self.seed, k, 0))
            )
        self.stage_models_ = models

        # phase 2: joint training on the conjunction label
        yarr = derive_labels(articles, task.positive_spec())
        pos = np.flatnonzero(yarr)
        neg = np.flatnonzero(~yarr)
        if pos.size == 0 or neg.size == 0:
            raise TrainingError(
                f"training corpus needs both classes: {pos.size} positive, "
                f"{neg.size} negative"
            )
        plan = self.plan or SamplingPlan(
            pos_target=pos.size,
            neg_target=min(neg.size, pos.size),
            seed=derived_seed(self.seed, 101),
        )
        pairs = resample(pos.tolist(), neg.tolist(), plan)
        rows = np.array([i for i, _ in pairs], dtype=np.int64)
        labs = np.array([l for _, l in pairs], dtype=np.float64)
        self._init_combiner(derived_seed(self.seed, 100))
        self._joint_train(X[rows], labs)
        return self

    def _init_combiner(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        embed_dim = sum(int(m.hidden_dim) for m in self.stage_models_)
        h = int(self.combiner_hidden_dim)
        scale = MlpClassifier._INIT_SCALE
        self.combiner_state_ = {
            "Wc": rng.normal(0.0, scale, size=(embed_dim, h)),
            "bc": np.zeros(h),
            "vc": rng.normal(0.0, scale, size=h),
            "cc": np.zeros(1),
        }
        self.embed_dim_ = embed_dim

    # -- joint network: functional core over a flat parameter dict ---------
    #
    # Parameter names: combiner Wc/bc/vc/cc plus per-stage hidden layers
    # sK_W1 / sK_b1.  Stage output layers do not appear: the combiner reads
    # the embeddings directly, so those weights get no gradient.

    def _joint_param_state(self) -> dict:
        self._require_fitted()
        params = {k: v.copy() for k, v in self.combiner_state_.items()}
        for k, model in enumerate(self.stage_models_):
            params[f"s{k}_W1"] = model.hidden_weights_.copy()
            params[f"s{k}_b1"] = model.hidden_bias_.copy()
        return params

    def _joint_forward(self, params: dict, X: sp.csr_matrix):
        act_c, _ = _activation(self.combiner_activation)
        embeddings = []
        pre = []
        for k, model in enumerate(self.stage_models_):
            act_s, _ = _activation(model.activation)
            Z1 = X @ params[f"s{k}_W1"] + params[f"s{k}_b1"]
            pre.append(Z1)
            embeddings.append(act_s(Z1))
        E = np.concatenate(embeddings, axis=1)
        Zc = E @ params["Wc"] + params["bc"]
        Ac = act_c(Zc)
        zo = Ac @ params["vc"] + params["cc"][0]
        return pre, E, Zc, Ac, zo

    def _loss_fn(self, params: dict, X, y) -> float:
        _, _, _, _, zo = self._joint_forward(params, X)
        return bce_from_logits(zo, y)

    def _joint_backward(self, params: dict, X: sp.csr_matrix, y: np.ndarray):
        """One exact backward pass.  Hidden-weight gradients come back as
        (touched feature rows, per-row gradient per stage) so mini-batch
        updates never materialize a full dim x hidden matrix."""
        _, act_grad_c = _activation(self.combiner_activation)
        pre, E, Zc, Ac, zo = self._joint_forward(params, X)
        dzo = (expit(zo) - y) / y.size
        dense: dict[str, np.ndarray] = {
            "vc": Ac.T @ dzo,
            "cc": np.array([dzo.sum()]),
        }
        dZc = np.outer(dzo, params["vc"]) * act_grad_c(Zc)
        dense["Wc"] = E.T @ dZc
        dense["bc"] = dZc.sum(axis=0)
        dE = dZc @ params["Wc"].T
        coo = X.tocoo()
        rows, inv = np.unique(coo.col, return_inverse=True)
        stage_row_grads = []
        offset = 0
        for k, model in enumerate(self.stage_models_):
            h = int(model.hidden_dim)
            _, act_grad_s = _activation(model.activation)
            dZ1 = dE[:, offset : offset + h] * act_grad_s(pre[k])
            dense[f"s{k}_b1"] = dZ1.sum(axis=0)
            G = np.zeros((rows.size, h))
            np.add.at(G, inv, coo.data[:, None] * dZ1[coo.row])
            stage_row_grads.append(G)
            offset += h
        return zo, dense, rows, stage_row_grads

    def _grad_fn(self, params: dict, X, y) -> dict:
        _, dense, rows, stage_row_grads = self._joint_backward(params, X, y)
        grads = dict(dense)
        for k, G in enumerate(stage_row_grads):
            full = np.zeros_like(params[f"s{k}_W1"])
            full[rows] = G
            grads[f"s{k}_W1"] = full
        return grads

    def _param_state(self) -> dict:
        # alias so models.grad_check drives the composed network unchanged
        return self._joint_param_state()

    def _joint_params_view(self) -> dict:
        """Parameter dict sharing the live arrays (no copies); forward only."""
        self._require_fitted()
        params = dict(self.combiner_state_)
        for k, model in enumerate(self.stage_models_):
            params[f"s{k}_W1"] = model.hidden_weights_
            params[f"s{k}_b1"] = model.hidden_bias_
        return params

    def _joint_train(self, X: sp.csr_matrix, y: np.ndarray) -> None:
        params = self._joint_param_state()
        rng = np.random.default_rng(derived_seed(self.seed, 102))
        n = X.shape[0]
        batch = int(self.joint_batch_size)
        lr = self.joint_learning_rate
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(int(self.joint_epochs)):
                perm = rng.permutation(n)
                Xp = X[perm]
                yp = y[perm]
                for b, start in enumerate(range(0, n, batch)):
                    Xb = Xp[start : start + batch]
                    yb = yp[start : start + batch]
                    zo, dense, rows, stage_row_grads = self._joint_backward(params, Xb, yb)
                    if not np.all(np.isfinite(zo)):
                        raise TrainingError(
                            f"non-finite combiner loss at epoch {epoch}, batch {b}"
                        )
                    for key, grad in dense.items():
                        if not self.joint_update_stages and key.startswith("s"):
                            continue
                        params[key] -= lr * grad
                    if self.joint_update_stages:
                        for k, G in enumerate(stage_row_grads):
                            params[f"s{k}_W1"][rows] -= lr * G
                if not all(np.isfinite(a).all() for a in params.values()):
                    raise TrainingError(f"non-finite combiner parameters after epoch {epoch}")
        for key in ("Wc", "bc", "vc", "cc"):
            self.combiner_state_[key] = params[key]
        for k, model in enumerate(self.stage_models_):
            model.hidden_weights_ = params[f"s{k}_W1"]
            model.hidden_bias_ = params[f"s{k}_b1"]

    def embed(self, articles, *, features=None) -> np.ndarray:
        """Concatenated stage embeddings, shape (n, sum of stage hidden dims)."""
        self._require_fitted()
        X = self._features(self._articles_list(articles) if features is None else articles, features)
        return np.concatenate([m.embed(X) for m in self.stage_models_], axis=1)

    def predict_proba(self, articles, *, features=None) -> np.ndarray:
        self._require_fitted()
        X = self._features(self._articles_list(articles) if features is None else articles, features)
        _, _, _, _, zo = self._joint_forward(self._joint_params_view(), X)
        return expit(zo)

    def predict(self, articles, *, features=None) -> np.ndarray:
        return (self.predict_proba(articles, features=features) >= self.threshold).astype(np.int64)


ARCHITECTURES = {
    "integrated": IntegratedClassifier,
    "cascade": CascadeClassifier,
    "conjunction": ConjunctionEnsembleClassifier,
    "combiner": EmbeddingCombinerClassifier,
}


def _architecture_kind(ensemble) -> str:
    for kind, cls in ARCHITECTURES.items():
        if type(ensemble) is cls:
            return kind
    raise TypeError(f"cannot serialize ensemble of type {type(ensemble).__name__}")


def save_ensemble(ensemble, directory) -> None:
    """Persist a fitted ensemble as a directory bundle.

    The bundle carries everything inference needs (featurizer config, task
    definition, thresholds, stage parameter arrays); a reloaded ensemble
    predicts identically.  Training-recipe parameters are not preserved.
    """
    from .models import save_model  # local import keeps module load light

    ensemble._require_fitted()
    os.makedirs(directory, exist_ok=True)
    kind = _architecture_kind(ensemble)
    manifest: dict = {
        "format_version": ENSEMBLE_FORMAT_VERSION,
        "kind": kind,
        "featurizer": ensemble.featurizer_.get_params(),
    }
    manifest["featurizer"]["ngram_orders"] = list(manifest["featurizer"]["ngram_orders"])
    if kind == "integrated":
        manifest["positive"] = ensemble.positive_spec_.to_dict()
        manifest["model_file"] = "model.npz"
        save_model(ensemble.model_, os.path.join(directory, "model.npz"))
    else:
        manifest["task"] = ensemble.task_spec_.to_dict()
        files = []
        for k, model in enumerate(ensemble.stage_models_):
            name = f"stage_{k}_{ensemble.task_spec_.order()[k]}.npz"
            save_model(model, os.path.join(directory, name))
            files.append(name)
        manifest["stage_files"] = files
        if kind == "combiner":
            manifest["combiner_file"] = "combiner.npz"
            manifest["combiner"] = {
                "hidden_dim": int(ensemble.combiner_hidden_dim),
                "activation": ensemble.combiner_activation,
                "threshold": float(ensemble.threshold),
            }
            np.savez(
                os.path.join(directory, "combiner.npz"), **ensemble.combiner_state_
            )
        else:
            manifest["stage_thresholds"] = [float(t) for t in ensemble._stage_thresholds()]
    path = os.path.join(directory, "manifest.json")
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_ensemble(directory):
    """Reload a bundle written by :func:`save_ensemble`."""
    from .models import load_model

    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as handle:
        manifest = json.load(handle)
    if manifest.get("format_version") != ENSEMBLE_FORMAT_VERSION:
        raise ValueError(f"unsupported ensemble format {manifest.get('format_version')!r}")
    kind = manifest.get("kind")
    if kind not in ARCHITECTURES:
        raise ValueError(f"unknown ensemble kind {kind!r}")
    featurizer = HashingFeaturizer(**manifest["featurizer"])
    if kind == "integrated":
        spec = CriteriaSpec.from_dict(manifest["positive"])
        ensemble = IntegratedClassifier(positive_spec=spec, featurizer=featurizer)
        ensemble.featurizer_ = featurizer
        ensemble.positive_spec_ = spec
        ensemble.model_ = load_model(os.path.join(directory, manifest["model_file"]))
        return ensemble
    task = TaskSpec.from_dict(manifest["task"])
    models = [
        load_model(os.path.join(directory, name)) for name in manifest["stage_files"]
    ]
    if kind == "combiner":
        meta = manifest["combiner"]
        ensemble = EmbeddingCombinerClassifier(
            task_spec=task,
            featurizer=featurizer,
            combiner_hidden_dim=meta["hidden_dim"],
            combiner_activation=meta["activation"],
            threshold=meta["threshold"],
        )
        ensemble._attach_fitted(task, featurizer, models)
        with np.load(os.path.join(directory, manifest["combiner_file"])) as archive:
            ensemble.combiner_state_ = {k: archive[k].copy() for k in archive.files}
        ensemble.embed_dim_ = ensemble.combiner_state_["Wc"].shape[0]
        return ensemble
    cls = ARCHITECTURES[kind]
    ensemble = cls.from_stage_models(
        models,
        task_spec=task,
        featurizer=featurizer,
        stage_thresholds=manifest.get("stage_thresholds"),
    )
    return ensemble
