"""Stratified cross-validation, micro-averaged metrics, operating points.

Metrics are micro-averaged: confusion counts are pooled over all folds
before computing precision/recall/F, which is identical to computing them
over the concatenated per-fold predictions.  Zero denominators follow the
usual conventions (no predicted positives -> P=0, no actual positives ->
R=0, P+R=0 -> F=0).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import clone

from .corpus import CriteriaSpec, default_positive_spec, derive_labels
from .ensembles import (
    CascadeClassifier,
    ConjunctionEnsembleClassifier,
    derived_seed,
)

__all__ = [
    "ConfusionCounts",
    "prf",
    "f_measure",
    "error_rate_reduction",
    "stratified_kfold",
    "OperatingPoint",
    "fix_recall",
    "FoldResult",
    "StageLabelMetrics",
    "StageReport",
    "EvalReport",
    "cross_validate",
    "per_stage_report",
]

REPORT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        if t.shape != p.shape:
            raise ValueError(f"shape mismatch: {t.shape} vs {p.shape}")
        return cls(
            tp=int((t & p).sum()),
            fp=int((~t & p).sum()),
            fn=int((t & ~p).sum()),
            tn=int((~t & ~p).sum()),
        )

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionCounts":
        """Counts for the task with the class labels flipped."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def prf(counts: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall, F1 with zero-denominator conventions."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def f_measure(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def error_rate_reduction(f_base: float, f_new: float) -> float:
    """Fraction of the baseline's F-measure error (1 - F) removed."""
    if not 0.0 <= f_base < 1.0:
        raise ValueError(f"baseline F must lie in [0, 1), got {f_base}")
    return (f_new - f_base) / (1.0 - f_base)


def stratified_kfold(y, k: int, seed: int = 0) -> list[np.ndarray]:
    """Split indices into ``k`` folds preserving the class ratio.

    Per class, indices are shuffled with the seed and dealt round-robin, so
    per-class fold sizes differ by at most one.  Returns sorted test-index
    arrays forming a partition of ``range(len(y))``.
    """
    yarr = np.asarray(y).astype(bool)
    if int(k) < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    k = int(k)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for label in (True, False):
        idx = np.flatnonzero(yarr == label)
        if 0 < idx.size < k:
            raise ValueError(
                f"class {label} has {idx.size} members, cannot fill {k} folds"
            )
        idx = idx[rng.permutation(idx.size)]
        for j, i in enumerate(idx):
            folds[j % k].append(int(i))
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


@dataclass(frozen=True)
class OperatingPoint:
    """Decision threshold chosen to guarantee a recall floor."""

    recall_target: float
    threshold: float
    precision: float
    recall: float
    f_measure: float

    def as_dict(self) -> dict:
        return {
            "recall_target": self.recall_target,
            "threshold": self.threshold,
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
        }


def fix_recall(scores, y, recall_target: float) -> OperatingPoint:
    """Largest threshold whose recall meets the target.

    Predictions are ``score >= threshold``; recall is non-decreasing as the
    threshold falls, so this picks the most precise operating point that
    still honors the floor.  Candidate thresholds are the distinct scores.
    """
    scores = np.asarray(scores, dtype=float)
    yarr = np.asarray(y).astype(bool)
    if scores.shape != yarr.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-d arrays")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if not 0.0 < recall_target <= 1.0:
        raise ValueError(f"recall target must lie in (0, 1], got {recall_target}")
    n_pos = int(yarr.sum())
    if n_pos == 0:
        raise ValueError("cannot fix recall without positive examples")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    cum_tp = np.cumsum(yarr[order])
    # last occurrence of each distinct score in the descending order gives
    # the counts when thresholding at exactly that score
    boundaries = np.flatnonzero(
        np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    )
    for b in boundaries:
        tp = int(cum_tp[b])
        recall = tp / n_pos
        if recall >= recall_target:
            predicted = int(b) + 1
            precision = tp / predicted
            return OperatingPoint(
                recall_target=float(recall_target),
                threshold=float(sorted_scores[b]),
                precision=precision,
                recall=recall,
                f_measure=f_measure(precision, recall),
            )
    raise AssertionError("unreachable: recall reaches 1.0 at the lowest threshold")


@dataclass(frozen=True)
class FoldResult:
    fold: int
    counts: ConfusionCounts
    precision: float
    recall: float
    f_measure: float

    def as_dict(self) -> dict:
        return {
            "fold": self.fold,
            "counts": self.counts.as_dict(),
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
        }


@dataclass(frozen=True)
class StageLabelMetrics:
    label: str  # "positive" or "negative"
    precision: float
    recall: float
    f_measure: float
    support: int

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
            "support": self.support,
        }


@dataclass(frozen=True)
class StageReport:
    """One stage's quality on the articles it actually judged, per label."""

    criterion: str
    counts: ConfusionCounts
    per_label: tuple[StageLabelMetrics, StageLabelMetrics]

    @classmethod
    def from_counts(cls, criterion: str, counts: ConfusionCounts) -> "StageReport":
        p, r, f = prf(counts)
        sp, sr, sf = prf(counts.swapped())
        return cls(
            criterion=criterion,
            counts=counts,
            per_label=(
                StageLabelMetrics("positive", p, r, f, counts.tp + counts.fn),
                StageLabelMetrics("negative", sp, sr, sf, counts.tn + counts.fp),
            ),
        )

    def as_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "counts": self.counts.as_dict(),
            "per_label": [m.as_dict() for m in self.per_label],
        }


@dataclass
class EvalReport:
    """Cross-validation outcome: pooled metrics plus per-fold breakdowns."""

    config: dict
    k: int
    seed: int
    n_articles: int
    counts: ConfusionCounts
    precision: float
    recall: float
    f_measure: float
    folds: list[FoldResult] = field(default_factory=list)
    stages: list[StageReport] = field(default_factory=list)
    operating_points: list[OperatingPoint] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "config": self.config,
            "k": self.k,
            "seed": self.seed,
            "n_articles": self.n_articles,
            "counts": self.counts.as_dict(),
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
            "folds": [f.as_dict() for f in self.folds],
            "stages": [s.as_dict() for s in self.stages],
            "operating_points": [p.as_dict() for p in self.operating_points],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        if data.get("format_version") != REPORT_FORMAT_VERSION:
            raise ValueError(f"unsupported report format {data.get('format_version')!r}")
        return cls(
            config=dict(data.get("config", {})),
            k=int(data["k"]),
            seed=int(data["seed"]),
            n_articles=int(data["n_articles"]),
            counts=ConfusionCounts(**data["counts"]),
            precision=float(data["precision"]),
            recall=float(data["recall"]),
            f_measure=float(data["f_measure"]),
            folds=[
                FoldResult(
                    fold=int(f["fold"]),
                    counts=ConfusionCounts(**f["counts"]),
                    precision=float(f["precision"]),
                    recall=float(f["recall"]),
                    f_measure=float(f["f_measure"]),
                )
                for f in data.get("folds", [])
            ],
            stages=[
                StageReport(
                    criterion=s["criterion"],
                    counts=ConfusionCounts(**s["counts"]),
                    per_label=tuple(
                        StageLabelMetrics(**m) for m in s["per_label"]
                    ),
                )
                for s in data.get("stages", [])
            ],
            operating_points=[
                OperatingPoint(**p) for p in data.get("operating_points", [])
            ],
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def to_text(self) -> str:
        lines = []
        name = self.config.get("name", "experiment")
        lines.append(f"{name}: {self.k}-fold cross-validation over {self.n_articles} articles (seed {self.seed})")
        c = self.counts
        lines.append(
            f"  micro P {self.precision:.4f}  R {self.recall:.4f}  F {self.f_measure:.4f}"
            f"   [tp {c.tp}  fp {c.fp}  fn {c.fn}  tn {c.tn}]"
        )
        if self.folds:
            lines.append("")
            lines.append(f"  {'fold':>4}  {'tp':>6} {'fp':>6} {'fn':>6} {'tn':>7}   {'P':>6} {'R':>6} {'F':>6}")
            for f in self.folds:
                lines.append(
                    f"  {f.fold:>4}  {f.counts.tp:>6} {f.counts.fp:>6} {f.counts.fn:>6}"
                    f" {f.counts.tn:>7}   {f.precision:6.4f} {f.recall:6.4f} {f.f_measure:6.4f}"
                )
        if self.stages:
            lines.append("")
            lines.append(f"  {'stage':>8} {'label':>9}   {'P':>6} {'R':>6} {'F':>6}  {'support':>8}")
            for s in self.stages:
                for m in s.per_label:
                    lines.append(
                        f"  {s.criterion:>8} {m.label:>9}   {m.precision:6.4f}"
                        f" {m.recall:6.4f} {m.f_measure:6.4f}  {m.support:>8}"
                    )
        if self.operating_points:
            lines.append("")
            lines.append(f"  {'recall>=':>9}  {'threshold':>10}   {'P':>6} {'R':>6} {'F':>6}")
            for p in self.operating_points:
                lines.append(
                    f"  {p.recall_target:>9.4f}  {p.threshold:>10.6f}   "
                    f"{p.precision:6.4f} {p.recall:6.4f} {p.f_measure:6.4f}"
                )
        return "\n".join(lines) + "\n"

    def folds_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["fold", "tp", "fp", "fn", "tn", "precision", "recall", "f_measure"])
        for f in self.folds:
            writer.writerow(
                [f.fold, f.counts.tp, f.counts.fp, f.counts.fn, f.counts.tn,
                 f"{f.precision:.6f}", f"{f.recall:.6f}", f"{f.f_measure:.6f}"]
            )
        return out.getvalue()


def _estimator_positive_spec(estimator) -> CriteriaSpec:
    spec = getattr(estimator, "positive_spec", None)
    if spec is not None:
        return spec
    task = getattr(estimator, "task_spec", None)
    if task is not None:
        return task.positive_spec()
    return default_positive_spec()


def _stage_counts_from_cascade(model: CascadeClassifier, articles, X) -> list[ConfusionCounts]:
    _, traces = model.predict_with_trace(articles, features=X)
    out = []
    for k, stage in enumerate(model.task_spec_.stages):
        tp = fp = fn = tn = 0
        for article, trace in zip(articles, traces):
            decision = trace[k]
            if decision.skipped or not stage.is_rated(article.ratings):
                continue
            gold = stage.gold(article.ratings)
            if decision.passed and gold:
                tp += 1
            elif decision.passed:
                fp += 1
            elif gold:
                fn += 1
            else:
                tn += 1
        out.append(ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn))
    return out


def _stage_counts_from_conjunction(
    model: ConjunctionEnsembleClassifier, articles, X
) -> list[ConfusionCounts]:
    probs = model.predict_stage_proba(articles, features=X)
    decisions = probs >= model._stage_thresholds()[None, :]
    out = []
    for k, stage in enumerate(model.task_spec_.stages):
        rated = np.array([stage.is_rated(a.ratings) for a in articles], dtype=bool)
        gold = np.array([stage.gold(a.ratings) for a in articles], dtype=bool)
        out.append(
            ConfusionCounts.from_predictions(gold[rated], decisions[rated, k])
        )
    return out


def per_stage_report(model, articles, features=None) -> list[StageReport]:
    """Per-criterion quality of a fitted staged ensemble on ``articles``.

    Cascade stages are scored only on articles that reached them; every
    stage is scored only on articles rated for its criterion."""
    articles = list(articles)
    if isinstance(model, CascadeClassifier):
        counts = _stage_counts_from_cascade(model, articles, features)
    elif isinstance(model, ConjunctionEnsembleClassifier):
        counts = _stage_counts_from_conjunction(model, articles, features)
    else:
        raise TypeError(f"{type(model).__name__} has no per-stage decisions")
    return [
        StageReport.from_counts(stage.criterion, c)
        for stage, c in zip(model.task_spec_.stages, counts)
    ]


def cross_validate(
    estimator,
    articles,
    positive_spec: CriteriaSpec | None = None,
    k: int = 10,
    seed: int = 0,
    recall_targets: Sequence[float] = (),
    config: Mapping | None = None,
    collect_stages: bool = True,
) -> EvalReport:
    """Stratified k-fold evaluation of an (unfitted) screening estimator.

    Each fold clones the estimator, reseeds it deterministically, fits on
    the other folds, and predicts the held-out fold, so every article is
    predicted exactly once.  Features are hashed once up front and shared
    across folds.  Operating points are computed from pooled scores when
    the estimator exposes probabilities.
    """
    articles = list(articles)
    spec = positive_spec or _estimator_positive_spec(estimator)
    y = derive_labels(articles, spec)
    featurizer = estimator._resolved_featurizer()
    X = featurizer.transform(articles)
    folds = stratified_kfold(y, k=k, seed=seed)
    n = len(articles)
    fold_results: list[FoldResult] = []
    pooled = ConfusionCounts()
    scores = np.full(n, np.nan)
    has_scores = True
    stage_counts: list[ConfusionCounts] | None = None
    stage_criteria: tuple[str, ...] | None = None
    for fold_id, test_idx in enumerate(folds):
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        train_idx = np.flatnonzero(train_mask)
        fold_est = clone(estimator)
        fold_est.set_params(seed=derived_seed(seed, 1000, fold_id))
        train_articles = [articles[i] for i in train_idx]
        test_articles = [articles[i] for i in test_idx]
        fold_est.fit(train_articles, features=X[train_idx])
        predictions = fold_est.predict(test_articles, features=X[test_idx])
        counts = ConfusionCounts.from_predictions(y[test_idx], predictions)
        p, r, f = prf(counts)
        fold_results.append(
            FoldResult(fold=fold_id, counts=counts, precision=p, recall=r, f_measure=f)
        )
        pooled = pooled + counts
        if has_scores and hasattr(fold_est, "predict_proba"):
            scores[test_idx] = fold_est.predict_proba(test_articles, features=X[test_idx])
        else:
            has_scores = False
        if collect_stages and isinstance(
            fold_est, (CascadeClassifier, ConjunctionEnsembleClassifier)
        ):
            reports = per_stage_report(fold_est, test_articles, features=X[test_idx])
            if stage_counts is None:
                stage_counts = [r.counts for r in reports]
                stage_criteria = tuple(r.criterion for r in reports)
            else:
                stage_counts = [a + r.counts for a, r in zip(stage_counts, reports)]
    precision, recall, f = prf(pooled)
    operating_points = []
    if has_scores and np.isfinite(scores).all():
        for target in recall_targets:
            operating_points.append(fix_recall(scores, y, target))
    stages = []
    if stage_counts is not None:
        stages = [
            StageReport.from_counts(criterion, counts)
            for criterion, counts in zip(stage_criteria, stage_counts)
        ]
    return EvalReport(
        config=dict(config or {}),
        k=int(k),
        seed=int(seed),
        n_articles=n,
        counts=pooled,
        precision=precision,
        recall=recall,
        f_measure=f,
        folds=fold_results,
        stages=stages,
        operating_points=operating_points,
    )
