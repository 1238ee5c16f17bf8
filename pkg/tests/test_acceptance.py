"""Release-gate checks for the screening pipeline.

Each test here pins one externally meaningful guarantee: reference metric
values reproduce, the samplers and threshold search match independent
oracles, gradients agree with central differences, the two staged inference
styles are label-equivalent, and the four architectures hit their expected
quality and ordering on seeded synthetic corpora.  The conftest hook prints
one ACCEPTANCE PASS/FAIL line per test.
"""

import dataclasses
import json
import os
import time
from collections import Counter

import numpy as np
import pytest
import scipy.sparse as sp

from litscreen.baselines import load_baselines
from litscreen.cli import main
from litscreen.corpus import (
    default_positive_spec,
    del_fiol_subset_spec,
    derive_labels,
    filter_subset,
    load_corpus,
)
from litscreen.ensembles import (
    CascadeClassifier,
    ConjunctionEnsembleClassifier,
    EmbeddingCombinerClassifier,
    IntegratedClassifier,
    TaskSpec,
)
from litscreen.evaluation import (
    ConfusionCounts,
    cross_validate,
    error_rate_reduction,
    f_measure,
    fix_recall,
    stratified_kfold,
)
from litscreen.features import HashingFeaturizer, corpus_length_stats
from litscreen.models import LogisticClassifier, MlpClassifier, grad_check
from litscreen.sampling import SamplingPlan, resample
from litscreen.synth import SynthConfig, generate_synthetic


# Published precision/recall operating points of prior screening systems,
# with the F-measure each study reported.  Our prf must reproduce the
# reported F from (P, R) alone.
REFERENCE_POINTS = [
    ("del_fiol_cnn", 0.346, 0.969, 0.51),
    ("mcmaster_cq_balanced", 0.409, 0.970, 0.575),
    ("mcmaster_cq_broad", 0.224, 0.984, 0.365),
    ("marshall_cnn_pt_voting", 0.559, 0.957, 0.7058),
    ("marshall_svm_pt_voting", 0.210, 0.985, 0.3462),
]


def test_f_measure_reference_points():
    """F computed from published (P, R) matches each reported F within
    0.0005, and the packaged baseline table carries the same numbers."""
    start = time.monotonic()
    for name, p, r, f_reported in REFERENCE_POINTS:
        assert f_measure(p, r) == pytest.approx(f_reported, abs=5e-4), name
    packaged = load_baselines()
    assert set(packaged) == {name for name, *_ in REFERENCE_POINTS}
    for name, p, r, f_reported in REFERENCE_POINTS:
        b = packaged[name]
        assert (b.precision, b.recall) == (p, r)
        assert b.f_measure == pytest.approx(f_reported, abs=5e-4)
    assert time.monotonic() - start < 1.0


def test_error_rate_reduction_reference_points():
    """Relative F-error reduction against the two strongest prior systems
    lands on the headline percentages within 0.1 points."""
    start = time.monotonic()
    assert error_rate_reduction(0.510, 0.7505) == pytest.approx(0.491, abs=1e-3)
    assert error_rate_reduction(0.7058, 0.7639) == pytest.approx(0.197, abs=1e-3)
    assert time.monotonic() - start < 1.0


class _ColumnProbe:
    """Stage stand-in whose probability is feature column ``k``."""

    threshold = 0.5

    def __init__(self, k):
        self.k = k

    def predict_proba(self, X):
        return np.asarray(X.todense())[:, self.k].ravel()


def test_cascade_conjunction_label_agreement():
    """The same stage models produce identical labels under cascade and
    conjunction inference: exhaustively on the 16-row decision table and on
    10,000 synthetic articles with imperfect trained stages."""
    start = time.monotonic()

    rows = [[(i >> k) & 1 for k in range(4)] for i in range(16)]
    table = sp.csr_matrix(np.array(rows, dtype=float))
    probes = [_ColumnProbe(k) for k in range(4)]
    cascade = CascadeClassifier.from_stage_models(probes)
    conjunction = ConjunctionEnsembleClassifier.from_stage_models(probes)
    want = np.array([int(i == 0b1111) for i in range(16)])
    assert np.array_equal(cascade.predict(None, features=table), want)
    assert np.array_equal(conjunction.predict(None, features=table), want)

    feat = HashingFeaturizer(hash_dim=2**14, use_pt_tag=True)
    train = list(generate_synthetic(SynthConfig(size=6600, neg_per_pos=10.0, signal=0.9, seed=3)))
    conj = ConjunctionEnsembleClassifier(
        featurizer=feat, estimator=LogisticClassifier(epochs=4, learning_rate=0.5), seed=7
    )
    conj.fit(train)
    twin = CascadeClassifier.from_stage_models(conj.stage_models_, featurizer=feat)

    eval_arts = list(generate_synthetic(SynthConfig(size=10000, neg_per_pos=10.0, signal=0.9, seed=9)))
    labels_conj = conj.predict(eval_arts)
    labels_casc = twin.predict(eval_arts)
    assert labels_conj.shape == (10000,)
    # signal 0.9 leaves the stages imperfect, so both label classes occur
    assert 0 < labels_conj.sum() < 10000
    assert np.array_equal(labels_conj, labels_casc)
    assert time.monotonic() - start < 10.0


def _sparse_sample(rng, rows, dim, density=0.3):
    mask = rng.random((rows, dim)) < density
    return sp.csr_matrix(rng.normal(size=(rows, dim)) * mask)


def _labels_with_both_classes(rng, rows):
    y = rng.integers(0, 2, size=rows)
    y[0], y[1] = 1, 0
    return y


def test_gradient_checks():
    """Analytic gradients match central differences within 1e-4 on 100
    seeded (model, sample) pairs for the linear model, the MLP, and the
    end-to-end stage-plus-combiner composition."""
    start = time.monotonic()

    # weight scale 0.4 keeps the sigmoids unsaturated; with |z| large the
    # true gradients vanish and finite differences are pure roundoff
    for i in range(100):
        rng = np.random.default_rng(4000 + i)
        model = LogisticClassifier()
        model.weights_ = rng.normal(0, 0.4, size=40)
        model.bias_ = float(rng.normal(0, 0.2))
        model.n_features_in_ = 40
        err = grad_check(model, _sparse_sample(rng, 12, 40), _labels_with_both_classes(rng, 12))
        assert err < 1e-4, f"linear pair {i}: {err}"

    # tanh keeps the loss surface smooth; relu kinks break central differences
    for i in range(100):
        rng = np.random.default_rng(5000 + i)
        model = MlpClassifier(hidden_dim=8, activation="tanh")
        model.hidden_weights_ = rng.normal(0, 0.4, size=(30, 8))
        model.hidden_bias_ = rng.normal(0, 0.2, size=8)
        model.output_weights_ = rng.normal(0, 0.4, size=8)
        model.output_bias_ = float(rng.normal(0, 0.2))
        model.n_features_in_ = 30
        err = grad_check(
            model, _sparse_sample(rng, 10, 30), _labels_with_both_classes(rng, 10),
            max_entries_per_array=60, seed=i,
        )
        assert err < 1e-4, f"mlp pair {i}: {err}"

    feat = HashingFeaturizer(hash_dim=256)
    for m in range(4):
        arts = list(generate_synthetic(SynthConfig(size=550, neg_per_pos=4.0, seed=60 + m)))
        est = EmbeddingCombinerClassifier(
            featurizer=feat,
            stage_estimator=MlpClassifier(hidden_dim=4, activation="tanh", epochs=2, batch_size=16),
            combiner_hidden_dim=6,
            combiner_activation="tanh",
            joint_epochs=1,
            seed=m,
        )
        est.fit(arts)
        for j in range(25):
            rng = np.random.default_rng(6000 + 25 * m + j)
            err = grad_check(
                est, _sparse_sample(rng, 6, 256, density=0.05),
                _labels_with_both_classes(rng, 6),
                max_entries_per_array=60, seed=j,
            )
            assert err < 1e-4, f"composed pair ({m}, {j}): {err}"

    assert time.monotonic() - start < 30.0


def test_sampling_plan_multiplicities():
    """Oversampling 1,587 positives to 15,000 duplicates each one 9 or 10
    times (717 tens, 870 nines) while 15,000 negatives from a larger pool
    stay distinct."""
    start = time.monotonic()
    positives = [f"p{i}" for i in range(1587)]
    negatives = [f"n{i}" for i in range(49003)]
    pairs = resample(positives, negatives, SamplingPlan(15000, 15000, seed=0))
    assert len(pairs) == 30000

    pos_drawn = [item for item, label in pairs if label == 1]
    neg_drawn = [item for item, label in pairs if label == 0]
    assert len(pos_drawn) == 15000 and len(neg_drawn) == 15000
    multiplicity = Counter(Counter(pos_drawn).values())
    assert multiplicity == {10: 717, 9: 870}
    assert len(set(neg_drawn)) == 15000
    assert time.monotonic() - start < 1.0


def test_stratified_folds_and_micro_identity():
    """Ten stratified folds of a 50,590-article corpus keep per-class counts
    within one (1,587 positives split 158/159) and pooled confusion counts
    equal the sum of per-fold counts."""
    start = time.monotonic()
    y = np.zeros(50590, dtype=bool)
    y[:1587] = True
    folds = stratified_kfold(y, k=10, seed=4)

    all_idx = np.concatenate(folds)
    assert len(all_idx) == 50590 and len(np.unique(all_idx)) == 50590
    pos_sizes = sorted(int(y[f].sum()) for f in folds)
    assert pos_sizes == [158, 158, 158] + [159] * 7
    neg_sizes = [int((~y[f]).sum()) for f in folds]
    assert max(neg_sizes) - min(neg_sizes) <= 1

    rng = np.random.default_rng(17)
    predictions = rng.random(50590) < 0.4
    pooled = sum(
        (ConfusionCounts.from_predictions(y[f], predictions[f]) for f in folds),
        ConfusionCounts(0, 0, 0, 0),
    )
    assert pooled == ConfusionCounts.from_predictions(y, predictions)
    assert time.monotonic() - start < 5.0


def _brute_force_fix_recall(scores, y, target):
    """Largest threshold (scanning every distinct score) whose recall meets
    the target; everything-positive always qualifies, so one exists."""
    best = None
    for t in np.unique(scores):
        predicted = scores >= t
        tp = int(np.sum(predicted & y))
        recall = tp / int(y.sum())
        if recall >= target:
            best = float(t)
    return best


def test_fixed_recall_thresholds():
    """fix_recall returns the same threshold as an exhaustive scan on 200
    seeded score lists, including heavily tied ones, and always meets the
    recall floor."""
    start = time.monotonic()
    targets = [0.5, 0.7, 0.9, 0.95, 0.99]
    for i in range(200):
        rng = np.random.default_rng(7000 + i)
        n = int(rng.integers(20, 400))
        y = rng.random(n) < 0.3
        y[0] = True
        scores = rng.normal(size=n) + y
        if i % 3 == 0:
            scores = np.round(scores, 1)  # quantized scores force ties
        target = targets[i % len(targets)]

        op = fix_recall(scores, y, target)
        assert op.recall >= target
        assert op.threshold == _brute_force_fix_recall(scores, y, target)
        predicted = scores >= op.threshold
        counts = ConfusionCounts.from_predictions(y, predicted)
        assert op.precision == pytest.approx(counts.tp / (counts.tp + counts.fp))
        assert op.recall == pytest.approx(counts.tp / (counts.tp + counts.fn))
    assert time.monotonic() - start < 5.0


# Rigor-marker corruption map for the noisy synthetic variant below.
_RIGOR_FLIP = {}
for _stem in ("rigorsig", "rigorcue", "ptrigor"):
    _RIGOR_FLIP[_stem + "true"] = _stem + "false"
    _RIGOR_FLIP[_stem + "false"] = _stem + "true"


def _flip_rigor_tokens(text):
    return " ".join(_RIGOR_FLIP.get(tok, tok) for tok in text.split())


def _noisy_rigor_variant(articles, seed, p_fail=0.6, p_base=0.1):
    """Corrupt rigor display markers, mostly on articles that already fail
    an earlier criterion.

    Rigor evidence is least reliable exactly where annotation stops early,
    so the corruption rate is higher on upstream failures.  Conditional
    training sees cleaner rigor pools there, which is the effect the
    architecture ordering below exercises.  Gold ratings are untouched.
    """
    rng = np.random.default_rng(seed)
    upstream = TaskSpec.from_criteria(default_positive_spec()).stages[:3]
    out = []
    for art in articles:
        fails = any(s.is_rated(art.ratings) and not s.gold(art.ratings) for s in upstream)
        if rng.random() < (p_fail if fails else p_base):
            art = dataclasses.replace(
                art,
                abstract=_flip_rigor_tokens(art.abstract),
                pt_tags=tuple(_flip_rigor_tokens(t) for t in art.pt_tags),
            )
        out.append(art)
    return out


def test_architecture_comparison_on_synthetic():
    """On a clean 33,000-article 1:32 corpus every architecture reaches
    cross-validated F >= 0.95; on the noisy-rigor variant the cascade is at
    least as precise as the conjunction ensemble and the integrated model
    recalls at least as much as the cascade.  Fixed seeds throughout: this
    pins the observed ordering as a regression, not a universal law."""
    start = time.monotonic()
    feat = HashingFeaturizer(hash_dim=2**16, use_pt_tag=True)
    base = list(generate_synthetic(SynthConfig(size=33000, neg_per_pos=32.0, seed=42)))

    def architectures():
        return [
            ("integrated", IntegratedClassifier(
                featurizer=feat,
                estimator=LogisticClassifier(epochs=10, learning_rate=0.5),
                plan=SamplingPlan(2000, 8000),
            )),
            ("cascade", CascadeClassifier(
                featurizer=feat, estimator=LogisticClassifier(epochs=8, learning_rate=0.5),
            )),
            ("conjunction", ConjunctionEnsembleClassifier(
                featurizer=feat, estimator=LogisticClassifier(epochs=8, learning_rate=0.5),
            )),
            ("combiner", EmbeddingCombinerClassifier(
                featurizer=feat,
                stage_estimator=MlpClassifier(hidden_dim=32, epochs=6, batch_size=128),
                stage_plans=SamplingPlan(4000, 4000),
                plan=SamplingPlan(2000, 4000),
                joint_epochs=10,
            )),
        ]

    for name, est in architectures():
        report = cross_validate(est, base, k=10, seed=1)
        assert report.f_measure >= 0.95, f"{name} on clean corpus: F {report.f_measure:.4f}"

    noisy = _noisy_rigor_variant(base, seed=5)
    scores = {}
    for name, est in architectures():
        if name == "combiner":
            continue  # the ordering claim concerns the other three
        scores[name] = cross_validate(est, noisy, k=10, seed=1)
    assert scores["cascade"].precision >= scores["conjunction"].precision, (
        f"cascade P {scores['cascade'].precision:.4f} < "
        f"conjunction P {scores['conjunction'].precision:.4f}"
    )
    assert scores["integrated"].recall >= scores["cascade"].recall, (
        f"integrated R {scores['integrated'].recall:.4f} < "
        f"cascade R {scores['cascade'].recall:.4f}"
    )
    assert time.monotonic() - start < 600.0


def test_report_determinism(tmp_path):
    """Two runs of the same experiment configuration produce byte-identical
    report JSON."""
    config = {
        "name": "det",
        "architecture": "cascade",
        "corpus": {"synthetic": {"size": 660, "neg_per_pos": 10.0, "seed": 11}},
        "featurizer": {"hash_dim": 16384},
        "model": {"kind": "logistic", "epochs": 3},
        "k": 3,
        "seed": 5,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "det" / "report.json").read_bytes()
    second = (tmp_path / "b" / "det" / "report.json").read_bytes()
    assert first == second


@pytest.mark.skipif(
    not os.environ.get("CLINICAL_HEDGES_EXPORT"),
    reason="set CLINICAL_HEDGES_EXPORT to the exported corpus file to enable",
)
def test_clinical_hedges_export():
    """Checks against the licensed annotated corpus, when a local export is
    available: population counts for the full task and the replication
    subset, and the pre-truncation token-length profile."""
    corpus = load_corpus(os.environ["CLINICAL_HEDGES_EXPORT"])
    assert len(corpus) == 50590
    labels = derive_labels(corpus, default_positive_spec())
    assert int(labels.sum()) == 1587
    assert int((~labels).sum()) == 49003

    subset = filter_subset(corpus, del_fiol_subset_spec())
    assert len(subset) == 28331
    sub_labels = derive_labels(subset, default_positive_spec())
    assert int(sub_labels.sum()) == 1553
    assert int((~sub_labels).sum()) == 26778

    stats = corpus_length_stats(corpus)
    assert stats.mean == pytest.approx(178.82, abs=0.005)
    assert stats.max == 856
