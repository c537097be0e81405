"""Metrics, curves, and the CI-overlap significance rule."""

import numpy as np
import pytest

from camosig.evaluation import (
    ConfusionMatrix,
    ErrorBar,
    EvaluationError,
    auc_score,
    confusion,
    error_bar,
    metrics,
    pr_curve,
    roc_curve,
    significant,
    write_curve_csv,
)


class TestConfusion:
    def test_perfect_prediction(self):
        cm = confusion([1, 0, 1, 0], [1, 0, 1, 0])
        assert (cm.fp, cm.fn) == (0, 0)
        assert (cm.tp, cm.tn) == (2, 2)

    def test_constructed_counts(self):
        truth = [1] * 90 + [1] * 10 + [0] * 80 + [0] * 20
        pred = [1] * 90 + [0] * 10 + [0] * 80 + [1] * 20
        cm = confusion(truth, pred)
        assert (cm.tp, cm.fn, cm.tn, cm.fp) == (90, 10, 80, 20)

    def test_all_predicted_positive(self):
        cm = confusion([1, 0, 0], [1, 1, 1])
        assert cm.fn == 0 and cm.tn == 0

    def test_length_mismatch_rejected(self):
        with pytest.raises(EvaluationError):
            confusion([1, 0], [1])

    def test_custom_positive_class(self):
        cm = confusion([0, 0, 1], [0, 1, 1], positive_class=0)
        assert cm.tp == 1 and cm.fn == 1

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 2, 50)
        pred = rng.integers(0, 2, 50)
        perm = rng.permutation(50)
        a = metrics(confusion(truth, pred))
        b = metrics(confusion(truth[perm], pred[perm]))
        assert a == b


class TestMetrics:
    def test_hand_values(self):
        m = metrics(ConfusionMatrix(tp=90, fp=20, tn=80, fn=10))
        assert m["accuracy"] == pytest.approx(0.85)
        assert m["precision"] == pytest.approx(0.81818, abs=1e-5)
        assert m["sensitivity"] == pytest.approx(0.9)
        assert m["specificity"] == pytest.approx(0.8)

    def test_undefined_precision_is_none(self):
        m = metrics(ConfusionMatrix(tp=0, fp=0, tn=5, fn=5))
        assert m["precision"] is None
        assert m["sensitivity"] == 0.0

    def test_undefined_specificity_is_none(self):
        m = metrics(ConfusionMatrix(tp=10, fp=0, tn=0, fn=0))
        assert m["accuracy"] == 1.0
        assert m["specificity"] is None

    def test_empty_rejected(self):
        with pytest.raises(EvaluationError):
            metrics(ConfusionMatrix(tp=0, fp=0, tn=0, fn=0))


class TestRoc:
    def test_perfect_separation(self):
        scores = [0.9, 0.8, 0.7, 0.2, 0.1]
        labels = [1, 1, 1, 0, 0]
        *_, auc = roc_curve(scores, labels)
        assert auc == 1.0

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(1)
        n = 4000
        scores = rng.normal(size=n)
        labels = rng.integers(0, 2, n)
        auc = auc_score(scores, labels)
        assert abs(auc - 0.5) <= 3.0 / np.sqrt(n)

    def test_reflection_identity_exact(self):
        rng = np.random.default_rng(2)
        scores = np.round(rng.normal(size=200), 2)  # force ties
        labels = rng.integers(0, 2, 200)
        labels[:2] = [0, 1]
        assert auc_score(-scores, labels) == 1.0 - auc_score(scores, labels)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=300)
        labels = rng.integers(0, 2, 300)
        labels[:2] = [0, 1]
        base = auc_score(scores, labels)
        assert auc_score(np.exp(scores), labels) == base
        assert auc_score(3.0 * scores + 7.0, labels) == base

    def test_reversed_labels_reflect_curve(self):
        rng = np.random.default_rng(4)
        scores = rng.normal(size=100)
        labels = rng.integers(0, 2, 100)
        labels[:2] = [0, 1]
        auc_pos = auc_score(scores, labels, positive_class=1)
        auc_neg = auc_score(scores, labels, positive_class=0)
        assert auc_pos == 1.0 - auc_neg

    def test_curve_endpoints(self):
        fpr, tpr, thr, _ = roc_curve([0.3, 0.7, 0.1], [1, 1, 0])
        assert fpr[0] == 0.0 and tpr[0] == 0.0
        assert fpr[-1] == 1.0 and tpr[-1] == 1.0
        assert thr[0] == np.inf

    def test_ties_grouped(self):
        fpr, tpr, thr, _ = roc_curve([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])
        assert len(thr) == 2  # inf plus the single tied threshold

    def test_single_class_rejected(self):
        with pytest.raises(EvaluationError):
            roc_curve([0.1, 0.2], [1, 1])

    def test_trapezoid_equivalence(self):
        """Midrank AUC equals the trapezoid area under the tie-grouped curve."""
        rng = np.random.default_rng(5)
        scores = np.round(rng.normal(size=150), 1)
        labels = rng.integers(0, 2, 150)
        labels[:2] = [0, 1]
        fpr, tpr, _, auc = roc_curve(scores, labels)
        trap = float(np.trapezoid(tpr, fpr))
        assert auc == pytest.approx(trap, abs=1e-12)


class TestPr:
    def test_perfect_ranking(self):
        recall, precision, _ = pr_curve([0.9, 0.8, 0.1], [1, 1, 0])
        assert recall[-1] == 1.0
        assert np.all(precision[:2] == 1.0)

    def test_all_negative_rejected(self):
        with pytest.raises(EvaluationError):
            pr_curve([0.5, 0.6], [0, 0])

    def test_precision_at_full_recall(self):
        recall, precision, _ = pr_curve([0.9, 0.2, 0.8, 0.1], [1, 1, 0, 0])
        assert recall[-1] == 1.0
        assert precision[-1] == pytest.approx(0.5)


class TestErrorBars:
    def test_hand_example(self):
        bar = error_bar([80.0, 82.0, 84.0])
        assert bar.mean == pytest.approx(82.0)
        assert bar.standard_error == pytest.approx(2.0 / np.sqrt(3.0), abs=1e-10)
        lo, hi = bar.ci95
        assert lo == pytest.approx(82.0 - 1.96 * bar.standard_error)
        assert hi == pytest.approx(82.0 + 1.96 * bar.standard_error)

    def test_se_scales_with_sqrt_m(self):
        base = np.array([1.0, 2.0, 3.0, 4.0])
        a = error_bar(base)
        # Rescale the 4-fold replication so its sample variance matches the
        # original exactly; the SE must then drop by exactly sqrt(4).
        rep = np.tile(base, 4)
        rep = rep.mean() + (rep - rep.mean()) * (base.std(ddof=1) / rep.std(ddof=1))
        b = error_bar(rep)
        assert b.standard_error == pytest.approx(a.standard_error / 2.0, abs=1e-12)

    def test_disjoint_intervals_significant(self):
        a = ErrorBar(mean=82.0, standard_error=1.0, n=3)
        b = ErrorBar(mean=87.0, standard_error=1.0, n=3)
        assert significant(a, b)
        assert significant(b, a)

    def test_identical_not_significant(self):
        a = error_bar([5.0, 6.0, 7.0])
        assert not significant(a, a)

    def test_overlapping_not_significant(self):
        a = ErrorBar(mean=80.0, standard_error=2.0, n=3)
        b = ErrorBar(mean=83.0, standard_error=2.0, n=3)
        assert not significant(a, b)

    def test_single_value_rejected(self):
        with pytest.raises(EvaluationError):
            error_bar([1.0])


class TestCurveCsv:
    def test_round_trip_readable(self, tmp_path):
        path = tmp_path / "roc.csv"
        write_curve_csv(path, [np.inf, 0.5], [0.0, 1.0], [0.0, 1.0])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "threshold,x,y"
        assert len(lines) == 3
