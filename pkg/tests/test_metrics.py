import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepf.errors import DataError
from deepf.metrics import (
    ConfusionStats,
    MetricsReport,
    accuracy,
    average_fbeta,
    confusion,
    coverage,
    fbeta_from_pr,
    micro_f1,
    per_class_fbeta,
    per_class_precision,
    per_class_recall,
    predictions_from_scores,
)


def majority_only(n_classes, head, n=100_000):
    """Labels with the given head share; every prediction is class 0."""
    n_head = int(round(head * n))
    rest = np.arange(n - n_head) % (n_classes - 1) + 1
    labels = np.concatenate([np.zeros(n_head, dtype=int), rest])
    return confusion(np.zeros(n, dtype=int), labels, n_classes)


class TestConfusion:
    def test_perfect(self):
        y = np.array([0, 1, 2, 2, 1])
        s = confusion(y, y, 3)
        assert not s.fp.any() and not s.fn.any()
        np.testing.assert_array_equal(s.tp, [1, 2, 2])

    def test_hand_counted(self):
        s = confusion([0, 0, 1, 2], [0, 1, 1, 2], 3)
        np.testing.assert_array_equal(s.tp, [1, 1, 1])
        np.testing.assert_array_equal(s.fp, [1, 0, 0])
        np.testing.assert_array_equal(s.fn, [0, 1, 0])
        assert coverage(s) == 3
        assert accuracy(s) == 0.75

    def test_majority_predictor_two_class(self):
        s = confusion(np.zeros(100, dtype=int), np.r_[np.zeros(76, dtype=int), np.ones(24, dtype=int)], 2)
        np.testing.assert_array_equal(per_class_recall(s), [1.0, 0.0])
        assert accuracy(s) == pytest.approx(0.76)
        assert coverage(s) == 1

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            confusion([0, 1], [0], 2)

    def test_out_of_range(self):
        with pytest.raises(DataError):
            confusion([0, 3], [0, 1], 3)

    def test_absent_classes_are_kept(self):
        s = confusion([0, 1], [0, 1], 5)
        assert s.n_classes == 5
        assert coverage(s) == 2

    def test_argmax_tie_goes_low(self):
        np.testing.assert_array_equal(predictions_from_scores(np.array([[0.4, 0.4, 0.2], [0.1, 0.45, 0.45]])), [0, 1])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_count_identities(self, seed):
        rng = np.random.default_rng(seed)
        k, n = int(rng.integers(2, 10)), int(rng.integers(1, 300))
        y, p = rng.integers(0, k, n), rng.integers(0, k, n)
        s = confusion(p, y, k)
        assert s.tp.sum() + s.fn.sum() == n == s.tp.sum() + s.fp.sum()
        np.testing.assert_array_equal(s.tp + s.fn, np.bincount(y, minlength=k))


class TestFbeta:
    def test_majority_class_f1_example(self):
        assert fbeta_from_pr(0.75, 1.0) == pytest.approx(0.857, abs=5e-4)

    def test_equal_precision_recall(self):
        for beta in (0.5, 1, 2, 4):
            assert fbeta_from_pr(0.37, 0.37, beta) == pytest.approx(0.37)

    def test_hand_evaluated_beta2(self):
        s = ConfusionStats(np.array([3]), np.array([1]), np.array([1]))
        assert per_class_fbeta(s, 2.0)[0] == pytest.approx(0.75)

    def test_zero_tp_scores_zero(self):
        s = ConfusionStats(np.array([0, 0]), np.array([0, 4]), np.array([3, 0]))
        np.testing.assert_array_equal(per_class_fbeta(s), [0.0, 0.0])
        np.testing.assert_array_equal(per_class_precision(s), [0.0, 0.0])

    def test_thirty_class_average(self):
        # one class at P=0.75/R=1, 29 classes scoring 0
        n = 1000
        labels = np.r_[np.zeros(750, dtype=int), np.arange(250) % 29 + 1]
        s = confusion(np.zeros(n, dtype=int), labels, 30)
        assert per_class_fbeta(s)[0] == pytest.approx(6 / 7)
        assert average_fbeta(s) == pytest.approx(6 / 7 / 30)
        assert average_fbeta(s) == pytest.approx(0.0286, abs=5e-5)

    def test_all_perfect(self):
        y = np.arange(12) % 4
        assert average_fbeta(confusion(y, y, 4), 2.0) == 1.0


class TestMicroF1:
    @pytest.mark.parametrize("k,head,expected", [(29, 0.737, 0.0293), (80, 0.226, 0.0046)])
    def test_majority_baseline(self, k, head, expected):
        s = majority_only(k, head)
        closed_form = 2 * head / (k * (head + 1))
        assert micro_f1(s) == pytest.approx(closed_form, rel=1e-9)
        assert abs(micro_f1(s) - expected) < 5e-4

    def test_equal_averages(self):
        s = ConfusionStats(np.array([2, 2]), np.array([2, 2]), np.array([2, 2]))
        assert micro_f1(s) == pytest.approx(0.5)

    def test_both_zero(self):
        s = ConfusionStats(np.array([0, 0]), np.array([1, 0]), np.array([0, 1]))
        assert micro_f1(s) == 0.0

    def test_differs_from_pooled_counts(self):
        s = majority_only(29, 0.737, n=10_000)
        assert micro_f1(s) < 0.1 < accuracy(s)


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_class_permutation(self, seed):
        rng = np.random.default_rng(seed)
        k, n = int(rng.integers(2, 8)), int(rng.integers(1, 200))
        y, p = rng.integers(0, k, n), rng.integers(0, k, n)
        perm = rng.permutation(k)
        a = confusion(p, y, k)
        b = confusion(np.argsort(perm)[p], np.argsort(perm)[y], k)
        np.testing.assert_array_equal(b.tp, a.permuted(perm).tp)
        for beta in (0.5, 2.0):
            ra, rb = MetricsReport.from_confusion(a, beta), MetricsReport.from_confusion(b, beta)
            assert ra.flat() == pytest.approx(rb.flat(), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_correcting_an_uncovered_class(self, seed):
        rng = np.random.default_rng(seed)
        k, n = int(rng.integers(2, 8)), int(rng.integers(2, 100))
        y, p = rng.integers(0, k, n), rng.integers(0, k, n)
        before = confusion(p, y, k)
        wrong = np.flatnonzero((p != y) & (before.tp[y] == 0))
        if wrong.size == 0:
            return
        p = p.copy()
        p[wrong[0]] = y[wrong[0]]
        assert coverage(confusion(p, y, k)) >= coverage(before) + 1

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_coverage_k_iff_all_recalled(self, seed):
        rng = np.random.default_rng(seed)
        k, n = int(rng.integers(2, 5)), int(rng.integers(1, 40))
        y, p = rng.integers(0, k, n), rng.integers(0, k, n)
        s = confusion(p, y, k)
        assert (coverage(s) == k) == bool(np.all(per_class_recall(s) > 0))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_report_bounds_and_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        k, n = int(rng.integers(2, 6)), int(rng.integers(1, 80))
        r = MetricsReport.from_confusion(confusion(rng.integers(0, k, n), rng.integers(0, k, n), k), 2.0)
        for name in ("avg_precision", "avg_recall", "micro_f1_paper", "avg_fbeta", "accuracy"):
            assert 0.0 <= getattr(r, name) <= 1.0
        assert 0 <= r.coverage <= k
        back = MetricsReport.from_dict(json.loads(json.dumps(r.to_dict())))
        assert back.flat() == r.flat()

    def test_sharded_merge(self):
        rng = np.random.default_rng(0)
        y, p = rng.integers(0, 4, 100), rng.integers(0, 4, 100)
        whole = confusion(p, y, 4)
        merged = confusion(p[:37], y[:37], 4) + confusion(p[37:], y[37:], 4)
        np.testing.assert_array_equal(whole.tp, merged.tp)
        np.testing.assert_array_equal(whole.fp, merged.fp)
