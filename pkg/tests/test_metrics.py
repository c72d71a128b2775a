"""Accuracy granularities, calibration error, Brier score."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affuq import (
    Granularity,
    InvalidInputError,
    brier,
    ece,
    evaluate_predictions,
    mean_accuracy,
    micro_accuracy,
    remap,
)
from affuq.metrics import reliability_csv


class TestRemap:
    def test_full_tables(self):
        assert [remap(x, Granularity.SEVEN) for x in range(7)] == list(range(7))
        assert [remap(x, Granularity.THREE) for x in range(7)] == [0, 1, 1, 1, 1, 1, 2]
        assert [remap(x, Granularity.BINARY) for x in range(7)] == [0, 1, 1, 1, 1, 1, 1]

    def test_exception_cases(self):
        assert remap(3, Granularity.THREE) == 1
        assert remap(3, Granularity.BINARY) == 1

    def test_positive_everywhere(self):
        for granularity in Granularity:
            assert remap(0, granularity) == 0

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            remap(7, Granularity.SEVEN)
        with pytest.raises(InvalidInputError):
            remap(-1, Granularity.BINARY)


class TestMeanAccuracy:
    def test_perfect(self):
        labels = [0, 1, 2, 3, 4, 5, 6]
        for granularity in Granularity:
            assert mean_accuracy(labels, labels, granularity) == 1.0

    def test_macro_recall_hand_example(self):
        # labels {positive, negative}, predictions all positive:
        # recall 1.0 for class 0 and 0.0 for class 1
        assert mean_accuracy([0, 0], [0, 6], Granularity.BINARY) == 0.5

    def test_single_class_labels(self):
        assert mean_accuracy([2, 2, 2], [2, 2, 2], Granularity.SEVEN) == 1.0

    def test_absent_classes_excluded(self):
        # only classes 0 and 6 occur; the five exception classes do not
        # contribute terms to the macro mean
        value = mean_accuracy([0, 0, 6, 6], [0, 0, 6, 0], Granularity.SEVEN)
        assert value == pytest.approx((2 / 3 + 1.0) / 2)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            mean_accuracy([0], [0, 1], Granularity.SEVEN)

    def test_bounded_and_exact_iff_perfect(self):
        gen = np.random.default_rng(4)
        labels = gen.integers(0, 7, size=40)
        preds = labels.copy()
        preds[3] = (preds[3] + 1) % 7
        assert mean_accuracy(preds, labels, Granularity.SEVEN) < 1.0
        assert mean_accuracy(labels, labels, Granularity.SEVEN) == 1.0

    def test_micro(self):
        assert micro_accuracy([0, 0, 6], [0, 6, 6], Granularity.BINARY) \
            == pytest.approx(2 / 3)


class TestEce:
    def test_calibrated_single_bin(self):
        value, bins = ece([0.8] * 5, [True, True, True, True, False], 10)
        assert value == pytest.approx(0.0, abs=1e-12)
        assert bins.counts[7] == 5

    def test_overconfident_half_right(self):
        value, _ = ece([1.0] * 10, [True] * 5 + [False] * 5, 10)
        assert value == 0.5

    def test_single_bin_degenerates_to_gap(self):
        confidences = [0.3, 0.5, 0.9, 1.0]
        correct = [True, False, True, False]
        value, bins = ece(confidences, correct, 1)
        assert bins.num_bins == 1
        assert value == pytest.approx(abs(0.5 - np.mean(confidences)))

    def test_rejects_out_of_range_confidence(self):
        with pytest.raises(InvalidInputError):
            ece([0.0], [True], 10)
        with pytest.raises(InvalidInputError):
            ece([1.2], [True], 10)

    def test_boundary_values_land_in_closed_upper_bins(self):
        _, bins = ece([0.1, 0.8, 1.0], [True, True, True], 10)
        assert bins.counts[0] == 1   # (0.0, 0.1]
        assert bins.counts[7] == 1   # (0.7, 0.8]
        assert bins.counts[9] == 1   # (0.9, 1.0]

    @given(st.lists(st.tuples(st.floats(min_value=1e-6, max_value=1.0),
                              st.booleans()),
                    min_size=1, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_permutation_invariant_and_bounded(self, pairs):
        confidences = [c for c, _ in pairs]
        correct = [k for _, k in pairs]
        value, bins = ece(confidences, correct, 10)
        assert 0.0 <= value <= 1.0
        assert sum(bins.counts) == len(pairs)
        reversed_value, _ = ece(confidences[::-1], correct[::-1], 10)
        assert value == pytest.approx(reversed_value, abs=1e-12)

    @given(st.lists(st.tuples(st.floats(min_value=1e-6, max_value=1.0),
                              st.booleans()),
                    min_size=1, max_size=60))
    @settings(max_examples=40, deadline=None)
    def test_bin_refinement_preserves_count(self, pairs):
        confidences = [c for c, _ in pairs]
        correct = [k for _, k in pairs]
        coarse_value, coarse = ece(confidences, correct, 10)
        fine_value, fine = ece(confidences, correct, 20)
        assert sum(coarse.counts) == sum(fine.counts) == len(pairs)
        assert 0.0 <= fine_value <= 1.0


def simplex_grid(step=0.05):
    ticks = np.arange(0.0, 1.0 + 1e-12, step)
    for a, b in itertools.product(ticks, repeat=2):
        if a + b <= 1.0 + 1e-12:
            yield np.array([a, b, 1.0 - a - b])


class TestBrier:
    def test_one_hot_correct_is_zero(self):
        probs = np.eye(7)[[0, 3, 6]]
        assert brier(probs, [0, 3, 6]) == 0.0

    def test_uniform_over_seven(self):
        # closed form: (1 - 1/R)^2 + (R - 1)/R^2 = 1 - 1/R
        probs = np.full((5, 7), 1 / 7)
        assert brier(probs, [0, 1, 2, 3, 4]) == pytest.approx(1 - 1 / 7, abs=1e-12)

    def test_one_hot_wrong_is_two(self):
        probs = np.eye(3)[[0, 0]]
        assert brier(probs, [1, 2]) == 2.0

    def test_minimized_by_class_frequencies(self):
        # grid-search oracle over the 3-simplex: no constant predictor
        # beats the empirical frequency vector
        gen = np.random.default_rng(8)
        labels = gen.integers(0, 3, size=37)
        freq = np.bincount(labels, minlength=3) / labels.size

        def constant_brier(q):
            return brier(np.tile(q, (labels.size, 1)), labels)

        best_value = constant_brier(freq)
        for q in simplex_grid():
            assert best_value <= constant_brier(q) + 1e-9

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            brier(np.array([[0.7, 0.7]]), [0])
        with pytest.raises(InvalidInputError):
            brier(np.array([[0.5, 0.5]]), [2])
        with pytest.raises(InvalidInputError):
            brier(np.array([[0.5, 0.5]]), [0, 1])


class TestEvaluatePredictions:
    def test_perfect_predictions(self):
        probs = np.eye(7)[[0, 1, 6, 6]] * 0.93 + 0.01
        labels = [0, 1, 6, 6]
        report = evaluate_predictions(probs, labels, num_bins=10)
        assert report.macro_acc_seven == 1.0
        assert report.macro_acc_three == 1.0
        assert report.macro_acc_binary == 1.0
        assert report.micro_acc_seven == 1.0
        assert report.sample_count == 4

    def test_granularity_ordering_on_exception_confusions(self):
        # predicting the wrong exception kind is forgiven at three-way
        # granularity but not at seven-way
        probs = np.eye(7)[[2, 3, 0, 6]]
        labels = [3, 2, 0, 6]
        report = evaluate_predictions(probs, labels)
        assert report.micro_acc_seven == 0.5
        assert report.micro_acc_three == 1.0
        assert report.micro_acc_binary == 1.0

    def test_too_many_classes_rejected(self):
        probs = np.full((2, 9), 1 / 9)
        with pytest.raises(InvalidInputError):
            evaluate_predictions(probs, [0, 1])

    def test_report_serializes(self):
        probs = np.full((3, 7), 1 / 7)
        report = evaluate_predictions(probs, [0, 1, 2])
        doc = report.to_json_dict()
        assert doc["sample_count"] == 3
        assert len(doc["bins"]["counts"]) == 10


class TestReliabilityCsv:
    def test_layout(self):
        _, bins = ece([0.15, 0.85, 0.95], [True, False, True], 10)
        text = reliability_csv(bins)
        lines = text.strip().splitlines()
        assert lines[0] == "bin_center,acc,conf,count"
        assert len(lines) == 11
        first = lines[1].split(",")
        assert float(first[0]) == pytest.approx(0.05)
        assert first[3] == "0"
