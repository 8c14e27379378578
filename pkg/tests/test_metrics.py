"""Confusion counting, the eight-metric suite and its identities."""

import csv
import json
from fractions import Fraction

import numpy as np
import pytest

from lesionseg.metrics import (ConfusionMatrix, METRIC_FIELDS, Metrics,
                               confusion, metric_suite, report_row,
                               write_report)
from lesionseg.reference import enumerate_confusion
from lesionseg.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(2718)


class TestConfusion:
    def test_perfect_prediction_has_no_errors(self, rng):
        gt = (rng.random((8, 8)) > 0.5).astype(float)
        cm = confusion(Tensor(gt.copy()), Tensor(gt))
        assert cm.fp == 0 and cm.fn == 0
        assert cm.tp == int(gt.sum())

    def test_inverted_prediction_has_no_hits(self, rng):
        gt = (rng.random((8, 8)) > 0.5).astype(float)
        cm = confusion(Tensor(1.0 - gt), Tensor(gt))
        assert cm.tp == 0 and cm.tn == 0

    def test_hand_case_matches_enumeration(self):
        pred = np.array([[0.9, 0.1, 0.6, 0.4]] * 4)
        gt = np.array([[1.0, 0.0, 0.0, 1.0]] * 4)
        cm = confusion(Tensor(pred), Tensor(gt))
        tp, fp, fn, tn = enumerate_confusion(pred, gt)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (tp, fp, fn, tn)

    def test_counts_sum_to_pixel_count(self, rng):
        for _ in range(25):
            pred = rng.random((8, 8))
            gt = (rng.random((8, 8)) > rng.random()).astype(float)
            cm = confusion(Tensor(pred), Tensor(gt))
            assert cm.total == 64

    def test_hundred_random_pairs_match_bruteforce(self, rng):
        for _ in range(100):
            pred = rng.random((8, 8))
            gt = (rng.random((8, 8)) > rng.random()).astype(float)
            cm = confusion(Tensor(pred), Tensor(gt))
            assert (cm.tp, cm.fp, cm.fn, cm.tn) == enumerate_confusion(pred,
                                                                       gt)

    def test_merge_is_order_independent(self, rng):
        cms = [ConfusionMatrix(*rng.integers(0, 50, size=4))
               for _ in range(6)]
        forward = sum(cms[1:], cms[0])
        backward_ = sum(cms[-2::-1], cms[-1])
        assert forward == backward_

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(tp=-1)


class TestMetricSuite:
    def test_perfect_prediction_scores_one(self):
        m = metric_suite(ConfusionMatrix(tp=40, fp=0, fn=0, tn=24))
        for name in ("accuracy", "precision", "recall", "sensitivity",
                     "specificity", "f_measure", "jaccard", "mcc"):
            assert getattr(m, name) == 1.0
        assert not m.degenerate

    def test_documented_example(self):
        m = metric_suite(ConfusionMatrix(tp=6, fp=2, fn=2, tn=6))
        assert m.accuracy == 0.75
        assert m.jaccard == 0.6
        assert m.f_measure == 0.75  # dice
        assert m.mcc == 0.5

    def test_specificity_uses_tn_over_tn_plus_fp(self):
        m = metric_suite(ConfusionMatrix(tp=5, fp=10, fn=3, tn=30))
        assert m.specificity == 30 / 40
        assert m.sensitivity == m.recall == 5 / 8

    def test_dice_jaccard_identity_in_rational_arithmetic(self, rng):
        for _ in range(200):
            tp, fp, fn, tn = (int(v) for v in rng.integers(0, 40, size=4))
            if tp + fp + fn == 0:
                continue
            j = Fraction(tp, tp + fn + fp)
            dice = Fraction(2 * tp, 2 * tp + fp + fn)
            assert dice == 2 * j / (1 + j)
            m = metric_suite(ConfusionMatrix(tp, fp, fn, tn))
            assert abs(m.f_measure - 2 * m.jaccard / (1 + m.jaccard)) < 1e-12

    def test_ranges_over_random_matrices(self, rng):
        for _ in range(300):
            cm = ConfusionMatrix(*(int(v) for v in
                                   rng.integers(0, 100, size=4)))
            m = metric_suite(cm)
            assert -1.0 <= m.mcc <= 1.0
            assert m.jaccard <= m.f_measure <= 1.0
            for name in ("accuracy", "precision", "recall", "specificity"):
                assert 0.0 <= getattr(m, name) <= 1.0

    def test_zero_denominators_flagged(self):
        m = metric_suite(ConfusionMatrix(tp=0, fp=0, fn=0, tn=10))
        assert m.precision == 0.0 and m.recall == 0.0
        assert {"precision", "recall", "jaccard", "f_measure",
                "mcc"} <= m.degenerate

    def test_all_empty_matrix(self):
        m = metric_suite(ConfusionMatrix())
        assert m.accuracy == 0.0 and "accuracy" in m.degenerate


class TestReports:
    def test_csv_and_json_fields(self, tmp_path, rng):
        cm = ConfusionMatrix(tp=6, fp=2, fn=2, tn=6)
        rows = [report_row(metric_suite(cm), cm, "sample-1")]
        csv_path = tmp_path / "report.csv"
        json_path = tmp_path / "report.json"
        write_report(rows, csv_path, json_path)

        with open(csv_path) as fh:
            got = list(csv.DictReader(fh))
        assert list(got[0].keys()) == ["id", *METRIC_FIELDS,
                                       "tp", "fp", "fn", "tn"]
        assert got[0]["jaccard"] == "0.6"

        data = json.loads(json_path.read_text())
        assert data[0]["id"] == "sample-1"
        assert data[0]["tp"] == 6
        assert set(METRIC_FIELDS) <= set(data[0])
