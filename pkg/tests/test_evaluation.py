import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from signfusion.errors import EmptyEvaluation, IndexOutOfRange, LengthMismatch
from signfusion.evaluation import (ABLATION_ORDER, aggregate, class_metrics, confusion_matrix,
                                   evaluate_predictions, format_report, parse_report, read_ablation_csv,
                                   read_confusion_csv, read_report_json, round2, write_ablation_csv,
                                   write_confusion_csv, write_metrics_csv, write_report_json)

import report_fixture as published


def report_from_matrix(cm_counts, labels):
    truth, pred = [], []
    for i, j in zip(*np.nonzero(cm_counts)):
        truth += [i] * cm_counts[i, j]
        pred += [j] * cm_counts[i, j]
    return evaluate_predictions(truth, pred, labels)


@pytest.fixture(scope="module")
def published_report():
    return report_from_matrix(published.build_confusion(), published.LABELS)


def pairs(max_k=8, max_n=60):
    return st.integers(1, max_k).flatmap(lambda k: st.tuples(
        st.just(k),
        st.lists(st.tuples(st.integers(0, k - 1), st.integers(0, k - 1)), min_size=1, max_size=max_n)))


class TestConfusion:
    def test_example(self):
        cm = confusion_matrix([0, 1, 1, 2], [0, 1, 2, 2], 3)
        np.testing.assert_array_equal(cm.counts, [[1, 0, 0], [0, 1, 1], [0, 0, 1]])

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            confusion_matrix([0, 1], [0], 2)
        with pytest.raises(IndexOutOfRange):
            confusion_matrix([0, 3], [0, 1], 3)
        with pytest.raises(EmptyEvaluation):
            aggregate(confusion_matrix([], [], 3))

    @given(pairs())
    def test_counts_and_accuracy(self, case):
        k, tp = case
        truth, pred = zip(*tp)
        cm = confusion_matrix(truth, pred, k)
        assert cm.total == len(tp)
        rep = aggregate(cm)
        assert rep.accuracy == sum(a == b for a, b in tp) / len(tp)
        for m in rep.per_class:
            assert 0 <= m.precision <= 1 and 0 <= m.recall <= 1 and 0 <= m.f1 <= 1
        # weighted recall is the accuracy
        assert rep.weighted_avg[1] == pytest.approx(rep.accuracy, abs=1e-12)

    @given(pairs(), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, case, rnd):
        k, tp = case
        shuffled = list(tp)
        rnd.shuffle(shuffled)
        a = aggregate(confusion_matrix(*zip(*tp), k))
        b = aggregate(confusion_matrix(*zip(*shuffled), k))
        np.testing.assert_array_equal(a.confusion.counts, b.confusion.counts)
        assert a.macro_avg == b.macro_avg and a.weighted_avg == b.weighted_avg

    def test_zero_division_reported(self):
        rep = evaluate_predictions([0, 0], [0, 0], ["a", "b"])
        assert rep.per_class[1].precision == 0.0 and rep.per_class[1].recall == 0.0
        assert rep.metadata["zero_division"] == {"precision": 1, "recall": 1}


class TestPublishedReport:
    def test_matrix_shape(self):
        cm = published.build_confusion()
        assert cm.shape == (18, 18) and cm.sum() == 27 and np.trace(cm) == 21

    def test_rows_reproduced(self, published_report):
        for (label, p, r, f, s), m in zip(published.ROWS, published_report.per_class):
            got = (float(round2(m.precision)), float(round2(m.recall)), float(round2(m.f1)), m.support)
            assert got == (p, r, f, s), label

    def test_aggregates(self, published_report):
        rep = published_report
        assert rep.accuracy == pytest.approx(21 / 27, abs=1e-12)
        # oracle: direct averages of exact per-class values
        prec = [1] * 13 + [1 / 3] * 2 + [0] * 3
        f1 = [1] * 11 + [2 / 3] * 2 + [0.5] * 2 + [0] * 3
        assert rep.macro_avg[0] == pytest.approx(sum(prec) / 18, abs=1e-12)
        assert rep.macro_avg[1] == pytest.approx(14 / 18, abs=1e-12)
        assert rep.macro_avg[2] == pytest.approx(sum(f1) / 18, abs=1e-12)
        assert rep.macro_avg[0] == pytest.approx(0.7593, abs=5e-4)
        assert rep.macro_avg[2] == pytest.approx(0.7411, abs=5e-4)

    def test_printed_aggregates(self, published_report):
        rep = published_report
        assert float(round2(rep.accuracy)) == published.ACCURACY
        assert tuple(float(round2(v)) for v in rep.macro_avg) == published.MACRO
        assert tuple(float(round2(v)) for v in rep.weighted_avg) == published.WEIGHTED

    def test_report_text(self, published_report):
        text = format_report(published_report)
        lines = text.splitlines()
        assert lines[0] == "Label\tPrecision\tRecall\tF1-Score\tSupport"
        assert lines[5] == "باص\t1.00\t0.50\t0.67\t2"
        assert lines[-3] == "Accuracy\t\t\t0.78\t27"
        assert lines[-2] == "Macro Avg\t0.76\t0.78\t0.74\t27"
        parsed = parse_report(text)
        for label, p, r, f, s in published.ROWS:
            assert parsed["classes"][label] == (p, r, f, s)


class TestRounding:
    @pytest.mark.parametrize("x,expected", [(0.125, "0.13"), (0.675, "0.68"), (2 / 3, "0.67"),
                                            (0.005, "0.01"), (1.0, "1.00"), (0.0, "0.00")])
    def test_half_up(self, x, expected):
        assert round2(x) == expected


class TestExports:
    def test_json_roundtrip(self, tmp_path, published_report):
        write_report_json(tmp_path / "r.json", published_report)
        back = read_report_json(tmp_path / "r.json")
        np.testing.assert_array_equal(back.confusion.counts, published_report.confusion.counts)
        assert back.macro_avg == published_report.macro_avg
        assert format_report(back) == format_report(published_report)

    def test_confusion_csv(self, tmp_path, published_report):
        write_confusion_csv(tmp_path / "c.csv", published_report.confusion)
        back = read_confusion_csv(tmp_path / "c.csv")
        assert back.labels == published.LABELS
        np.testing.assert_array_equal(back.counts, published_report.confusion.counts)

    def test_metrics_csv(self, tmp_path, published_report):
        write_metrics_csv(tmp_path / "m.csv", published_report)
        rows = (tmp_path / "m.csv").read_text().splitlines()
        assert rows[0] == "metric,value" and len(rows) == 8
        assert float(rows[1].split(",")[1]) == published_report.accuracy

    def test_ablation_csv(self, tmp_path):
        acc = {"fusion": 0.78, "leap_only": 0.59, "image_only": 0.7}
        write_ablation_csv(tmp_path / "a.csv", acc)
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert [ln.split(",")[0] for ln in lines[1:]] == list(ABLATION_ORDER)
        assert read_ablation_csv(tmp_path / "a.csv") == acc
