import pytest
from hypothesis import given
from hypothesis import strategies as st

from armgraph.errors import EmptyMatrix, LengthMismatch
from armgraph.metrics import ConfusionMatrix, confusion, metrics


def test_reference_matrix():
    r = metrics(ConfusionMatrix(68, 3, 3, 63))
    assert r.precision == pytest.approx(68 / 71)
    assert r.recall == pytest.approx(68 / 71)
    assert r.f1 == pytest.approx(68 / 71)
    assert r.false_alarm_rate == pytest.approx(3 / 66)
    assert r.accuracy == pytest.approx(131 / 137)


def test_perfect_classifier():
    r = metrics(ConfusionMatrix(7, 0, 0, 7))
    assert (r.precision, r.recall, r.f1, r.false_alarm_rate, r.accuracy) == (1.0, 1.0, 1.0, 0.0, 1.0)


def test_no_positives_leaves_ratios_undefined():
    r = metrics(ConfusionMatrix(0, 0, 0, 10))
    assert (r.accuracy, r.false_alarm_rate) == (1.0, 0.0)
    assert r.precision is None and r.recall is None and r.f1 is None
    assert "undefined" in r.format_table() and "precision=undefined" in r.format_kv()


def test_f1_undefined_when_precision_and_recall_are_zero():
    r = metrics(ConfusionMatrix(0, 2, 3, 1))
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, None)


def test_empty_matrix():
    with pytest.raises(EmptyMatrix):
        metrics(ConfusionMatrix(0, 0, 0, 0))


def test_confusion_examples():
    truth = [0] * 5 + [1] * 5
    assert confusion(truth, truth) == ConfusionMatrix(5, 0, 0, 5)
    truth = [0, 0, 0, 1, 1, 1, 1]
    assert confusion([1] * 7, truth) == ConfusionMatrix(0, 3, 0, 4)


def test_confusion_errors():
    with pytest.raises(LengthMismatch):
        confusion([0, 1], [0])
    with pytest.raises(ValueError):
        confusion([2], [0])


@given(st.lists(st.tuples(st.sampled_from([0, 1]), st.sampled_from([0, 1]))))
def test_confusion_matches_pair_count(pairs):
    preds = [p for p, _ in pairs]
    truth = [t for _, t in pairs]
    cm = confusion(preds, truth)
    assert cm.tp == pairs.count((0, 0))
    assert cm.fn == pairs.count((1, 0))
    assert cm.fp == pairs.count((0, 1))
    assert cm.tn == pairs.count((1, 1))
    if pairs:
        assert metrics(cm).accuracy == sum(p == t for p, t in pairs) / len(pairs)


def test_formatting():
    cm = ConfusionMatrix(68, 3, 3, 63)
    table = metrics(cm).format_table(cm)
    assert "95.77%" in table and "4.55%" in table and "95.62%" in table
    kv = dict(line.split("=") for line in metrics(cm).format_kv(cm).splitlines())
    assert kv["tp"] == "68" and float(kv["precision"]) == pytest.approx(68 / 71)
