import pytest
from hypothesis import given, strategies as st

from drowsense.metrics import ClassCounts, ConfusionTally, compute_metrics


def test_hand_counted_example():
    m = compute_metrics(ClassCounts(tp=9, fp=1, tn=8, fn=2))
    assert m["precision"] == pytest.approx(0.9)
    assert m["recall"] == pytest.approx(0.8182, abs=1e-4)
    assert m["false_alarm"] == pytest.approx(0.1111, abs=1e-4)
    assert m["missing_alarm"] == pytest.approx(0.1818, abs=1e-4)
    assert m["accuracy"] == pytest.approx(17 / 20)


def test_all_correct():
    tally = ConfusionTally.from_pairs(["a", "b", "a"], ["a", "b", "a"])
    m = compute_metrics(tally)
    assert m["overall"]["accuracy"] == 1.0
    assert m["a"]["false_alarm"] == 0.0
    assert m["b"]["missing_alarm"] == 0.0


def test_undefined_metrics_are_none():
    m = compute_metrics(ClassCounts(tp=0, fp=0, tn=5, fn=0))
    assert m["precision"] is None
    assert m["recall"] is None
    assert m["missing_alarm"] is None
    assert m["false_alarm"] == 0.0
    empty = compute_metrics(ConfusionTally.from_pairs([], [], ["a"]))
    assert empty["overall"]["accuracy"] is None


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        ClassCounts(tp=-1)
    with pytest.raises(ValueError):
        ConfusionTally.from_pairs(["a"], ["a", "b"])


labels = st.sampled_from(["N", "Y", "S", "O"])


@given(st.lists(st.tuples(labels, labels), min_size=1, max_size=60))
def test_metric_identities(pairs):
    truth, pred = zip(*pairs)
    tally = ConfusionTally.from_pairs(truth, pred, ["N", "Y", "S", "O"])
    m = compute_metrics(tally)
    assert tally.total == len(pairs)
    assert m["overall"]["accuracy"] == pytest.approx(sum(t == p for t, p in pairs) / len(pairs))
    for name, counts in tally.counts.items():
        assert counts.total == len(pairs)
        for value in m[name].values():
            assert value is None or 0.0 <= value <= 1.0
        if counts.tp + counts.fn:
            assert m[name]["recall"] + m[name]["missing_alarm"] == pytest.approx(1.0)
