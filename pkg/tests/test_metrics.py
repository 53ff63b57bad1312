import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riesense import metrics as mt
from riesense.errors import ContractError

NAMES = ["a", "b", "c"]


def brute_force(y_true, y_pred, classes):
    """Per-sample counting with plain Python, following the metric definitions."""
    precision, recall, f1 = [], [], []
    for k in range(classes):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == k and p == k)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != k and p == k)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == k and p != k)
        pk = tp / (tp + fp) if tp + fp else 0.0
        rk = tp / (tp + fn) if tp + fn else 0.0
        precision.append(pk)
        recall.append(rk)
        f1.append(2 * pk * rk / (pk + rk) if pk + rk else 0.0)
    accuracy = sum(1 for t, p in zip(y_true, y_pred) if t == p) / len(y_true)
    return precision, recall, f1, accuracy


def labels_from_confusion(cm):
    y_true, y_pred = [], []
    for i, row in enumerate(cm):
        for j, n in enumerate(row):
            y_true += [i] * int(n)
            y_pred += [j] * int(n)
    return y_true, y_pred


class TestHandComputed:
    cm = [[5, 1, 0], [1, 4, 0], [0, 0, 5]]

    def test_values(self):
        r = mt.MetricsReport.from_confusion(self.cm, NAMES)
        np.testing.assert_allclose(r.precision, [5 / 6, 4 / 5, 1.0], rtol=1e-15)
        np.testing.assert_allclose(r.recall, [5 / 6, 4 / 5, 1.0], rtol=1e-15)
        np.testing.assert_allclose(r.f1, [5 / 6, 4 / 5, 1.0], rtol=1e-15)
        assert r.accuracy == 14 / 16
        assert r.macro_f1 == pytest.approx((5 / 6 + 4 / 5 + 1) / 3, rel=1e-15)

    def test_from_predictions(self):
        y_true, y_pred = labels_from_confusion(self.cm)
        r = mt.MetricsReport.from_predictions(y_true, y_pred, NAMES)
        assert r.confusion == self.cm


class TestEdgeCases:
    def test_perfect(self):
        y = np.arange(30) % 6
        r = mt.MetricsReport.from_predictions(y, y, list("abcdef"))
        assert r.accuracy == r.macro_f1 == r.macro_precision == r.macro_recall == 1.0
        assert np.array_equal(np.array(r.confusion), np.diag(np.bincount(y)))

    def test_constant_predictor(self):
        y = np.arange(60) % 6
        r = mt.MetricsReport.from_predictions(y, np.full(60, 2), list("abcdef"))
        assert r.accuracy == pytest.approx(1 / 6)
        assert r.recall[2] == 1.0
        assert r.precision[2] == pytest.approx(1 / 6)
        assert r.precision[0] == r.recall[0] == r.f1[0] == 0.0

    def test_absent_class(self):
        r = mt.MetricsReport.from_confusion([[2, 0], [0, 0]], ["x", "y"])
        assert r.precision == [1.0, 0.0] and r.recall == [1.0, 0.0] and r.f1 == [1.0, 0.0]

    def test_rejects_bad_input(self):
        with pytest.raises(ContractError):
            mt.confusion_matrix([0, 1], [0], 2)
        with pytest.raises(ContractError):
            mt.confusion_matrix([0, 3], [0, 1], 2)
        with pytest.raises(ContractError):
            mt.scores_from_confusion(np.zeros((2, 3)))


def test_random_confusions_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.integers(2, 8))
        cm = rng.integers(0, 12, size=(k, k))
        cm[rng.random((k, k)) < 0.2] = 0
        cm[0, 0] += 1
        y_true, y_pred = labels_from_confusion(cm)
        p, r, f, acc = brute_force(y_true, y_pred, k)
        rep = mt.MetricsReport.from_confusion(cm, [str(i) for i in range(k)])
        assert rep.precision == p
        assert rep.recall == r
        assert rep.f1 == f
        assert rep.accuracy == acc
        assert rep.macro_f1 == float(np.mean(f))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(1, 20), st.integers(0, 2 ** 32 - 1))
def test_metric_identities(classes, per_class, seed):
    rng = np.random.default_rng(seed)
    y_true = np.repeat(np.arange(classes), per_class)
    y_pred = rng.integers(0, classes, size=y_true.size)
    r = mt.MetricsReport.from_predictions(y_true, y_pred, [str(i) for i in range(classes)])
    cm = np.array(r.confusion)
    np.testing.assert_array_equal(cm.sum(axis=1), per_class)
    # balanced classes: accuracy equals the mean recall
    assert r.accuracy == pytest.approx(np.mean(r.recall), abs=1e-12)
    # micro-averaged F1 equals accuracy for single-label problems
    tp, fp, fn = np.trace(cm), cm.sum() - np.trace(cm), cm.sum() - np.trace(cm)
    micro_f1 = 2 * tp / (2 * tp + fp + fn)
    assert micro_f1 == pytest.approx(r.accuracy, abs=1e-12)
    for p, rc, f in zip(r.precision, r.recall, r.f1):
        assert 0 <= p <= 1 and 0 <= rc <= 1
        assert f == pytest.approx(2 * p * rc / (p + rc) if p + rc else 0.0, abs=1e-15)


class TestSerialization:
    def report(self):
        return mt.MetricsReport.from_confusion(
            [[5, 1, 0], [1, 4, 0], [0, 0, 5]], NAMES, run={"seed": 1}, timing={"seconds": 1.5}
        )

    def test_json_roundtrip(self):
        r = self.report()
        d = json.loads(json.dumps(r.to_dict()))
        assert d["schema_version"] == mt.SCHEMA_VERSION
        assert mt.MetricsReport.from_dict(d) == r

    def test_schema_mismatch(self):
        d = self.report().to_dict()
        d["schema_version"] = 99
        with pytest.raises(ContractError):
            mt.MetricsReport.from_dict(d)

    def test_canonical_json_ignores_timing(self):
        a = self.report().to_dict()
        b = self.report().to_dict()
        b["timing"]["seconds"] = 9.0
        assert mt.canonical_json(a) == mt.canonical_json(b)
        assert b"timing" not in mt.canonical_json(a)

    def test_text_table_columns(self):
        text = mt.text_table([("m1", self.report()), ("m2", self.report())], NAMES)
        lines = text.splitlines()
        assert len(lines[1].split()) == 1 + 3 * len(NAMES)
        assert len(lines[2].split()) == 1 + 3 * len(NAMES)
        assert lines[2].split()[1:4] == ["0.833", "0.833", "0.833"]
