import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phecg import dnn, metrics, plots
from phecg.errors import EmptyInput, UndefinedRoc


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


scored = st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.7, 0.9, 1.0]) | st.floats(0, 1).map(lambda v: round(v, 6)),
                            st.booleans()), min_size=2, max_size=50).filter(
    lambda xs: any(y for _, y in xs) and not all(y for _, y in xs))


def test_accuracy_examples():
    assert metrics.accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert metrics.accuracy([1] * 98 + [0] * 2, [1] * 100) == 0.98
    assert metrics.accuracy([0, 1, 0, 1], [0, 0, 0, 0]) == 0.5


def test_accuracy_empty_and_mismatch():
    with pytest.raises(EmptyInput):
        metrics.accuracy([], [])
    with pytest.raises(ValueError):
        metrics.accuracy([1, 0], [1])


def test_f1_examples():
    assert metrics.f1(metrics.Confusion(tp=3)) == 1.0
    assert metrics.f1(metrics.Confusion(tp=1, fp=1, fn=1)) == 0.5
    assert metrics.f1(metrics.Confusion(tn=5)) == 0.0


def test_confusion_counts_sum():
    c = metrics.confusion([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 1, 1)
    assert c.n == 5


def test_auc_hand_example():
    s, y = [0.9, 0.4, 0.5, 0.1], [1, 1, 0, 0]
    assert brute_auc(s, y) == 0.75
    assert metrics.roc_auc(s, y)[1] == pytest.approx(0.75, abs=1e-12)


def test_auc_separated_and_identical():
    assert metrics.roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])[1] == 1.0
    assert metrics.roc_auc([0.3] * 6, [1, 0, 1, 0, 0, 1])[1] == 0.5


def test_single_class_undefined():
    with pytest.raises(UndefinedRoc):
        metrics.roc_auc([0.1, 0.2], [1, 1])


def test_roc_points_k_distinct_scores():
    scores = [0.9, 0.9, 0.6, 0.4, 0.4, 0.4, 0.1]
    labels = [1, 0, 1, 1, 0, 0, 0]
    points = metrics.roc_curve(scores, labels)
    assert len(points) == 4 + 1
    assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(scored)
def test_auc_equals_pairwise_statistic(pairs):
    s, y = zip(*pairs)
    assert metrics.roc_auc(s, y)[1] == pytest.approx(brute_auc(s, y), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(scored)
def test_roc_monotone(pairs):
    s, y = zip(*pairs)
    pts = np.array(metrics.roc_curve(s, y))
    assert (np.diff(pts, axis=0) >= 0).all()
    assert tuple(pts[0]) == (0.0, 0.0) and tuple(pts[-1]) == (1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(scored)
def test_auc_invariant_under_monotone_transform(pairs):
    s, y = zip(*pairs)
    t = np.exp(3 * np.asarray(s)) - 7
    assert metrics.roc_auc(t, y)[1] == pytest.approx(metrics.roc_auc(s, y)[1], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(scored, st.randoms(use_true_random=False))
def test_metrics_permutation_invariant(pairs, rnd):
    s, y = map(np.asarray, zip(*pairs))
    order = list(range(len(s)))
    rnd.shuffle(order)
    a, b = metrics.evaluate(s, y), metrics.evaluate(s[order], y[order])
    assert a.accuracy == b.accuracy and a.f1 == b.f1
    assert a.auc == pytest.approx(b.auc, abs=1e-12)


def test_evaluate_threshold_is_strict():
    r = metrics.evaluate([0.5, 0.51], [0, 1])
    assert r.accuracy == 1.0 and r.confusion.tn == 1


def test_evaluate_single_class_has_no_auc():
    r = metrics.evaluate([0.2, 0.9], [1, 1])
    assert r.auc is None and r.roc_points == []


def _history(pairs, losses=None):
    h = dnn.TrainHistory()
    for i, (tr, va) in enumerate(pairs, start=1):
        tl, vl = losses[i - 1] if losses else (0.1, 0.1)
        h.append(epoch=i, train_loss=tl, train_acc=tr, val_loss=vl, val_acc=va, lr=0.001)
    return h


def test_overfit_examples():
    assert not metrics.overfit_check(_history([(0.9, 0.9), (0.99, 0.98)])).overfit
    assert metrics.overfit_check(_history([(0.9, 0.9), (0.99, 0.70)])).overfit
    assert not metrics.overfit_check(_history([(0.99, 0.10)])).overfit


def test_overfit_rising_val_loss():
    losses = [(1.0 - 0.1 * i, 0.5 + 0.1 * max(0, i - 4)) for i in range(8)]
    d = metrics.overfit_check(_history([(0.9, 0.9)] * 8, losses))
    assert d.overfit and d.val_loss_rising


def test_emit_report_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rows = [(0.5 + i / 100, 0.5 + i / 120) for i in range(50)]
    hist = _history(rows)
    report = metrics.evaluate(rng.uniform(size=30), rng.integers(0, 2, 30))
    paths = metrics.emit_report(report, hist, tmp_path / "run_")
    assert metrics.read_report(paths["report"]) == report
    back = dnn.history_from_csv(paths["history"].read_text())
    assert len(back) == 50 and back.rows == hist.rows
    for key in ("accuracy_plot", "loss_plot", "roc_plot"):
        assert paths[key].endswith(".svg")
    data = json.loads(paths["report"].read_text())
    assert data["history_summary"]["final_val_acc"] == rows[-1][1]


def test_roc_plot_polyline_points(tmp_path):
    scores = [0.9, 0.8, 0.8, 0.3, 0.2]
    report = metrics.evaluate(scores, [1, 1, 0, 0, 1])
    xs, ys = plots.roc_line(report)
    assert len(xs) == len(set(scores)) + 1


def test_emit_report_io_error_has_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    report = metrics.evaluate([0.1, 0.9], [0, 1])
    with pytest.raises(OSError, match="file"):
        metrics.emit_report(report, None, blocker / "sub" / "r_", plots=False)
