import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import pixel_counts
from soundseg.masks import BinaryMask
from soundseg.metrics import (
    evaluate_dataset,
    evaluate_frame,
    f_measure,
    fscore,
    fscore_from_counts,
    jaccard,
    per_class_jaccard,
    to_binary,
)

FULL = BinaryMask(np.ones((4, 4), bool))
LEFT = BinaryMask(np.tile([True, True, False, False], (4, 1)))
EMPTY = BinaryMask.zeros(4, 4)


def test_jaccard_examples():
    assert jaccard(LEFT, LEFT) == 1.0
    assert jaccard(LEFT, BinaryMask(~LEFT.data)) == 0.0
    assert jaccard(LEFT, FULL) == 0.5
    assert jaccard(EMPTY, EMPTY) == 1.0
    with pytest.raises(ValueError):
        jaccard(LEFT, BinaryMask.zeros(2, 2))


def test_fscore_examples():
    assert abs(f_measure(1.0, 0.5, 0.3) - 0.8125) <= 1e-12
    assert abs(fscore(LEFT, FULL, 0.3) - 0.8125) <= 1e-12
    assert fscore(LEFT, LEFT) == 1.0
    assert fscore(EMPTY, LEFT) == 0.0
    assert fscore(LEFT, EMPTY) == 0.0
    assert fscore(EMPTY, EMPTY) == 1.0
    assert f_measure(0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        f_measure(0.5, 0.5, -1)
    with pytest.raises(ValueError):
        fscore_from_counts(1, 0, 0, beta2=-0.1)


def test_beta2_extremes():
    assert f_measure(0.4, 0.8, 1.0) == pytest.approx(2 * 0.4 * 0.8 / 1.2, rel=1e-15)
    assert f_measure(0.4, 0.8, 0.0) == pytest.approx(0.4, rel=1e-15)


def test_dataset_examples():
    assert evaluate_dataset([(LEFT, LEFT)]).mean_j == 1.0
    assert evaluate_dataset([(LEFT, LEFT)]).mean_f == 1.0
    s = evaluate_dataset([(LEFT, LEFT), (LEFT, BinaryMask(~LEFT.data))])
    assert s.mean_j == 0.5
    assert s.to_json(["a", "b"])["frames"][1]["frame"] == "b"
    with pytest.raises(ValueError):
        evaluate_dataset([])


def test_dataset_mean_is_independent_recomputation():
    rng = np.random.default_rng(11)
    frames = [(BinaryMask(rng.random((6, 6)) < 0.4), BinaryMask(rng.random((6, 6)) < 0.4)) for _ in range(10)]
    js, fs = [], []
    for p, g in frames:
        tp, fp, fn = pixel_counts(p, g)
        js.append(1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        fs.append(0.0 if prec + rec == 0 else 1.3 * prec * rec / (0.3 * prec + rec))
    s = evaluate_dataset(frames)
    assert s.mean_j == pytest.approx(sum(js) / 10, rel=1e-14)
    assert s.mean_f == pytest.approx(sum(fs) / 10, rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_metric_properties(data):
    shape = data.draw(st.tuples(st.integers(1, 5), st.integers(1, 5)))
    p = BinaryMask(data.draw(arrays(bool, shape)))
    g = BinaryMask(data.draw(arrays(bool, shape)))
    ev = evaluate_frame(p, g)
    assert (ev.tp, ev.fp, ev.fn) == pixel_counts(p, g)
    assert jaccard(p, g) == jaccard(g, p)
    assert 0.0 <= ev.j <= 1.0 and 0.0 <= ev.f <= 1.0
    if p.area and g.area:
        assert ev.j <= ev.precision + 1e-15 and ev.j <= ev.recall + 1e-15


def test_semantic_maps():
    pred = np.array([[0, 1], [2, 2]])
    gt = np.array([[0, 1], [1, 2]])
    assert to_binary(pred) == BinaryMask([[0, 1], [1, 1]])
    assert per_class_jaccard(pred, gt) == {1: 0.5, 2: 0.5}
    with pytest.raises(ValueError):
        per_class_jaccard(pred, gt[:1])
