import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxyvad.metrics import (
    EvalResult,
    offset_tracks,
    rbdc,
    rbdc_curve,
    roc_auc,
    roc_auc_videos,
    tbdc,
)


def pairwise_auc(scores, labels):
    """O(n²) oracle: fraction of positive/negative pairs ranked correctly, ties 1/2."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


@pytest.mark.parametrize("scores,labels,expected", [
    ([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1], 0.75),
    ([1, 2, 3, 4], [0, 0, 1, 1], 1.0),
    ([4, 3, 2, 1], [0, 0, 1, 1], 0.0),
    ([5, 5, 5, 5], [0, 1, 0, 1], 0.5),
])
def test_auc_examples(scores, labels, expected):
    assert roc_auc(scores, labels) == pytest.approx(expected, abs=1e-12)


def test_auc_matches_pairwise_oracle_on_tied_instance():
    rng = np.random.default_rng(0)
    s = rng.integers(0, 20, 200).astype(float)
    y = rng.random(200) < 0.3
    assert abs(roc_auc(s, y) - pairwise_auc(s, y)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=30))
def test_auc_matches_oracle_property(pairs):
    s = [p[0] for p in pairs]
    y = [p[1] for p in pairs]
    if all(y) or not any(y):
        with pytest.raises(ValueError):
            roc_auc(s, y)
        return
    assert abs(roc_auc(s, y) - pairwise_auc(s, y)) < 1e-12
    # flipping the labels flips the ranking
    assert abs(roc_auc(s, np.logical_not(y)) - (1 - roc_auc(s, y))) < 1e-12


def test_auc_invariant_to_monotone_transform():
    rng = np.random.default_rng(1)
    s = rng.random(50)
    y = rng.random(50) < 0.5
    assert roc_auc(np.exp(3 * s) + 7, y) == pytest.approx(roc_auc(s, y), abs=1e-12)


def test_micro_and_macro_auc():
    scores = [np.array([0.1, 0.9]), np.array([0.5, 0.2, 0.8])]
    labels = [np.array([0, 1]), np.array([0, 0, 1])]
    assert roc_auc_videos(scores, labels) == roc_auc(np.concatenate(scores), np.concatenate(labels))
    assert roc_auc_videos(scores, labels, macro=True) == 1.0


def test_rbdc_toy():
    # one GT box in frame 1 with a half-overlapping prediction (IoU 1/3) at 0.6;
    # false positives at 0.3 (frame 0) and 0.9 (frame 2).
    # sweep: 0.9 → (1/3, 0); 0.6 → (1/3, 1); 0.3 → (2/3, 1); held to FPR 1; area 2/3
    preds = [[((60, 60, 70, 70), 0.3)], [((5, 0, 15, 10), 0.6)], [((80, 0, 90, 10), 0.9)]]
    gts = [[], [(0, 0, 10, 10)], []]
    assert rbdc(preds, gts) == pytest.approx(2 / 3, abs=1e-12)


def test_tbdc_toy():
    # track a: one of two regions predicted at 0.7 (50% coverage); track b: nothing.
    # one false positive at 0.8 over four frames.
    # sweep: 0.8 → (1/4, 0); 0.7 → (1/4, 1/2); held to FPR 1; area 0.75 · 0.5
    a = [(0, (0, 0, 10, 10)), (1, (2, 0, 12, 10))]
    b = [(2, (30, 30, 40, 40)), (3, (32, 30, 42, 40))]
    preds = [[((0, 0, 10, 10), 0.7)], [], [], [((80, 80, 90, 90), 0.8)]]
    assert tbdc(preds, {"a": a, "b": b}) == pytest.approx(0.375, abs=1e-12)


def test_perfect_predictions_score_one():
    gts = [[(0, 0, 10, 10)], [(5, 5, 15, 15)]]
    preds = [[(g, 1.0) for g in f] for f in gts]
    assert rbdc(preds, gts) == 1.0
    tracks = {0: [(0, (0, 0, 10, 10)), (1, (5, 5, 15, 15))]}
    assert tbdc(preds, tracks) == 1.0


def test_empty_predictions_score_zero():
    gts = [[(0, 0, 10, 10)], []]
    assert rbdc([[], []], gts) == 0.0
    assert tbdc([[], []], {0: [(0, (0, 0, 10, 10))]}) == 0.0


def test_iou_threshold_controls_matching():
    gts = [[(0, 0, 10, 10)]]
    preds = [[((5, 0, 15, 10), 1.0)]]  # IoU 1/3
    assert rbdc(preds, gts, iou_threshold=0.3) == 1.0
    assert rbdc(preds, gts, iou_threshold=0.5) == 0.0


def test_curve_is_monotone():
    rng = np.random.default_rng(2)
    preds, gts = [], []
    for f in range(30):
        g = (10, 10, 20, 20)
        gts.append([g] if f % 3 == 0 else [])
        preds.append([(g, float(rng.random())), ((40, 40, 50, 50), float(rng.random()))])
    c = rbdc_curve(preds, gts)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert 0.0 <= c.area <= 1.0


def test_no_anomalous_region_rejected():
    with pytest.raises(ValueError):
        rbdc([[]], [[]])


def test_offset_tracks():
    merged = offset_tracks([{1: [(3, (0, 0, 1, 1))]}, {1: [(0, (0, 0, 2, 2))]}], [10, 5])
    assert merged == {(0, 1): [(3, (0, 0, 1, 1))], (1, 1): [(10, (0, 0, 2, 2))]}


def test_eval_result_formats():
    r = EvalResult(0.9, 0.5, None)
    assert r.to_csv().splitlines() == ["metric,value", "frame_auc,0.9", "rbdc,0.5", "tbdc,"]
    assert "tbdc" in r.to_table()
