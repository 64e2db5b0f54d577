import math

import numpy as np
import pytest

from hsdetect import metrics
from hsdetect.errors import ValidationError
from hsdetect.metrics import confusion_at, log_roc_resample, pr, roc


# ------------------------------------------------------------- oracles

def mann_whitney_auc(scores, labels):
    """Pair counting: P(random positive outscores random negative), ties 0.5."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def rank_walk_ap(scores, labels):
    """Walk distinct thresholds in descending order, summing precision times
    recall increments."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels)
    p_total = int(labels.sum())
    ap = 0.0
    prev_recall = 0.0
    for threshold in sorted(set(scores.tolist()), reverse=True):
        selected = scores >= threshold
        tp = int(labels[selected].sum())
        precision = tp / int(selected.sum())
        recall = tp / p_total
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def random_instance(rng, max_n=200):
    n = int(rng.integers(2, max_n))
    # quantized scores inject heavy ties
    scores = np.round(rng.random(n), int(rng.integers(0, 3)))
    labels = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(np.uint8)
    if labels.sum() == 0:
        labels[int(rng.integers(0, n))] = 1
    if labels.sum() == n:
        labels[int(rng.integers(0, n))] = 0
    return scores, labels


# ------------------------------------------------------------- ROC

def test_roc_perfect_separation():
    assert roc(np.array([0.9, 0.1]), np.array([1, 0])).summary == 1.0


def test_roc_pair_counting_example():
    curve = roc(np.array([0.9, 0.8, 0.3]), np.array([1, 0, 1]))
    assert curve.summary == pytest.approx(0.5, abs=1e-12)


def test_roc_total_ties():
    curve = roc(np.full(10, 0.5), np.array([1, 1, 0, 0, 0, 1, 0, 0, 1, 0]))
    assert curve.summary == pytest.approx(0.5, abs=1e-12)


def test_roc_requires_both_classes():
    with pytest.raises(ValidationError, match="positive"):
        roc(np.array([0.5, 0.4]), np.array([1, 1]))
    with pytest.raises(ValidationError, match="positive"):
        roc(np.array([0.5, 0.4]), np.array([0, 0]))


def test_roc_matches_mann_whitney_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(300):
        scores, labels = random_instance(rng)
        assert abs(roc(scores, labels).summary
                   - mann_whitney_auc(scores, labels)) < 1e-12


def test_roc_curve_shape_invariants():
    rng = np.random.default_rng(1)
    for _ in range(100):
        scores, labels = random_instance(rng)
        curve = roc(scores, labels)
        assert curve.x[0] == 0.0 and curve.y[0] == 0.0
        assert curve.x[-1] == 1.0 and curve.y[-1] == 1.0
        assert np.all(np.diff(curve.x) >= 0)
        assert np.all(np.diff(curve.y) >= 0)
        assert 0.0 <= curve.summary <= 1.0


# ------------------------------------------------------------- PR

def test_pr_single_positive_ranked_first():
    curve = pr(np.array([0.9, 0.5, 0.1, 0.05]), np.array([1, 0, 0, 0]))
    assert curve.summary == 1.0


def test_pr_step_sum_example():
    curve = pr(np.array([0.9, 0.8, 0.3]), np.array([1, 0, 1]))
    assert curve.summary == pytest.approx(0.5 * 1 + 0.5 * (2 / 3), abs=1e-12)
    assert curve.summary == pytest.approx(0.8333333333333333, abs=1e-12)


def test_pr_single_recall_step():
    curve = pr(np.array([0.9, 0.8, 0.3]), np.array([0, 0, 1]))
    assert curve.summary == pytest.approx(1 / 3, abs=1e-12)


def test_pr_matches_rank_walk_on_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(300):
        scores, labels = random_instance(rng)
        assert abs(pr(scores, labels).summary
                   - rank_walk_ap(scores, labels)) < 1e-12


def test_pr_recall_spans_zero_to_one():
    rng = np.random.default_rng(3)
    for _ in range(50):
        scores, labels = random_instance(rng)
        curve = pr(scores, labels)
        assert curve.x[0] == 0.0
        assert curve.x[-1] == 1.0
        assert np.all(np.diff(curve.x) >= 0)


# ------------------------------------------------------------- monotone invariance

def test_metric_invariance_under_increasing_transforms():
    rng = np.random.default_rng(4)
    transforms = (
        lambda s: 2.0 * s + 3.0,
        lambda s: s ** 3,             # scores kept positive below
        lambda s: 1.0 / (1.0 + np.exp(-s)),
    )
    for _ in range(60):
        scores, labels = random_instance(rng)
        scores = scores + 0.5  # strictly positive so x**3 stays monotone
        auc0 = roc(scores, labels).summary
        ap0 = pr(scores, labels).summary
        for f in transforms:
            assert abs(roc(f(scores), labels).summary - auc0) < 1e-12
            assert abs(pr(f(scores), labels).summary - ap0) < 1e-12


# ------------------------------------------------------------- log resample

def test_log_resample_perfect_detector():
    curve = roc(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0]))
    grid = np.logspace(-4, 0, 9)
    resampled = log_roc_resample(curve, grid)
    assert np.all(resampled.y == 1.0)


def test_log_resample_left_boundary_rule():
    # one negative ranked first: TPR stays 0 until FPR reaches 1
    curve = roc(np.array([0.9, 0.5]), np.array([0, 1]))
    resampled = log_roc_resample(curve, np.array([1e-6, 0.5, 1.0]))
    assert resampled.y[0] == 0.0   # below the first positive-FPR step
    assert resampled.y[1] == 0.0
    assert resampled.y[2] == 1.0


def test_log_resample_random_scores_track_diagonal():
    rng = np.random.default_rng(5)
    scores = rng.random(10000)
    labels = (rng.random(10000) < 0.5).astype(np.uint8)
    resampled = log_roc_resample(roc(scores, labels), np.array([0.1]))
    assert abs(resampled.y[0] - 0.1) < 0.05


def test_log_resample_empty_grid():
    curve = roc(np.array([0.9, 0.1]), np.array([1, 0]))
    with pytest.raises(ValidationError, match="empty"):
        log_roc_resample(curve, np.array([]))


def test_default_log_grid():
    grid = metrics.default_log_fpr_grid()
    assert grid[0] == pytest.approx(1e-6)
    assert grid[-1] == 1.0
    assert np.all(np.diff(grid) > 0)


# ------------------------------------------------------------- confusion

def test_confusion_nothing_detected():
    scores = np.array([0.4, 0.3, 0.2])
    labels = np.array([1, 0, 1])
    assert confusion_at(scores, labels, 0.9) == (0, 0, 1, 2)


def test_confusion_everything_detected():
    scores = np.array([0.4, 0.3, 0.2])
    labels = np.array([1, 0, 1])
    assert confusion_at(scores, labels, 0.0) == (2, 1, 0, 0)


def test_confusion_threshold_oracle():
    assert confusion_at(np.array([0.9, 0.8, 0.3]), np.array([1, 0, 1]),
                        0.5) == (1, 1, 0, 1)


def test_confusion_threshold_inclusive():
    assert confusion_at(np.array([0.5]), np.array([1]), 0.5)[0] == 1


def test_confusion_partitions_pixels():
    rng = np.random.default_rng(6)
    for _ in range(30):
        scores, labels = random_instance(rng)
        threshold = float(rng.random())
        tp, fp, tn, fn = confusion_at(scores, labels, threshold)
        assert tp + fp + tn + fn == scores.size


def test_confusion_rejects_nonfinite_threshold():
    with pytest.raises(ValidationError, match="finite"):
        confusion_at(np.array([0.5]), np.array([1]), math.nan)


# ------------------------------------------------------------- files

def test_curve_csv_round_trip(tmp_path):
    curve = roc(np.array([0.9, 0.8, 0.3]), np.array([1, 0, 1]))
    path = tmp_path / "roc.csv"
    metrics.write_curve_csv(curve, path)
    text = path.read_text()
    assert text.startswith("fpr,tpr\n")
    back = metrics.read_curve_csv(path)
    assert np.array_equal(back.x, curve.x)
    assert np.array_equal(back.y, curve.y)


def test_summary_json(tmp_path):
    roc_curve = roc(np.array([0.9, 0.1]), np.array([1, 0]))
    pr_curve = pr(np.array([0.9, 0.1]), np.array([1, 0]))
    summary = metrics.summary_dict("ace", "test", roc_curve, pr_curve, 1, 1)
    path = tmp_path / "summary.json"
    metrics.write_summary_json(summary, path)
    import json

    loaded = json.loads(path.read_text())
    assert loaded == {"method": "ace", "region": "test", "auc": 1.0,
                      "ap": 1.0, "positives": 1, "negatives": 1}


def test_svg_rendering(tmp_path):
    curve = roc(np.array([0.9, 0.6, 0.3, 0.1]), np.array([1, 0, 1, 0]))
    svg = metrics.curves_svg([("ace", curve)])
    assert svg.startswith("<svg")
    assert "<path" in svg
    log_curve = log_roc_resample(curve, metrics.default_log_fpr_grid())
    svg_log = metrics.curves_svg([("ace", log_curve)], log_x=True)
    assert "<path" in svg_log
    metrics.write_svg([("ace", curve)], tmp_path / "roc.svg")
    assert (tmp_path / "roc.svg").exists()


def test_scoremap_and_mask_objects_accepted():
    from hsdetect.detectors import ScoreMap
    from hsdetect.scene import GroundTruthMask, Region

    region = Region("r", 0, 0, 2, 2)
    smap = ScoreMap(region=region,
                    scores=np.array([[0.9, 0.8], [0.3, 0.1]]), method="mf")
    mask = GroundTruthMask(region=region,
                           labels=np.array([[1, 0], [1, 0]], dtype=np.uint8))
    assert roc(smap, mask).summary == pytest.approx(0.75)


def test_shape_mismatch_rejected():
    with pytest.raises(ValidationError, match="differ"):
        roc(np.array([0.5, 0.2]), np.array([1, 0, 1]))
