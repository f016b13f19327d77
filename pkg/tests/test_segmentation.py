import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_sweep, set_metrics
from wmflow import segmentation as seg
from wmflow.errors import NotNormalizedError, ShapeMismatchError, ValidationError
from wmflow.features import normalize_minmax
from wmflow.volume import FeatureVolume, GridMeta, Mask, MetricsReport

TOY = GridMeta((10, 10, 10), (1, 1, 1), 4, 1.0)


def normalized(values, meta=TOY):
    return FeatureVolume(meta, np.reshape(values, meta.dims), "x", normalized=True)


def mask(values, meta=TOY):
    return Mask(meta, np.reshape(values, meta.dims))


def test_grid_has_51_points():
    assert len(seg.THRESHOLD_GRID) == 51
    assert seg.THRESHOLD_GRID[0] == 0.0 and seg.THRESHOLD_GRID[-1] == 1.0
    np.testing.assert_allclose(np.diff(seg.THRESHOLD_GRID), 0.02, atol=1e-15)


def test_threshold_is_strict():
    meta = GridMeta((3, 1, 1), (1, 1, 1), 4, 1.0)
    f = normalized([0.0, 0.5, 1.0], meta)
    assert seg.apply_threshold(f, 0.5).values.ravel().tolist() == [False, False, True]
    assert not seg.apply_threshold(f, 1.0).values.any()
    assert seg.apply_threshold(f, 0.0).values.ravel().tolist() == [False, True, True]


def test_threshold_input_checks():
    meta = GridMeta((3, 1, 1), (1, 1, 1), 4, 1.0)
    with pytest.raises(NotNormalizedError):
        seg.apply_threshold(FeatureVolume(meta, np.zeros(meta.dims), "x"), 0.5)
    with pytest.raises(ValidationError):
        seg.apply_threshold(normalized([0, 1, 0], meta), 1.5)


def test_metrics_identical_masks():
    m = np.zeros(1000, bool)
    m[10:60] = True
    r = seg.evaluate(mask(m), mask(m))
    assert (r.iou, r.dice, r.recall, r.precision) == (1.0, 1.0, 1.0, 1.0)


def test_metrics_disjoint_masks():
    a, b = np.zeros(1000, bool), np.zeros(1000, bool)
    a[:10], b[500:520] = True, True
    r = seg.evaluate(mask(a), mask(b))
    assert (r.iou, r.dice, r.recall, r.precision) == (0.0, 0.0, 0.0, 0.0)


def test_metrics_half_overlap():
    pred, gt = np.zeros(1000, bool), np.zeros(1000, bool)
    pred[0:100], gt[50:150] = True, True
    expected = set_metrics(set(range(100)), set(range(50, 150)))
    r = seg.evaluate(mask(pred), mask(gt))
    assert r.iou == expected["iou"] == 1 / 3
    assert r.dice == r.recall == r.precision == 0.5


def test_metrics_empty_sets():
    empty = np.zeros(1000, bool)
    r = seg.evaluate(mask(empty), mask(empty))
    assert (r.iou, r.dice, r.recall, r.precision) == (1.0, 1.0, 1.0, 1.0)


def test_evaluate_meta_mismatch():
    other = GridMeta((10, 10, 9), (1, 1, 1), 4, 1.0)
    with pytest.raises(ShapeMismatchError):
        seg.evaluate(mask(np.zeros(1000, bool)), Mask(other, np.zeros(other.dims, bool)))


def test_sweep_on_binary_feature_is_perfect_at_zero(rng):
    gt = rng.random(1000) < 0.2
    result = seg.sweep_optimal_threshold(normalized(gt.astype(float)), mask(gt))
    assert result.best_threshold == 0.0
    assert result.best_metrics.iou == 1.0
    assert len(result.curve) == 51


def test_sweep_on_inverted_feature_matches_oracle(rng):
    gt = rng.random(1000) < 0.2
    values = 1.0 - gt.astype(float)
    result = seg.sweep_optimal_threshold(normalized(values), mask(gt))
    oracle = brute_force_sweep(values.tolist(), gt.tolist())
    assert [p.iou for p in result.points] == [m["iou"] for _, m in oracle]
    # predicting the background never overlaps the lumen; tau = 1 predicts nothing
    assert all(p.iou == 0.0 for p in result.points)
    assert result.best_threshold == 0.0


def test_sweep_matches_exhaustive_oracle_at_every_point(rng):
    values = np.round(rng.random(1000), 2)
    values[0], values[1] = 0.0, 1.0
    gt = values + rng.normal(scale=0.3, size=1000) > 0.6
    f = normalized(values)
    result = seg.sweep_optimal_threshold(f, mask(gt))
    # grid-aligned values are the hard case; compare on what was actually stored
    oracle = brute_force_sweep(f.values.astype(float).ravel().tolist(), gt.tolist())
    for point, (tau, metrics) in zip(result.points, oracle):
        assert point.threshold == tau
        assert (point.iou, point.dice, point.recall, point.precision) == (
            metrics["iou"],
            metrics["dice"],
            metrics["recall"],
            metrics["precision"],
        )
    best = max(m["iou"] for _, m in oracle)
    first = next(t for t, m in oracle if m["iou"] == best)
    assert result.best_metrics.iou == best and result.best_threshold == first


def test_sweep_ties_take_smallest_threshold():
    values = np.zeros(1000)
    values[:100] = 1.0
    gt = values > 0
    result = seg.sweep_optimal_threshold(normalized(values), mask(gt))
    assert result.best_threshold == 0.0


def test_sweep_csv_rows():
    values = np.linspace(0, 1, 1000)
    result = seg.sweep_optimal_threshold(normalized(values), mask(values > 0.5))
    lines = result.to_csv().splitlines()
    assert lines[0] == "threshold,iou,dice,recall,precision"
    assert len(lines) == 52
    assert lines[1].startswith("0.00,") and lines[-1].startswith("1.00,")


def test_mean_metrics():
    reports = [MetricsReport(0.5, 2 / 3, 0.5, 1.0, 0.2), MetricsReport(1.0, 1.0, 1.0, 1.0, 0.4)]
    mean = seg.mean_metrics(reports)
    assert mean.iou == 0.75 and mean.threshold == pytest.approx(0.3)


volumes = arrays(np.float64, (6, 5, 4), elements=st.floats(0, 1))
truths = arrays(np.bool_, (6, 5, 4))
SMALL = GridMeta((6, 5, 4), (1, 1, 1), 4, 1.0)


@settings(max_examples=200, deadline=None)
@given(volumes, st.floats(0, 1), st.floats(0, 1))
def test_mask_nesting(values, a, b):
    f = normalize_minmax(FeatureVolume(SMALL, values, "x"))
    lo, hi = min(a, b), max(a, b)
    m_lo = seg.apply_threshold(f, lo).values
    m_hi = seg.apply_threshold(f, hi).values
    assert not np.any(m_hi & ~m_lo)


@settings(max_examples=200, deadline=None)
@given(volumes, truths)
def test_sweep_identities(values, gt):
    f = normalize_minmax(FeatureVolume(SMALL, values, "x"))
    result = seg.sweep_optimal_threshold(f, Mask(SMALL, gt))
    n_gt = int(gt.sum())
    recalls = [p.recall for p in result.points]
    for p in result.points:
        assert abs(p.dice - 2 * p.iou / (1 + p.iou)) <= 1e-12
        n_pred = int(np.count_nonzero(f.values.astype(float) > p.threshold))
        if n_pred and n_gt:
            assert p.precision * n_pred == pytest.approx(p.recall * n_gt)
    if n_gt:
        assert all(a >= b for a, b in zip(recalls, recalls[1:]))


@settings(max_examples=200, deadline=None)
@given(volumes, truths, st.sampled_from(["cube", "exp", "sqrt", "affine"]))
def test_sweep_stable_under_monotone_transform(values, gt, transform):
    func = {"cube": lambda v: v**3, "exp": np.exp, "sqrt": np.sqrt, "affine": lambda v: 3 * v - 7}[transform]
    m = Mask(SMALL, gt)
    r1 = seg.sweep_optimal_threshold(normalize_minmax(FeatureVolume(SMALL, values, "x")), m)
    r2 = seg.sweep_optimal_threshold(normalize_minmax(FeatureVolume(SMALL, func(values), "x")), m)
    slack = 0.0
    for r in (r1, r2):
        ious = [p.iou for p in r.points]
        slack = max(slack, max(abs(a - b) for a, b in zip(ious, ious[1:])))
    # the optimum can only move by what one grid step changes on either curve
    assert abs(r1.best_metrics.iou - r2.best_metrics.iou) <= slack + 1e-12
