import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapefit.metrics import (
    bbox_scale,
    build_report,
    ced_auc,
    format_ced_table,
    group_distance,
    nme,
    occlusion_pr,
)
from shapefit.shapes import SimilarityTransform, apply_similarity


def trapezoid_by_decomposition(errors, cutoff, samples):
    """Independent AUC oracle: per-error closed-form trapezoid contribution.

    The sampled CED is the mean of single-error step functions, and the
    trapezoidal rule is linear, so the grid AUC is the mean of per-error
    trapezoid integrals.
    """
    grid = np.linspace(0.0, cutoff, samples)
    dt = grid[1] - grid[0]
    total = 0.0
    for e in np.asarray(errors, dtype=float):
        above = grid >= e  # step function sampled on the grid
        contribution = 0.0
        for k in range(samples - 1):
            contribution += 0.5 * dt * (float(above[k]) + float(above[k + 1]))
        total += contribution
    return total / len(errors) / cutoff


class TestNme:
    def test_zero_for_equal_shapes(self):
        pts = np.arange(12.0).reshape(6, 2)
        assert nme(pts, pts, normalizer=10.0) == 0.0

    def test_unit_when_every_landmark_off_by_d(self):
        truth = np.arange(12.0).reshape(6, 2)
        d = 7.5
        pred = truth + np.array([d, 0.0])
        assert nme(pred, truth, normalizer=d) == pytest.approx(1.0, abs=1e-12)

    def test_matches_hand_computation(self):
        rng = np.random.default_rng(1)
        pred = rng.normal(size=(10, 2)) * 20
        truth = rng.normal(size=(10, 2)) * 20
        d = 42.0
        oracle = np.mean([np.hypot(*(p - t)) for p, t in zip(pred, truth)]) / d
        assert nme(pred, truth, d) == pytest.approx(oracle, abs=1e-12)

    def test_mask_restricts_to_visible(self):
        truth = np.zeros((4, 2))
        pred = truth.copy()
        pred[0] = [100.0, 0.0]
        mask = np.array([False, True, True, True])
        assert nme(pred, truth, 1.0, mask) == 0.0

    def test_errors(self):
        pts = np.zeros((4, 2))
        with pytest.raises(ValueError):
            nme(pts, pts, normalizer=0.0)
        with pytest.raises(ValueError):
            nme(pts, pts, 1.0, np.zeros(4, dtype=bool))

    @settings(max_examples=40, deadline=None)
    @given(
        scale=st.floats(0.1, 10.0),
        angle=st.floats(-np.pi, np.pi),
        tx=st.floats(-100, 100),
        ty=st.floats(-100, 100),
    )
    def test_similarity_covariance(self, scale, angle, tx, ty):
        rng = np.random.default_rng(7)
        truth = rng.normal(size=(8, 2)) * 30
        pred = truth + rng.normal(size=(8, 2))
        d = 25.0
        base = nme(pred, truth, d)
        t = SimilarityTransform(scale, angle, tx, ty)
        moved = nme(apply_similarity(t, pred), apply_similarity(t, truth), d * scale)
        assert moved == pytest.approx(base, abs=1e-10)


class TestCed:
    def test_all_zero_errors(self):
        curve, auc, failure = ced_auc([0.0, 0.0, 0.0], cutoff=0.08)
        assert np.all(curve.fractions == 1.0)
        assert auc == pytest.approx(1.0, abs=1e-12)
        assert failure == 0.0

    def test_all_errors_beyond_cutoff(self):
        curve, auc, failure = ced_auc([1.0, 2.0], cutoff=0.08)
        assert np.all(curve.fractions == 0.0)
        assert auc == 0.0
        assert failure == 1.0

    def test_frozen_example(self):
        errors = [0.02, 0.04, 0.10]
        curve, auc, failure = ced_auc(errors, cutoff=0.08, samples=1000)
        assert failure == pytest.approx(1.0 / 3.0, abs=1e-12)
        oracle = trapezoid_by_decomposition(errors, 0.08, 1000)
        assert auc == pytest.approx(oracle, abs=1e-9)
        # the exact step integral for reference: (0.02*0 + 0.02*(1/3) + 0.04*(2/3)) / 0.08
        assert auc == pytest.approx(0.41666667, abs=2e-3)

    def test_failure_complements_ced_at_cutoff(self):
        rng = np.random.default_rng(3)
        errors = rng.uniform(0, 0.2, size=200)
        curve, _, failure = ced_auc(errors, cutoff=0.08)
        assert failure == pytest.approx(1.0 - curve.fractions[-1], abs=1e-12)

    def test_curve_is_monotone_within_unit_range(self):
        rng = np.random.default_rng(8)
        curve, auc, failure = ced_auc(rng.exponential(0.05, size=300), cutoff=0.08)
        assert np.all(np.diff(curve.fractions) >= 0)
        assert curve.fractions.min() >= 0 and curve.fractions.max() <= 1
        assert 0 <= auc <= 1 and 0 <= failure <= 1

    def test_auc_monotone_when_error_grows(self):
        rng = np.random.default_rng(4)
        errors = rng.uniform(0, 0.1, size=50)
        _, base, _ = ced_auc(errors, cutoff=0.08)
        worse = errors.copy()
        worse[7] += 0.05
        _, degraded, _ = ced_auc(worse, cutoff=0.08)
        assert degraded <= base

    def test_ced_table_format(self):
        curve, _, _ = ced_auc([0.01], cutoff=0.08, samples=5)
        table = format_ced_table(curve)
        lines = table.splitlines()
        assert lines[0] == "threshold\tfraction"
        assert len(lines) == 6
        assert all("\t" in line for line in lines[1:])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ced_auc([], cutoff=0.08)


class TestOcclusionPr:
    def test_perfect_separation(self):
        weights = np.array([0.0, 0.0, 1.0, 1.0, 1.0])
        occluded = np.array([True, True, False, False, False])
        points, _ = occlusion_pr(weights, occluded, thresholds=[0.5])
        assert points[0].precision == 1.0
        assert points[0].recall == 1.0

    def test_uniform_weights_give_base_rate_precision(self):
        weights = np.full(10, 0.4)
        occluded = np.zeros(10, dtype=bool)
        occluded[:3] = True
        points, _ = occlusion_pr(weights, occluded, thresholds=[0.9])
        assert points[0].precision == pytest.approx(0.3, abs=1e-12)

    def test_matches_confusion_matrix_oracle(self):
        rng = np.random.default_rng(5)
        weights = rng.uniform(size=10_000)
        occluded = rng.uniform(size=10_000) < 0.25
        thresholds = rng.uniform(size=25)
        points, _ = occlusion_pr(weights, occluded, thresholds=thresholds)
        for point in points:
            predicted = weights < point.threshold
            tp = np.sum(predicted & occluded)
            fp = np.sum(predicted & ~occluded)
            fn = np.sum(~predicted & occluded)
            if tp + fp:
                assert point.precision == pytest.approx(tp / (tp + fp), abs=1e-12)
            else:
                assert np.isnan(point.precision)
            assert point.recall == pytest.approx(tp / (tp + fn), abs=1e-12)

    def test_no_occlusion_reports_absent(self):
        points, operating = occlusion_pr(np.linspace(0, 1, 5), np.zeros(5, dtype=bool))
        assert operating is None
        assert all(np.isnan(p.recall) for p in points)

    def test_operating_point_targets_precision_080(self):
        # weights: occluded cluster low, visible high, some overlap
        weights = np.array([0.01, 0.02, 0.03, 0.04, 0.05, 0.5, 0.6, 0.7, 0.8, 0.9])
        occluded = np.array([True] * 4 + [False] + [False] * 5)
        _, operating = occlusion_pr(weights, occluded)
        assert operating is not None
        assert operating.precision >= 0.80
        assert operating.recall == 1.0


class TestNormalizers:
    def test_group_distance_singletons(self):
        pts = np.array([[0.0, 0.0], [3.0, 4.0], [9.0, 9.0]])
        assert group_distance(pts, [0], [1]) == 5.0

    def test_group_distance_centroids(self):
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 0.0], [12.0, 0.0]])
        assert group_distance(pts, [0, 1], [2, 3]) == 10.0

    def test_bbox_scale(self):
        pts = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 9.0]])
        assert bbox_scale(pts) == 6.0


class TestReport:
    def test_aggregate_matches_per_image_means(self):
        rng = np.random.default_rng(6)
        truths = [rng.normal(size=(5, 2)) * 40 + 100 for _ in range(30)]
        preds = [t + rng.normal(scale=0.8, size=(5, 2)) for t in truths]
        norms = [bbox_scale(t) for t in truths]
        report = build_report(preds, truths, norms)
        oracle = np.mean([nme(p, t, d) for p, t, d in zip(preds, truths, norms)])
        assert report.mean_nme == pytest.approx(oracle, abs=1e-12)
        assert report.per_image_nme.size == 30

    def test_report_includes_occlusion_when_supplied(self):
        truths = [np.arange(8.0).reshape(4, 2)] * 3
        preds = [t.copy() for t in truths]
        weights = [np.array([0.001, 1.0, 1.0, 1.0])] * 3
        occluded = [np.array([True, False, False, False])] * 3
        report = build_report(
            preds, truths, [1.0] * 3, weights=weights, truth_occluded=occluded
        )
        assert report.occlusion_precision == 1.0
        assert report.occlusion_recall == 1.0
