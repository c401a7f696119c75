import math

import numpy as np
import pytest

from src.errors import DimensionError, FormatError, LabelError, UndefinedMetricError
from src.metrics import (
    CSV_COLUMNS,
    LabelMap,
    MetricReport,
    boundary_mask,
    dsc,
    extract_boundary,
    hd95,
    metric_report,
    msd,
)
from src.metrics.report import format_value


def label(rows, spacing=(1.0, 1.0)):
    return LabelMap(np.asarray(rows), spacing)


def neighbourhood_boundary(mask):
    """Region pixels with a 4-neighbour outside the region or the image."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                a, b = i + di, j + dj
                if not (0 <= a < h and 0 <= b < w) or not mask[a, b]:
                    out[i, j] = True
                    break
    return out


def all_pairs(truth_mask, pred_mask, spacing):
    scale = np.asarray(spacing)
    t = np.argwhere(neighbourhood_boundary(truth_mask)) * scale
    p = np.argwhere(neighbourhood_boundary(pred_mask)) * scale
    d = np.sqrt(((p[:, None, :] - t[None, :, :]) ** 2).sum(axis=-1))
    pred_to_truth = d.min(axis=1)
    truth_to_pred = d.min(axis=0)
    hd = max(np.percentile(pred_to_truth, 95), np.percentile(truth_to_pred, 95))
    mean = (pred_to_truth.sum() + truth_to_pred.sum()) / (len(pred_to_truth) + len(truth_to_pred))
    return hd, mean


def random_pair(rng):
    h, w = rng.integers(2, 33, size=2)
    truth = rng.random((h, w)) < rng.uniform(0.1, 0.6)
    pred = rng.random((h, w)) < rng.uniform(0.1, 0.6)
    truth.flat[rng.integers(truth.size)] = True
    pred.flat[rng.integers(pred.size)] = True
    spacing = tuple(rng.uniform(0.5, 2.0, size=2))
    return truth, pred, spacing


class TestLabelMap:
    def test_negative_ids_rejected(self):
        with pytest.raises(LabelError):
            label([[0, -1]])

    def test_ids_beyond_class_count(self):
        with pytest.raises(LabelError):
            LabelMap(np.array([[0, 3]]), num_classes=3)

    def test_wrong_rank(self):
        with pytest.raises(DimensionError):
            label([0, 1, 2])

    def test_batch_slices(self):
        batch = LabelMap(np.zeros((3, 4, 4), dtype=int), (2.0, 1.0))
        slices = list(batch.slices())
        assert len(slices) == 3
        assert slices[1].spacing == (2.0, 1.0)


class TestDsc:
    def test_identical(self):
        m = label([[0, 1], [1, 1]])
        assert dsc(m, m, 1) == 1.0

    def test_disjoint(self):
        assert dsc(label([[1, 0], [0, 0]]), label([[0, 0], [0, 1]]), 1) == 0.0

    def test_partial_overlap(self):
        assert dsc(label([[1, 1, 0]]), label([[0, 1, 1]]), 1) == 0.5

    def test_both_empty(self):
        empty = label([[0, 0]])
        assert dsc(empty, empty, 1) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            dsc(label([[0, 1]]), label([[0], [1]]), 1)


class TestBoundary:
    def test_full_image(self):
        mask = np.ones((5, 5), dtype=bool)
        expected = np.ones((5, 5), dtype=bool)
        expected[1:4, 1:4] = False
        np.testing.assert_array_equal(boundary_mask(mask), expected)

    def test_single_pixel(self):
        m = np.zeros((5, 5), dtype=int)
        m[2, 3] = 1
        assert extract_boundary(LabelMap(m), 1).as_list() == [(2.0, 3.0)]

    def test_square_perimeter(self):
        m = np.zeros((7, 7), dtype=int)
        m[2:5, 2:5] = 1
        boundary = extract_boundary(LabelMap(m), 1)
        assert len(boundary) == 8
        assert (3.0, 3.0) not in boundary.as_list()

    def test_diagonal_background_is_not_boundary(self):
        m = np.zeros((5, 5), dtype=int)
        m[2, 1:4] = 1
        m[1:4, 2] = 1
        boundary = extract_boundary(LabelMap(m), 1).as_list()
        assert (2.0, 2.0) not in boundary
        assert sorted(boundary) == [(1.0, 2.0), (2.0, 1.0), (2.0, 3.0), (3.0, 2.0)]

    def test_empty_region(self):
        assert extract_boundary(label([[0, 0]]), 1).is_empty

    def test_spacing_scales_points(self):
        m = np.zeros((4, 4), dtype=int)
        m[3, 1] = 1
        assert extract_boundary(LabelMap(m, (0.5, 2.0)), 1).as_list() == [(1.5, 2.0)]

    def test_matches_neighbourhood_scan(self, rng):
        for _ in range(20):
            mask = rng.random((12, 9)) < 0.5
            np.testing.assert_array_equal(boundary_mask(mask), neighbourhood_boundary(mask))


class TestDistances:
    def test_identical_masks(self):
        m = np.zeros((6, 6), dtype=int)
        m[1:4, 2:5] = 1
        assert hd95(LabelMap(m), LabelMap(m), 1) == 0.0
        assert msd(LabelMap(m), LabelMap(m), 1) == 0.0

    def test_hd95_single_points(self):
        truth = np.zeros((3, 6), dtype=int)
        pred = np.zeros((3, 6), dtype=int)
        truth[1, 1] = 1
        pred[1, 4] = 1
        assert hd95(LabelMap(truth), LabelMap(pred), 1) == pytest.approx(3.0)

    def test_msd_with_anisotropic_spacing(self):
        truth = np.zeros((6, 3), dtype=int)
        pred = np.zeros((6, 3), dtype=int)
        truth[0, 1] = 1
        pred[4, 1] = 1
        assert msd(LabelMap(truth, (1.5, 1.0)), LabelMap(pred, (1.5, 1.0)), 1) == pytest.approx(6.0)

    @pytest.mark.parametrize("metric", [hd95, msd])
    def test_empty_region_is_undefined(self, metric):
        truth = label([[0, 1], [0, 0]])
        with pytest.raises(UndefinedMetricError):
            metric(truth, label([[0, 0], [0, 0]]), 1)
        with pytest.raises(UndefinedMetricError):
            metric(label([[0, 0], [0, 0]]), truth, 1)

    def test_match_all_pairs_oracle(self, rng):
        for _ in range(200):
            truth, pred, spacing = random_pair(rng)
            t = LabelMap(truth.astype(int), spacing)
            p = LabelMap(pred.astype(int), spacing)
            expected_hd, expected_msd = all_pairs(truth, pred, spacing)
            assert abs(hd95(t, p, 1) - expected_hd) < 1e-9
            assert abs(msd(t, p, 1) - expected_msd) < 1e-9

    def test_symmetric(self, rng):
        for _ in range(20):
            truth, pred, spacing = random_pair(rng)
            t = LabelMap(truth.astype(int), spacing)
            p = LabelMap(pred.astype(int), spacing)
            assert hd95(t, p, 1) == pytest.approx(hd95(p, t, 1), abs=1e-12)
            assert msd(t, p, 1) == pytest.approx(msd(p, t, 1), abs=1e-12)

    def test_scale_covariant(self, rng):
        truth, pred, _ = random_pair(rng)
        base = hd95(LabelMap(truth.astype(int)), LabelMap(pred.astype(int)), 1)
        scaled = hd95(LabelMap(truth.astype(int), (2.5, 2.5)), LabelMap(pred.astype(int), (2.5, 2.5)), 1)
        assert scaled == pytest.approx(2.5 * base, rel=1e-12)

    def test_translation_invariant(self):
        truth = np.zeros((16, 16), dtype=int)
        pred = np.zeros((16, 16), dtype=int)
        truth[2:6, 3:8] = 1
        pred[3:8, 2:6] = 1
        shifted_truth = np.roll(truth, (5, 4), axis=(0, 1))
        shifted_pred = np.roll(pred, (5, 4), axis=(0, 1))
        assert hd95(LabelMap(truth), LabelMap(pred), 1) == pytest.approx(
            hd95(LabelMap(shifted_truth), LabelMap(shifted_pred), 1)
        )
        assert msd(LabelMap(truth), LabelMap(pred), 1) == pytest.approx(
            msd(LabelMap(shifted_truth), LabelMap(shifted_pred), 1)
        )


class TestReport:
    def test_dsc_mean_and_sample_std(self):
        # |T|=3, |P|=2, overlap 2 -> 0.8; second case perfect
        truths = [label([[1, 1, 1, 0]]), label([[0, 1, 0, 0]])]
        preds = [label([[1, 1, 0, 0]]), label([[0, 1, 0, 0]])]
        row = metric_report(truths, preds, ["background", "organ"]).row("organ")
        assert row.dsc_mean == pytest.approx(0.9)
        assert row.dsc_std == pytest.approx(0.1414, abs=1e-4)

    def test_single_case_std_zero(self):
        truth = label([[0, 1, 1]])
        row = metric_report([truth], [label([[1, 1, 0]])], ["bg", "a"]).row("a")
        assert row.dsc_std == 0.0
        assert row.hd95_std == 0.0

    def test_undefined_cases_counted(self):
        truths = [label([[0, 1], [0, 2]]), label([[0, 1], [0, 0]])]
        preds = [label([[0, 1], [0, 2]]), label([[0, 1], [0, 0]])]
        report = metric_report(truths, preds, ["bg", "a", "b"])
        b = report.row("b")
        assert b.n_valid == 1
        assert b.n_undefined == 1
        assert b.dsc_mean == 1.0

    def test_absent_class_flagged(self):
        truth = label([[0, 1]])
        report = metric_report([truth], [truth], ["bg", "a", "b"])
        b = report.row("b")
        assert b.flagged
        assert math.isnan(b.hd95_mean)
        assert report.to_dict()["classes"][1]["hd95_mean"] is None

    def test_batched_maps_count_per_slice(self):
        batch = LabelMap(np.array([[[0, 1]], [[1, 1]]]))
        assert metric_report([batch], [batch], ["bg", "a"]).n_cases == 2

    def test_case_count_mismatch(self):
        with pytest.raises(DimensionError):
            metric_report([label([[0, 1]])], [], ["bg", "a"])

    def test_csv_round_trip(self, tmp_path):
        truths = [label([[1, 1, 1, 0]]), label([[0, 1, 0, 0]])]
        preds = [label([[1, 1, 0, 0]]), label([[0, 1, 0, 0]])]
        report = metric_report(truths, preds, ["background", "organ"])
        path = tmp_path / "metrics.csv"
        report.to_csv(path)
        assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
        loaded = MetricReport.from_csv(path)
        assert loaded.n_cases == 2
        assert loaded.row("organ").dsc_mean == pytest.approx(report.row("organ").dsc_mean)

    def test_csv_wrong_columns(self, tmp_path):
        path = tmp_path / "metrics.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(FormatError):
            MetricReport.from_csv(path)

    def test_format_value(self):
        assert format_value(0.9, 0.1414) == "0.900 ± 0.141"
        assert format_value(float("nan"), float("nan")) == "n/a"
