"""Overlap and boundary-distance metrics on 2D label maps.

Boundaries are 4-connected: a pixel of the region belongs to the boundary
when at least one of its four neighbours lies outside the region or
outside the image. Distances are Euclidean between pixel centres in mm.
"""

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.spatial import cKDTree

from src.errors import DimensionError, UndefinedMetricError
from src.metrics.labelmap import BoundarySet, LabelMap

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _check_pair(truth: LabelMap, pred: LabelMap) -> None:
    if truth.shape != pred.shape:
        raise DimensionError(f"label maps differ in shape: {truth.shape} vs {pred.shape}")


def _require_slice(mask: LabelMap) -> None:
    if mask.is_batched:
        raise DimensionError("boundary metrics take one H x W slice; iterate LabelMap.slices()")


def dsc(truth: LabelMap, pred: LabelMap, class_id: int) -> float:
    """Dice overlap 2|T and P| / (|T| + |P|); 1.0 when both regions are empty."""
    _check_pair(truth, pred)
    t = truth.mask(class_id)
    p = pred.mask(class_id)
    total = int(t.sum()) + int(p.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(t, p).sum()) / total


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    region = np.asarray(mask, dtype=bool)
    if not region.any():
        return region
    return region & ~binary_erosion(region, structure=_CROSS, border_value=0)


def extract_boundary(mask: LabelMap, class_id: int) -> BoundarySet:
    _require_slice(mask)
    rows, cols = np.nonzero(boundary_mask(mask.mask(class_id)))
    points = np.column_stack([rows * mask.spacing[0], cols * mask.spacing[1]]).astype(np.float64)
    return BoundarySet(points=points.reshape(-1, 2))


def _directed_distances(truth: LabelMap, pred: LabelMap, class_id: int, metric: str):
    _check_pair(truth, pred)
    truth_points = extract_boundary(truth, class_id)
    pred_points = extract_boundary(pred, class_id)
    if truth_points.is_empty or pred_points.is_empty:
        side = "truth" if truth_points.is_empty else "prediction"
        raise UndefinedMetricError(f"{metric} undefined for class {class_id}: {side} region is empty")
    pred_to_truth, _ = cKDTree(truth_points.points).query(pred_points.points, k=1)
    truth_to_pred, _ = cKDTree(pred_points.points).query(truth_points.points, k=1)
    return pred_to_truth, truth_to_pred


def hd95(truth: LabelMap, pred: LabelMap, class_id: int) -> float:
    """Symmetric 95th-percentile Hausdorff distance in mm (linear interpolation)."""
    pred_to_truth, truth_to_pred = _directed_distances(truth, pred, class_id, "HD95")
    return float(max(np.percentile(pred_to_truth, 95), np.percentile(truth_to_pred, 95)))


def msd(truth: LabelMap, pred: LabelMap, class_id: int) -> float:
    """Mean surface distance over both boundary sets in mm."""
    pred_to_truth, truth_to_pred = _directed_distances(truth, pred, class_id, "MSD")
    total = float(pred_to_truth.sum()) + float(truth_to_pred.sum())
    return total / (len(pred_to_truth) + len(truth_to_pred))
