"""Segmentation metrics: DSC, HD95, MSD and per-class reports."""

from src.metrics.labelmap import BoundarySet, LabelMap
from src.metrics.report import CSV_COLUMNS, ClassRow, MetricReport, metric_report
from src.metrics.surface import boundary_mask, dsc, extract_boundary, hd95, msd

__all__ = [
    "BoundarySet",
    "LabelMap",
    "CSV_COLUMNS",
    "ClassRow",
    "MetricReport",
    "metric_report",
    "boundary_mask",
    "dsc",
    "extract_boundary",
    "hd95",
    "msd",
]
