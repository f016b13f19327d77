"""Thresholding, overlap metrics and the exhaustive optimal-threshold sweep."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .features import require_normalized
from .volume import FeatureVolume, Mask, MetricsReport, check_same_meta

GRID_STEPS = 50
# 0, 0.02, ..., 1.0 (51 points); k / 50 gives the double nearest each decimal.
THRESHOLD_GRID = np.arange(GRID_STEPS + 1) / GRID_STEPS

CSV_COLUMNS = ("threshold", "iou", "dice", "recall", "precision")


def apply_threshold(f: FeatureVolume, tau: float) -> Mask:
    """Voxels strictly greater than ``tau``."""
    require_normalized(f)
    tau = float(tau)
    if not 0.0 <= tau <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {tau}")
    return Mask(f.meta, f.values.astype(np.float64) > tau)


def _ratio(num: int, den: int) -> float:
    # 0/0 means both sets are empty, which is perfect agreement.
    if den == 0:
        return 1.0
    return num / den


def metrics_from_counts(inter: int, n_pred: int, n_gt: int, threshold=None) -> MetricsReport:
    inter, n_pred, n_gt = int(inter), int(n_pred), int(n_gt)
    union = n_pred + n_gt - inter
    return MetricsReport(
        iou=_ratio(inter, union),
        dice=_ratio(2 * inter, n_pred + n_gt),
        recall=_ratio(inter, n_gt),
        precision=_ratio(inter, n_pred),
        threshold=threshold,
    )


def evaluate(pred: Mask, gt: Mask, threshold=None) -> MetricsReport:
    check_same_meta(pred, gt)
    inter = np.count_nonzero(pred.values & gt.values)
    return metrics_from_counts(inter, pred.count, gt.count, threshold)


@dataclass(frozen=True)
class ThresholdSweepResult:
    best_threshold: float
    best_metrics: MetricsReport
    points: tuple[MetricsReport, ...]

    @property
    def curve(self) -> list[tuple[float, float]]:
        return [(p.threshold, p.iou) for p in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for p in self.points:
            writer.writerow([f"{p.threshold:.2f}", repr(p.iou), repr(p.dice), repr(p.recall), repr(p.precision)])
        return buf.getvalue()


def sweep_counts(values: np.ndarray, gt: np.ndarray, grid: Sequence[float] = THRESHOLD_GRID):
    """``(|P|, |P & G|)`` for every threshold of ``grid``, from two sorted copies."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    truth = np.asarray(gt, dtype=bool).ravel()
    all_sorted = np.sort(flat)
    gt_sorted = np.sort(flat[truth])
    grid = np.asarray(grid, dtype=np.float64)
    n_pred = flat.size - np.searchsorted(all_sorted, grid, side="right")
    inter = gt_sorted.size - np.searchsorted(gt_sorted, grid, side="right")
    return n_pred, inter


def sweep_optimal_threshold(f: FeatureVolume, gt: Mask) -> ThresholdSweepResult:
    """Evaluate every grid threshold and keep the best IoU (smallest threshold on ties)."""
    require_normalized(f)
    check_same_meta(f, gt)
    n_pred, inter = sweep_counts(f.values, gt.values)
    n_gt = gt.count
    points = tuple(
        metrics_from_counts(i, p, n_gt, float(tau)) for tau, p, i in zip(THRESHOLD_GRID, n_pred, inter)
    )
    best = max(range(len(points)), key=lambda k: (points[k].iou, -k))
    return ThresholdSweepResult(float(THRESHOLD_GRID[best]), points[best], points)


def mean_metrics(reports: Iterable[MetricsReport]) -> MetricsReport:
    """Arithmetic mean over volumes; the mean threshold is kept when all reports carry one."""
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to aggregate")
    taus = [r.threshold for r in reports]
    return MetricsReport(
        iou=float(np.mean([r.iou for r in reports])),
        dice=float(np.mean([r.dice for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        precision=float(np.mean([r.precision for r in reports])),
        threshold=None if any(t is None for t in taus) else float(np.mean(taus)),
    )
