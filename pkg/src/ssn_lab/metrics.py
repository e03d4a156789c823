"""Distribution-level and prediction-level segmentation metrics.

Distances between label maps use 1 - IoU averaged over non-background
classes, with class 0 as background; classes absent from both maps are
excluded, and two maps with no foreground at all are at distance 0.
Expectations over empirical distributions are taken over all ordered pairs
including self-pairs, which is the plug-in estimator of the underlying
population expectations and makes the distance of a distribution to itself
exactly zero. Single-logit binary maps count as two classes
(background/foreground). Validity masks are metadata for training and are
ignored here; metrics compare full label maps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .likelihood import LabelMap


@dataclass(frozen=True)
class SampleSet:
    """An ordered collection of label maps drawn from one distribution."""

    samples: list[LabelMap]
    source: str = "model"  # "ground_truth" or "model"

    def __post_init__(self):
        if not self.samples:
            raise ValidationError("a sample set must contain at least one map")
        first = self.samples[0]
        for sample in self.samples:
            if (
                sample.num_pixels != first.num_pixels
                or sample.num_classes != first.num_classes
            ):
                raise ShapeError("sample sets must have uniform shape and classes")

    @property
    def num_classes(self) -> int:
        return self.samples[0].num_classes

    def label_matrix(self) -> np.ndarray:
        return np.stack([sample.labels for sample in self.samples])


@dataclass(frozen=True)
class MetricReport:
    """Generalised energy distance and its three pairwise expectations.

    ``ged_squared == 2 * cross_term - gt_self_term - diversity`` by
    construction. The estimator is reported unclamped: slightly negative
    values near zero signal finite-sample noise and callers should see them.
    """

    ged_squared: float
    diversity: float
    cross_term: float
    gt_self_term: float


def _check_pair(a: LabelMap, b: LabelMap) -> None:
    if a.num_pixels != b.num_pixels:
        raise ShapeError(
            f"label maps differ in size: {a.num_pixels} vs {b.num_pixels}"
        )
    if a.num_classes != b.num_classes:
        raise ShapeError(
            f"label maps differ in classes: {a.num_classes} vs {b.num_classes}"
        )


def pairwise_iou_distance(
    rows_a: np.ndarray, rows_b: np.ndarray, num_classes: int
) -> np.ndarray:
    """Matrix of 1 - IoU distances between two stacks of label rows.

    Per pair, IoU is averaged over non-background classes present in either
    map; pairs where every non-background class is absent from both maps get
    distance 0.
    """
    effective = max(num_classes, 2)
    iou_sum = np.zeros((rows_a.shape[0], rows_b.shape[0]))
    present = np.zeros_like(iou_sum)
    for cls in range(1, effective):
        in_a = rows_a == cls
        in_b = rows_b == cls
        intersection = in_a.astype(np.float64) @ in_b.T.astype(np.float64)
        union = in_a.sum(axis=1)[:, None] + in_b.sum(axis=1)[None, :] - intersection
        defined = union > 0
        iou_sum += np.where(defined, intersection / np.where(defined, union, 1.0), 0.0)
        present += defined
    # no foreground anywhere -> identical empty maps -> distance 0
    mean_iou = np.where(present > 0, iou_sum / np.maximum(present, 1.0), 1.0)
    return 1.0 - mean_iou


def iou_distance(a: LabelMap, b: LabelMap) -> float:
    """1 - IoU between two label maps, background class excluded."""
    _check_pair(a, b)
    return float(
        pairwise_iou_distance(a.labels[None, :], b.labels[None, :], a.num_classes)[0, 0]
    )


def _unique_weighted(sample_set: SampleSet) -> tuple[np.ndarray, np.ndarray]:
    """Distinct label rows in canonical (lexicographic) order with weights."""
    rows = sample_set.label_matrix()
    unique, counts = np.unique(rows, axis=0, return_counts=True)
    return unique, counts / counts.sum()


def ged_squared(gt: SampleSet, pred: SampleSet) -> MetricReport:
    """Squared generalised energy distance between two empirical
    distributions of label maps:
    ``2 E[d(y, y_hat)] - E[d(y, y')] - E[d(y_hat, y_hat')]``.

    Identical label maps are grouped first, so the all-pairs expectations
    cost O(distinct^2) rather than O(samples^2).
    """
    _check_pair(gt.samples[0], pred.samples[0])
    num_classes = gt.num_classes
    gt_rows, gt_weights = _unique_weighted(gt)
    pred_rows, pred_weights = _unique_weighted(pred)
    cross = float(
        gt_weights @ pairwise_iou_distance(gt_rows, pred_rows, num_classes) @ pred_weights
    )
    gt_self = float(
        gt_weights @ pairwise_iou_distance(gt_rows, gt_rows, num_classes) @ gt_weights
    )
    diversity = float(
        pred_weights
        @ pairwise_iou_distance(pred_rows, pred_rows, num_classes)
        @ pred_weights
    )
    return MetricReport(
        ged_squared=2.0 * cross - gt_self - diversity,
        diversity=diversity,
        cross_term=cross,
        gt_self_term=gt_self,
    )


def sample_diversity(pred: SampleSet) -> float:
    """Mean pairwise distance among a model's own samples (self-pairs
    included); zero for a deterministic predictor."""
    if len(pred.samples) < 2:
        warnings.warn("sample diversity of a single sample is 0 by convention")
        return 0.0
    rows, weights = _unique_weighted(pred)
    return float(
        weights @ pairwise_iou_distance(rows, rows, pred.num_classes) @ weights
    )


def dsc(pred: LabelMap, gt: LabelMap, cls: int) -> float | None:
    """Dice coefficient 2TP / (2TP + FN + FP) for one class.

    Returns None (undefined) when the class is absent from both maps; such
    entries are excluded from averages rather than scored as 1.
    """
    _check_pair(pred, gt)
    in_pred = pred.labels == cls
    in_gt = gt.labels == cls
    denominator = int(in_pred.sum()) + int(in_gt.sum())
    if denominator == 0:
        return None
    true_positive = int((in_pred & in_gt).sum())
    return 2.0 * true_positive / denominator


def dsc_nod(pred: LabelMap, gts: SampleSet) -> float | None:
    """Mean Dice against only those ground-truth maps with foreground.

    Per retained map, per-class Dice values are averaged over the
    non-background classes, skipping undefined ones. Returns None when every
    ground truth is empty.
    """
    _check_pair(pred, gts.samples[0])
    effective = max(gts.num_classes, 2)
    scores = []
    for gt in gts.samples:
        if not np.any(gt.labels > 0):
            continue
        per_class = [dsc(pred, gt, cls) for cls in range(1, effective)]
        defined = [score for score in per_class if score is not None]
        scores.append(float(np.mean(defined)))
    if not scores:
        return None
    return float(np.mean(scores))


def marginal_entropy(prob_samples: list[np.ndarray]) -> np.ndarray:
    """Per-pixel entropy of the sample-averaged class probabilities.

    Input tensors are [num_pixels, num_classes] probability rows, or
    [num_pixels] foreground probabilities for single-logit binary maps
    (expanded to two classes). The log base is the class count, so the
    output lies in [0, 1]; 0 * log 0 counts as 0.
    """
    if not prob_samples:
        raise ValidationError("need at least one probability tensor")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in prob_samples])
    if stacked.ndim == 3 and stacked.shape[2] == 1:
        stacked = stacked[:, :, 0]
    if stacked.ndim == 2:  # [n, S] foreground probabilities
        stacked = np.stack([1.0 - stacked, stacked], axis=2)
    if stacked.ndim != 3:
        raise ShapeError("probability tensors must be [num_pixels, num_classes]")
    if np.any(stacked < -1e-9) or np.any(stacked > 1.0 + 1e-9):
        raise ValidationError("probabilities must lie in [0, 1]")
    row_sums = stacked.sum(axis=2)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise ValidationError("probability rows must sum to 1 within 1e-6")
    mean_probs = stacked.mean(axis=0)
    num_classes = mean_probs.shape[1]
    safe = np.where(mean_probs > 0.0, mean_probs, 1.0)
    entropy = -(mean_probs * np.log(safe)).sum(axis=1) / np.log(num_classes)
    return entropy
