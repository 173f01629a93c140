"""
Segmentation measures for a probability map against a binary mask.

S-measure, mean E-measure, weighted F-measure, mean F-measure and MAE,
following the published definitions as implemented by the py_sod_metrics
toolkit, on float predictions in [0, 1] (no 8-bit quantisation and no min-max
rescaling of the prediction). Thresholded measures binarise at the 256 bin
midpoints ``(t + 0.5) / 256``.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Tuple

import numpy as np
from scipy.ndimage import convolve, distance_transform_edt

from app.core.validators import validate_pair
from app.exceptions.custom_exceptions import UsageError

logger = logging.getLogger(__name__)

_EPS = np.spacing(1)
ALPHA = 0.5
F_MEAN_BETA2 = 0.3
F_WEIGHTED_BETA2 = 1.0
THRESHOLDS = (np.arange(256) + 0.5) / 256.0


@dataclass
class MetricReport:
    s_measure: float
    e_measure_mean: float
    f_weighted: float
    f_mean: float
    mae: float
    n_samples: int = 1

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def table_row(self) -> List[float]:
        """Column order of the usual COD benchmark tables: S_m, F_beta^w, MAE, E_phi^m, F_beta^m"""
        return [self.s_measure, self.f_weighted, self.mae, self.e_measure_mean, self.f_mean]


def _prepare(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    validate_pair(pred, gt)
    return pred, gt.astype(bool)


def mae(pred, gt) -> float:
    pred, gt = _prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


# ---------------------------------------------------------------------------
# S-measure
# ---------------------------------------------------------------------------


def _s_object(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = np.mean(values)
    sigma_x = np.std(values, ddof=1) if values.size > 1 else 0.0
    return 2 * x / (x * x + 1 + sigma_x + _EPS)


def _object_score(pred: np.ndarray, gt: np.ndarray) -> float:
    u = np.mean(gt)
    return u * _s_object(pred[gt]) + (1 - u) * _s_object(1 - pred[~gt])


def _centroid(gt: np.ndarray) -> Tuple[int, int]:
    h, w = gt.shape
    if not gt.any():
        return int(np.round(w / 2)) + 1, int(np.round(h / 2)) + 1
    y, x = np.argwhere(gt).mean(axis=0).round()
    return int(x) + 1, int(y) + 1


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    x = np.mean(pred)
    y = np.mean(gt)
    denom = max(n - 1, 1)
    sigma_x = np.sum((pred - x) ** 2) / denom
    sigma_y = np.sum((gt - y) ** 2) / denom
    sigma_xy = np.sum((pred - x) * (gt - y)) / denom
    alpha = 4 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x + sigma_y)
    if alpha != 0:
        return alpha / (beta + _EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _region_score(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    x, y = _centroid(gt)
    gt = gt.astype(np.float64)
    quadrants = [
        (slice(0, y), slice(0, x)),
        (slice(0, y), slice(x, w)),
        (slice(y, h), slice(0, x)),
        (slice(y, h), slice(x, w)),
    ]
    area = h * w
    w1 = x * y / area
    w2 = y * (w - x) / area
    w3 = (h - y) * x / area
    weights = [w1, w2, w3, 1 - w1 - w2 - w3]
    score = 0.0
    for weight, (rows, cols) in zip(weights, quadrants):
        if pred[rows, cols].size:
            score += weight * _ssim(pred[rows, cols], gt[rows, cols])
    return score


def s_measure(pred, gt) -> float:
    """Structure measure: 0.5 * object-aware + 0.5 * region-aware similarity"""
    pred, gt = _prepare(pred, gt)
    y = np.mean(gt)
    if y == 0:
        score = 1 - np.mean(pred)
    elif y == 1:
        score = np.mean(pred)
    else:
        score = ALPHA * _object_score(pred, gt) + (1 - ALPHA) * _region_score(pred, gt)
    return float(max(0.0, score))


# ---------------------------------------------------------------------------
# E-measure
# ---------------------------------------------------------------------------


def _enhanced_alignment(fg: np.ndarray, gt: np.ndarray) -> float:
    if not gt.any():
        return float(np.mean(1.0 - fg))
    if gt.all():
        return float(np.mean(fg))
    gt = gt.astype(np.float64)
    d_fg = fg - fg.mean()
    d_gt = gt - gt.mean()
    align = 2 * d_fg * d_gt / (d_fg * d_fg + d_gt * d_gt + _EPS)
    return float(np.mean((align + 1) ** 2 / 4))


def e_measure_curve(pred, gt) -> np.ndarray:
    pred, gt = _prepare(pred, gt)
    return np.array([_enhanced_alignment((pred >= t).astype(np.float64), gt) for t in THRESHOLDS])


def e_measure_mean(pred, gt) -> float:
    """Enhanced-alignment measure averaged over the 256 thresholds"""
    return float(np.mean(e_measure_curve(pred, gt)))


# ---------------------------------------------------------------------------
# F-measures
# ---------------------------------------------------------------------------


def _f_score(precision: float, recall: float, beta2: float) -> float:
    denom = beta2 * precision + recall
    return (1 + beta2) * precision * recall / denom if denom > 0 else 0.0


def f_mean(pred, gt) -> float:
    """F_beta (beta^2 = 0.3) averaged over the 256 thresholds"""
    pred, gt = _prepare(pred, gt)
    positives = gt.sum()
    scores = []
    for t in THRESHOLDS:
        fg = pred >= t
        tp = np.count_nonzero(fg & gt)
        predicted = np.count_nonzero(fg)
        precision = tp / predicted if predicted else 0.0
        recall = tp / positives if positives else 0.0
        scores.append(_f_score(precision, recall, F_MEAN_BETA2))
    return float(np.mean(scores))


def gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    """Normalised square gaussian window (fspecial-style)"""
    m = (size - 1) / 2
    y, x = np.ogrid[-m : m + 1, -m : m + 1]
    h = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0
    return h / h.sum()


def f_weighted(pred, gt) -> float:
    """Weighted F-measure (beta^2 = 1) with gaussian error dependency and distance-based importance"""
    pred, gt = _prepare(pred, gt)
    if not gt.any():
        logger.warning("[f_weighted] - empty ground truth, score is 0")
        return 0.0

    dist, (rows, cols) = distance_transform_edt(~gt, return_indices=True)
    error = np.abs(pred - gt)
    spread = error.copy()
    spread[~gt] = error[rows[~gt], cols[~gt]]
    smoothed = convolve(spread, weights=gaussian_kernel(7, 5.0), mode="constant", cval=0)
    min_error = np.where(gt & (smoothed < error), smoothed, error)
    importance = np.where(gt, 1.0, 2 - np.exp(np.log(0.5) / 5 * dist))
    weighted = min_error * importance

    tp = np.sum(gt) - np.sum(weighted[gt])
    fp = np.sum(weighted[~gt])
    recall = 1 - np.mean(weighted[gt])
    precision = tp / (tp + fp + _EPS)
    beta2 = F_WEIGHTED_BETA2
    return float((1 + beta2) * recall * precision / (recall + beta2 * precision + _EPS))


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def evaluate_pair(pred, gt) -> MetricReport:
    return MetricReport(
        s_measure=s_measure(pred, gt),
        e_measure_mean=e_measure_mean(pred, gt),
        f_weighted=f_weighted(pred, gt),
        f_mean=f_mean(pred, gt),
        mae=mae(pred, gt),
    )


def average_reports(reports: List[MetricReport]) -> MetricReport:
    """Arithmetic mean of per-sample reports, summed in index order"""
    if not reports:
        raise UsageError("cannot average an empty list of metric reports")
    n = len(reports)
    return MetricReport(
        s_measure=math.fsum(r.s_measure for r in reports) / n,
        e_measure_mean=math.fsum(r.e_measure_mean for r in reports) / n,
        f_weighted=math.fsum(r.f_weighted for r in reports) / n,
        f_mean=math.fsum(r.f_mean for r in reports) / n,
        mae=math.fsum(r.mae for r in reports) / n,
        n_samples=n,
    )


def evaluate_dataset(pairs: Iterable[Tuple[np.ndarray, np.ndarray]]) -> MetricReport:
    """Per-sample metrics averaged over a non-empty stream of (pred, gt) pairs"""
    reports = [evaluate_pair(pred, gt) for pred, gt in pairs]
    if not reports:
        raise UsageError("evaluate_dataset needs at least one (pred, gt) pair")
    report = average_reports(reports)
    logger.info(f"[evaluate_dataset] - {report.n_samples} samples: S_m={report.s_measure:.4f} MAE={report.mae:.4f}")
    return report
