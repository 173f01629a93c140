import logging
from typing import Optional

import numpy as np
from scipy.ndimage import zoom

from app.core.metrics import evaluate_pair
from app.exceptions.custom_exceptions import CGNetError
from app.utils.formatters import METRIC_COLUMNS, format_metric

logger = logging.getLogger(__name__)


def get_metrics_placeholder_html() -> str:
    return """
    <div class="status-placeholder">
        <p style="font-size: 1em; font-weight: 500; margin: 0;">Upload a prediction and its ground truth to score them.</p>
    </div>
    """


def _gray(image: np.ndarray) -> np.ndarray:
    array = np.asarray(image, dtype=np.float64)
    return array.mean(axis=2) if array.ndim == 3 else array


def score_pair(prediction: Optional[np.ndarray], ground_truth: Optional[np.ndarray]) -> str:
    """Five metrics for an uploaded 8-bit prediction map and mask, as an HTML table"""
    if prediction is None or ground_truth is None:
        return '<div class="result-error">❌ Please upload both images</div>'

    pred = _gray(prediction) / 255.0
    gt = _gray(ground_truth) >= 128
    if pred.shape != gt.shape:
        # masks keep their resolution; the prediction is resampled onto them
        pred = np.clip(zoom(pred, (gt.shape[0] / pred.shape[0], gt.shape[1] / pred.shape[1]), order=1), 0.0, 1.0)

    try:
        report = evaluate_pair(pred, gt)
    except CGNetError as e:
        return f'<div class="result-error">❌ {e}</div>'

    values = report.to_dict()
    header = "".join(f"<th>{label}</th>" for _, label in METRIC_COLUMNS)
    cells = "".join(f"<td>{format_metric(values[key])}</td>" for key, _ in METRIC_COLUMNS)
    logger.info(f"[score_pair] - S_m={report.s_measure:.4f} MAE={report.mae:.4f}")
    return f"""
    <div class="result-card">
        <table class="metric-table"><tr>{header}</tr><tr>{cells}</tr></table>
    </div>
    """
