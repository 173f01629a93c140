import os
import threading
import logging
from typing import Optional, Tuple

import numpy as np
from PIL import Image
from scipy.ndimage import zoom

from app.core.cgd import CGNet
from app.core.evaluator import SYNTHETIC_CAVEAT, load_model, resolve_run_config
from app.core.tensor import Tensor, sigmoid
from app.core.validators import normalize_label, validate_class_label
from app.exceptions.custom_exceptions import CGNetError, CheckpointError

logger = logging.getLogger(__name__)

# Loaded models keyed by checkpoint path
_models = {}
_models_lock = threading.Lock()


def get_segment_placeholder_html() -> str:
    return """
    <div class="status-placeholder">
        <p style="font-size: 1em; font-weight: 500; margin: 0;">The P1 probability map will appear here.</p>
    </div>
    """


def _error_html(message: str) -> str:
    return f'<div class="result-error">❌ {message}</div>'


def get_model(checkpoint_path: str) -> CGNet:
    """Load (once) the model stored at ``checkpoint_path``"""
    key = os.path.abspath(checkpoint_path)
    with _models_lock:
        if key not in _models:
            config = resolve_run_config(key)
            config.validate(check_paths=False)
            _models[key] = load_model(config, key)
            logger.info(f"[get_model] - Loaded checkpoint {key}")
        return _models[key]


def to_model_input(image: np.ndarray, side: int) -> np.ndarray:
    """uint8 HxWx3 (or HxW) upload to float [1, 3, side, side] in [0, 1]"""
    array = np.asarray(image, dtype=np.float64) / 255.0
    if array.ndim == 2:
        array = np.repeat(array[:, :, None], 3, axis=2)
    array = array[:, :, :3].transpose(2, 0, 1)
    h, w = array.shape[1:]
    array = np.clip(zoom(array, (1, side / h, side / w), order=1), 0.0, 1.0)
    return array[None]


def segment_image(
    image: Optional[np.ndarray], label: str, checkpoint_path: str
) -> Tuple[Optional[Image.Image], str]:
    """
    Run the detector on an uploaded image for one class label

    Returns:
        (probability_map_image, status_html)
    """
    if image is None:
        return None, _error_html("Please upload an image")
    label = normalize_label(label or "")
    if not validate_class_label(label):
        return None, _error_html(f"Invalid class label: {label!r}")
    if not checkpoint_path or not os.path.isfile(checkpoint_path):
        return None, _error_html(f"Checkpoint not found: {checkpoint_path}")

    try:
        model = get_model(checkpoint_path)
        side = model.encoder_cfg.detector_side
        predictions, _ = model(Tensor(to_model_input(image, side)), [label])
        prob = sigmoid(predictions.p1).values[0, 0]
    except (CGNetError, CheckpointError) as e:
        return None, _error_html(str(e))

    h, w = np.asarray(image).shape[:2]
    heatmap = Image.fromarray(np.round(prob * 255.0).astype(np.uint8)).resize((w, h), Image.BILINEAR)
    coverage = float((prob >= 0.5).mean())
    status = f"""
    <div class="result-card">
        <h4 style="margin: 0 0 8px 0;">Class: {label}</h4>
        <p style="margin: 0;">Foreground at p &ge; 0.5: {coverage:.1%} of the image (detector grid {side}&times;{side})</p>
        <p class="result-caveat">{SYNTHETIC_CAVEAT}</p>
    </div>
    """
    logger.info(f"[segment_image] - {label}: coverage {coverage:.3f}")
    return heatmap, status
