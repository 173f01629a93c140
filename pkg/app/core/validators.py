import re
import logging
from typing import Iterable

import numpy as np

from config import CONFIG
from app.exceptions.custom_exceptions import ConfigError, InputError, ShapeError

logger = logging.getLogger(__name__)

_LABEL_PATTERN = re.compile(r"^[a-z0-9][a-z0-9 _-]*$")


def normalize_label(label: str) -> str:
    """Lowercase a class label and collapse internal whitespace"""
    return " ".join(str(label).lower().split())


def validate_class_label(label: str) -> bool:
    """Validate that a class label is a non-empty normalised lowercase string"""
    is_valid = isinstance(label, str) and bool(label) and label == normalize_label(label) and bool(
        _LABEL_PATTERN.match(label)
    )
    logger.debug(f"[validate_class_label] - {label!r}: {is_valid}")
    return is_valid


def validate_class_labels(labels: Iterable[str]) -> None:
    """Validate a batch of class labels"""
    labels = list(labels)
    if not labels:
        raise InputError("at least one class label is required")
    for label in labels:
        if not validate_class_label(label):
            raise InputError(f"invalid class label: {label!r} (expected non-empty lowercase text)")


def validate_activation(name: str) -> bool:
    """Validate if the activation is supported"""
    if name not in CONFIG["supported_activations"]:
        logger.error(f"[validate_activation] - Unsupported activation: {name}")
        return False
    return True


def validate_side(side: int, name: str) -> None:
    """Input sides go through five halvings, so they must be multiples of 32"""
    if side < 32 or side % 32 != 0:
        raise ConfigError(f"{name} must be a positive multiple of 32, got {side}")


def validate_heads(dim: int, heads: int, name: str) -> None:
    if heads < 1 or dim % heads != 0:
        raise ConfigError(f"{name}: width {dim} not divisible by {heads} heads")


def validate_probability_map(pred: np.ndarray) -> None:
    """Validate a prediction map: 2-D, finite, values in [0, 1]"""
    if pred.ndim != 2:
        raise InputError(f"prediction must be a 2-D map, got shape {pred.shape}")
    if not np.all(np.isfinite(pred)):
        raise InputError("prediction contains non-finite values")
    if pred.min() < 0.0 or pred.max() > 1.0:
        raise InputError(f"prediction outside [0, 1]: range [{pred.min()}, {pred.max()}]")


def validate_binary_mask(gt: np.ndarray) -> None:
    """Validate a ground-truth mask: values in {0, 1}"""
    if not np.all((gt == 0) | (gt == 1)):
        raise InputError("ground truth must be binary (values in {0, 1})")


def validate_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    """Validate a prediction / ground-truth pair"""
    if pred.shape != gt.shape:
        raise InputError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    validate_probability_map(pred)
    validate_binary_mask(gt)


def validate_image_side(image_shape, side: int, name: str) -> None:
    if len(image_shape) != 4 or image_shape[1] != 3 or image_shape[2:] != (side, side):
        raise ShapeError(f"{name}: expected [B,3,{side},{side}] input, got {tuple(image_shape)}")
