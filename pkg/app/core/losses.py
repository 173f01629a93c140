"""Structured segmentation loss: BCE + soft IoU on each of the six supervised maps."""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from app.core.tensor import (
    Tensor,
    add,
    div,
    hadamard,
    reduce_mean,
    reduce_sum,
    sigmoid,
    softplus,
    sub,
)
from app.exceptions.custom_exceptions import InputError, ShapeError, UsageError

logger = logging.getLogger(__name__)

IOU_SMOOTHING = 1.0


@dataclass
class LossBreakdown:
    bce: float
    iou: float
    per_map: List[Tuple[str, float]] = field(default_factory=list)
    total: Tensor = None

    @property
    def total_value(self) -> float:
        return self.total.item()

    def as_row(self) -> dict:
        row = {"bce": self.bce, "iou": self.iou, "total": self.total_value}
        row.update({name: value for name, value in self.per_map})
        return row


def _check_target(logits: Tensor, gt: Tensor, op: str) -> None:
    if logits.shape != gt.shape:
        raise ShapeError(f"{op}: logits {logits.shape} vs ground truth {gt.shape}")
    if not np.all((gt.values == 0) | (gt.values == 1)):
        raise InputError(f"{op}: ground truth must be binary (values in {{0, 1}})")


def bce_loss(logits: Tensor, gt: Tensor) -> Tensor:
    """Mean binary cross-entropy on logits: softplus(x) - x*g"""
    _check_target(logits, gt, "bce_loss")
    return reduce_mean(sub(softplus(logits), hadamard(logits, gt)))


def iou_loss(logits: Tensor, gt: Tensor) -> Tensor:
    """1 - (sum p*g + eps) / (sum p + sum g - sum p*g + eps) per image, averaged over the batch"""
    _check_target(logits, gt, "iou_loss")
    axes = tuple(range(1, logits.ndim))
    p = sigmoid(logits)
    eps = Tensor(IOU_SMOOTHING)
    inter = reduce_sum(hadamard(p, gt), axis=axes)
    union = sub(add(reduce_sum(p, axis=axes), reduce_sum(gt, axis=axes)), inter)
    ratio = div(add(inter, eps), add(union, eps))
    return reduce_mean(sub(Tensor(1.0), ratio))


def total_loss(preds, gt: Tensor) -> LossBreakdown:
    """Sum of bce + iou over P_1..P_4 and the two auxiliary maps"""
    maps = preds.as_dict() if hasattr(preds, "as_dict") else dict(preds)
    missing = [name for name in ("p1", "p2", "p3", "p4", "aux_fv", "aux_fm") if maps.get(name) is None]
    if missing:
        raise UsageError(f"total_loss: missing prediction maps {missing}")

    total = None
    per_map = []
    bce_sum = iou_sum = 0.0
    for name in ("p1", "p2", "p3", "p4", "aux_fv", "aux_fm"):
        logits = maps[name]
        bce = bce_loss(logits, gt)
        iou = iou_loss(logits, gt)
        seg = add(bce, iou)
        per_map.append((name, seg.item()))
        bce_sum += bce.item()
        iou_sum += iou.item()
        total = seg if total is None else add(total, seg)
    logger.debug(f"[total_loss] - total={total.item():.6f} bce={bce_sum:.6f} iou={iou_sum:.6f}")
    return LossBreakdown(bce=bce_sum, iou=iou_sum, per_map=per_map, total=total)
