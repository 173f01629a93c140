"""
Training loop: Adam over every trainable parameter, fixed-seed shuffling,
per-step loss trace and a CGT1 checkpoint at the end.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from config import CONFIG
from app.core.cgd import PREDICTION_MAPS, CGNet
from app.core.checkpoint import save_checkpoint
from app.core.dataset import TrainingTriple, augment, load_triples, read_sample
from app.core.losses import total_loss
from app.core.run_config import OptimConfig, RunConfig
from app.core.tensor import Parameter, Tensor, backward
from app.exceptions.custom_exceptions import InputError
from app.utils.file_manager import ensure_directory_exists, write_csv

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "bce", "iou", "total", *PREDICTION_MAPS]
RUN_CONFIG_NAME = "run_config.json"


class Adam:
    """Adam with bias correction; no weight decay, no schedule"""

    def __init__(self, params: List[Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if not p.frozen]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros(p.shape) for p in self.params}
        self.v = {p.name: np.zeros(p.shape) for p in self.params}

    @classmethod
    def from_config(cls, params: List[Parameter], optim: OptimConfig) -> "Adam":
        return cls(params, optim.lr, optim.beta1, optim.beta2, optim.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.zero_grad()

    def step(self) -> None:
        self.t += 1
        correction1 = 1 - self.beta1**self.t
        correction2 = 1 - self.beta2**self.t
        for p in self.params:
            g = p.tensor.grad
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1 - self.beta1) * g
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1 - self.beta2) * g * g
            p.tensor.values = p.tensor.values - self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


@dataclass
class TrainResult:
    checkpoint_path: str
    loss_csv_path: str
    rows: List[Dict[str, float]] = field(default_factory=list)
    model: Optional[CGNet] = None

    @property
    def initial_loss(self) -> float:
        return self.rows[0]["total"]

    @property
    def final_loss(self) -> float:
        return self.rows[-1]["total"]

    def to_dict(self) -> Dict:
        return {
            "checkpoint": self.checkpoint_path,
            "loss_csv": self.loss_csv_path,
            "steps": len(self.rows),
            "initial_loss": self.initial_loss if self.rows else None,
            "final_loss": self.final_loss if self.rows else None,
        }


def total_steps(n_samples: int, optim: OptimConfig) -> int:
    """Step budget; an epoch budget wins when set"""
    if optim.epochs is not None:
        return optim.epochs * math.ceil(n_samples / optim.batch_size)
    return optim.steps


def batch_schedule(n_samples: int, batch_size: int, steps: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Index batches for ``steps`` updates, reshuffling at every epoch boundary"""
    batches: List[np.ndarray] = []
    while len(batches) < steps:
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, batch_size):
            batches.append(order[start : start + batch_size])
            if len(batches) == steps:
                break
    return batches


def _load_batch(samples, indices, optim: OptimConfig, rng: np.random.Generator):
    images, masks = [], []
    for i in indices:
        image, mask = samples[i]
        image, mask = augment(image, mask, rng, optim.hflip, optim.random_crop, optim.color_jitter)
        images.append(image)
        masks.append(mask)
    return Tensor(np.stack(images)), Tensor(np.stack(masks)[:, None])


def train(
    config: RunConfig,
    manifest_path: str,
    out_dir: str,
    progress_hook: Optional[Callable[[Dict], None]] = None,
    show_progress: bool = False,
) -> TrainResult:
    """Train a fresh model on every (image, label, mask) triple of a manifest"""
    config.validate(check_paths=False)
    triples: List[TrainingTriple] = load_triples(manifest_path)
    if not triples:
        raise InputError(f"manifest has no training samples: {manifest_path}")
    ensure_directory_exists(out_dir)

    side = config.encoder.detector_side
    samples = [read_sample(t, side=side) for t in triples]
    labels = [t.label for t in triples]

    model = CGNet.from_config(config)
    optimizer = Adam.from_config(model.params.trainable(), config.optim)
    rng = np.random.default_rng(config.seed)
    steps = total_steps(len(triples), config.optim)
    schedule = batch_schedule(len(triples), config.optim.batch_size, steps, rng)
    logger.info(
        f"[train] - {len(triples)} triples, {steps} steps, batch {config.optim.batch_size}, lr {config.optim.lr}"
    )

    rows: List[Dict[str, float]] = []
    for step, indices in enumerate(tqdm(schedule, desc="train", unit="step", disable=not show_progress)):
        images, masks = _load_batch(samples, indices, config.optim, rng)
        predictions, _ = model(images, [labels[i] for i in indices])
        breakdown = total_loss(predictions, masks)

        optimizer.zero_grad()
        backward(breakdown.total)
        optimizer.step()

        row = {"step": step, **breakdown.as_row()}
        rows.append(row)
        logger.debug(f"[train] - step {step + 1}/{steps} total={row['total']:.6f}")
        if progress_hook:
            progress_hook({"status": "training", "step": step + 1, "total": steps, "loss": row["total"]})

    checkpoint_path = save_checkpoint(model.params, os.path.join(out_dir, CONFIG["checkpoint_name"]))
    loss_csv_path = os.path.join(out_dir, CONFIG["loss_csv_name"])
    write_csv(rows, loss_csv_path, fieldnames=LOSS_COLUMNS)
    with open(os.path.join(out_dir, RUN_CONFIG_NAME), "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)

    result = TrainResult(checkpoint_path, loss_csv_path, rows, model)
    if rows:
        logger.info(f"[train] - Done: total loss {result.initial_loss:.4f} -> {result.final_loss:.4f}")
    if progress_hook:
        progress_hook({"status": "finished", "step": steps, "total": steps, "loss": rows[-1]["total"] if rows else None})
    return result
