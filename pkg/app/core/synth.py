"""
Procedural camouflage scenes.

Each sample is a smooth-noise background with one or two parametric shapes
("blob", "star", "worm", "ring") filled with a second noise texture shifted
by ``(1 - camouflage_strength) * 0.4``. At strength 1 the foreground has the
same statistics as the background. Masks are exact, edges are the
morphological gradient of the union mask.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import gaussian_filter, grey_dilation, grey_erosion

from app.core.dataset import SPLIT_TAGS, SampleRecord, write_manifest
from app.exceptions.custom_exceptions import ConfigError
from app.utils.file_manager import ensure_directory_exists, write_gray_u8, write_image_rgb

logger = logging.getLogger(__name__)

FOREGROUND_SHIFT = 0.4
MANIFEST_NAME = "manifest.jsonl"


@dataclass
class SynthConfig:
    seed: int = 0
    n_samples: int = 8
    image_side: int = 64
    class_vocabulary: List[str] = field(default_factory=lambda: ["blob", "star", "worm", "ring"])
    camouflage_strength: float = 0.5
    multi_class_rate: float = 0.0
    split: str = "train"

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if not 0.0 <= self.camouflage_strength <= 1.0:
            raise ConfigError(f"camouflage_strength must be in [0, 1], got {self.camouflage_strength}")
        if not 0.0 <= self.multi_class_rate <= 1.0:
            raise ConfigError(f"multi_class_rate must be in [0, 1], got {self.multi_class_rate}")
        if self.image_side < 16:
            raise ConfigError(f"image_side must be >= 16, got {self.image_side}")
        if self.split not in SPLIT_TAGS:
            raise ConfigError(f"split must be one of {SPLIT_TAGS}, got {self.split!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        unknown = [c for c in self.class_vocabulary if c not in SHAPES]
        if not self.class_vocabulary or unknown:
            raise ConfigError(f"unknown shape classes {unknown}; available: {sorted(SHAPES)}")


# ---------------------------------------------------------------------------
# Shapes
# ---------------------------------------------------------------------------


def _polygon(center, radii, angles):
    cx, cy = center
    return [(cx + r * math.cos(a), cy + r * math.sin(a)) for r, a in zip(radii, angles)]


def _draw_blob(draw, rng, center, scale):
    angles = np.linspace(0, 2 * np.pi, 48, endpoint=False)
    radius = scale * np.ones_like(angles)
    for k in (2, 3):
        radius += scale * rng.uniform(0.05, 0.2) * np.cos(k * angles + rng.uniform(0, 2 * np.pi))
    draw.polygon(_polygon(center, radius, angles), fill=255)


def _draw_star(draw, rng, center, scale):
    points = int(rng.integers(5, 8))
    angles = np.linspace(0, 2 * np.pi, 2 * points, endpoint=False) + rng.uniform(0, np.pi)
    radii = np.where(np.arange(2 * points) % 2 == 0, scale * 1.1, scale * 0.5)
    draw.polygon(_polygon(center, radii, angles), fill=255)


def _draw_worm(draw, rng, center, scale):
    heading = rng.uniform(0, 2 * np.pi)
    x, y = center
    steps = 8
    step = 2.2 * scale / steps
    points = [(x - math.cos(heading) * scale, y - math.sin(heading) * scale)]
    for _ in range(steps):
        heading += rng.uniform(-0.6, 0.6)
        px, py = points[-1]
        points.append((px + math.cos(heading) * step, py + math.sin(heading) * step))
    width = max(3, int(round(scale * 0.45)))
    draw.line(points, fill=255, width=width, joint="curve")
    for px, py in (points[0], points[-1]):
        r = width / 2
        draw.ellipse([px - r, py - r, px + r, py + r], fill=255)


def _draw_ring(draw, rng, center, scale):
    cx, cy = center
    outer = scale * 1.05
    inner = outer * rng.uniform(0.45, 0.6)
    draw.ellipse([cx - outer, cy - outer, cx + outer, cy + outer], fill=255)
    draw.ellipse([cx - inner, cy - inner, cx + inner, cy + inner], fill=0)


SHAPES = {"blob": _draw_blob, "star": _draw_star, "worm": _draw_worm, "ring": _draw_ring}


def render_shape(label: str, side: int, rng: np.random.Generator, center: Tuple[float, float], scale: float) -> np.ndarray:
    """Boolean [side, side] mask of one shape"""
    canvas = Image.new("L", (side, side), 0)
    SHAPES[label](ImageDraw.Draw(canvas), rng, center, scale)
    return np.asarray(canvas) >= 128


# ---------------------------------------------------------------------------
# Textures
# ---------------------------------------------------------------------------


def noise_texture(rng: np.random.Generator, side: int, sigma: float = 2.0) -> np.ndarray:
    """Smooth RGB noise [3, side, side] centred on 0.5"""
    values = gaussian_filter(rng.standard_normal((3, side, side)), sigma=(0, sigma, sigma), mode="wrap")
    values /= values.std() + 1e-12
    tint = rng.uniform(-0.04, 0.04, size=(3, 1, 1))
    return np.clip(0.5 + tint + 0.12 * values, 0.0, 1.0)


def morphological_edge(mask: np.ndarray) -> np.ndarray:
    m = mask.astype(np.uint8)
    return (grey_dilation(m, size=(3, 3)) - grey_erosion(m, size=(3, 3))) > 0


def render_sample(cfg: SynthConfig, index: int) -> Tuple[np.ndarray, Dict[str, np.ndarray], np.ndarray]:
    """Image [3,S,S], per-class boolean masks and boolean edge map of sample ``index``"""
    rng = np.random.default_rng(cfg.seed ^ index)
    side = cfg.image_side
    vocab = cfg.class_vocabulary

    labels = [vocab[index % len(vocab)]]
    if len(vocab) > 1 and rng.random() < cfg.multi_class_rate:
        others = [c for c in vocab if c != labels[0]]
        labels.append(others[int(rng.integers(len(others)))])

    background = noise_texture(rng, side)
    foreground = np.clip(noise_texture(rng, side) + (1.0 - cfg.camouflage_strength) * FOREGROUND_SHIFT, 0.0, 1.0)

    masks: Dict[str, np.ndarray] = {}
    occupied = np.zeros((side, side), dtype=bool)
    for slot, label in enumerate(labels):
        if len(labels) == 1:
            cx, cy = rng.uniform(0.35, 0.65, size=2) * side
            scale = rng.uniform(0.18, 0.26) * side
        else:
            cx = (0.27 + 0.46 * slot + rng.uniform(-0.04, 0.04)) * side
            cy = rng.uniform(0.35, 0.65) * side
            scale = rng.uniform(0.12, 0.17) * side
        shape = render_shape(label, side, rng, (cx, cy), scale) & ~occupied
        occupied |= shape
        masks[label] = shape

    image = np.where(occupied[None], foreground, background)
    return image, masks, morphological_edge(occupied)


def synth_generate(cfg: SynthConfig, out_dir: str) -> str:
    """Write images, masks, edges and a manifest under ``out_dir``; returns the manifest path"""
    cfg.validate()
    out_dir = os.path.abspath(out_dir)
    for sub in ("images", "masks", "edges"):
        ensure_directory_exists(os.path.join(out_dir, sub))
    logger.info(f"[synth_generate] - Rendering {cfg.n_samples} samples ({cfg.image_side}px) into {out_dir}")

    records = []
    for index in range(cfg.n_samples):
        sample_id = f"{cfg.split}_{index:04d}"
        image, masks, edge = render_sample(cfg, index)
        image_path = os.path.join(out_dir, "images", f"{sample_id}.png")
        edge_path = os.path.join(out_dir, "edges", f"{sample_id}.png")
        write_image_rgb(image, image_path)
        write_gray_u8(edge.astype(np.uint8) * 255, edge_path)
        mask_paths = {}
        for label, mask in masks.items():
            mask_paths[label] = os.path.join(out_dir, "masks", f"{sample_id}_{label}.png")
            write_gray_u8(mask.astype(np.uint8) * 255, mask_paths[label])
        records.append(
            SampleRecord(
                id=sample_id,
                image_path=image_path,
                mask_paths=mask_paths,
                edge_path=edge_path,
                class_labels=list(masks),
                split_tag=cfg.split,
                source="synthetic",
            )
        )

    manifest = write_manifest(records, os.path.join(out_dir, MANIFEST_NAME))
    logger.info(f"[synth_generate] - Dataset ready: {manifest}")
    return manifest
