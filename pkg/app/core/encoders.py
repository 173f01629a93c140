"""
Deterministic stand-ins for the pretrained encoders.

The text encoder hashes whole labels into unit vectors, the visual encoder is
a frozen strided conv stack with three pyramid taps, and the detector backbone
is a trainable four-stage conv pyramid. Only the interfaces (shapes, strides,
frozen/trainable split) mirror the real encoders.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from app.core.attention import AttentionParams, mhsa
from app.core.run_config import EncoderConfig
from app.core.tensor import (
    ParameterSet,
    Tensor,
    activate,
    add,
    bilinear_resize,
    concat,
    conv1x1,
    conv2d,
    flatten_tokens,
    linear,
    narrow,
    reshape,
    unflatten_tokens,
)
from app.core.validators import validate_class_labels, validate_image_side
from app.exceptions.custom_exceptions import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class TextEmbedding:
    values: Tensor  # [B, D_t], unit rows


@dataclass
class VisualLevels:
    f1: Tensor  # stride 8
    f2: Tensor  # stride 16
    f3: Tensor  # stride 16


@dataclass
class BackboneLevels:
    x1: Tensor  # stride 4
    x2: Tensor  # stride 8
    x3: Tensor  # stride 16
    x4: Tensor  # stride 32

    def as_list(self) -> List[Tensor]:
        return [self.x1, self.x2, self.x3, self.x4]


def _label_seed(label: str, seed: int) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def encode_text(labels: Sequence[str], cfg: EncoderConfig) -> TextEmbedding:
    """Map each label to a fixed unit vector drawn from a label-seeded generator"""
    labels = list(labels)
    validate_class_labels(labels)
    rows = []
    for label in labels:
        rng = np.random.default_rng(_label_seed(label, cfg.seed))
        v = rng.standard_normal(cfg.text_dim)
        rows.append(v / np.linalg.norm(v))
    logger.debug(f"[encode_text] - encoded {len(labels)} labels: {labels}")
    return TextEmbedding(Tensor(np.stack(rows)))


class VisualEncoder:
    """Frozen conv stack; weights depend only on the encoder seed"""

    def __init__(self, cfg: EncoderConfig, params: Optional[ParameterSet] = None):
        self.cfg = cfg
        params = (params if params is not None else ParameterSet()).scope("visual_encoder", seed=cfg.seed)
        d = cfg.visual_dim
        widths = [(3, d // 2, 2), (d // 2, d, 2), (d, d, 2), (d, d, 2), (d, d, 1)]
        self.layers = []
        for i, (c_in, c_out, stride) in enumerate(widths):
            scope = params.scope(f"conv{i}")
            weight = scope.normal("weight", (c_out, c_in, 3, 3), np.sqrt(1.0 / (c_in * 9)), frozen=True)
            bias = scope.normal("bias", (c_out,), 0.1, frozen=True)
            self.layers.append((weight, bias, stride))

    def _block(self, x: Tensor, index: int) -> Tensor:
        weight, bias, stride = self.layers[index]
        return activate(conv2d(x, weight, bias, stride=stride, padding=1, padding_mode="replicate"), "tanh")

    def __call__(self, image: Tensor) -> VisualLevels:
        validate_image_side(image.shape, self.cfg.prompt_side, "encode_image")
        x = self._block(image, 0)
        x = self._block(x, 1)
        f1 = self._block(x, 2)
        f2 = self._block(f1, 3)
        f3 = self._block(f2, 4)
        return VisualLevels(f1, f2, f3)


def encode_image(image: Tensor, cfg: EncoderConfig, encoder: Optional[VisualEncoder] = None) -> VisualLevels:
    """Three frozen pyramid taps at strides 8/16/16 of the prompt-branch image"""
    encoder = encoder or VisualEncoder(cfg)
    return encoder(image)


class FeaturePyramidFusion:
    """Trainable top-down FPN over the visual taps plus one transformer block with a text token"""

    def __init__(self, cfg: EncoderConfig, params: ParameterSet, heads: int, activation: str):
        d = cfg.visual_dim
        self.heads = heads
        self.activation = activation
        self.lateral = [params.conv(f"lateral{i}", d, d, 1) for i in (1, 2, 3)]
        self.text_proj = params.linear("text_proj", d, cfg.text_dim)
        self.attention = AttentionParams.create(params.scope("block.attn"), d)
        self.ffn_in = params.linear("block.ffn_in", 2 * d, d)
        self.ffn_out = params.linear("block.ffn_out", d, 2 * d)

    def __call__(self, levels: VisualLevels, text: TextEmbedding) -> Tensor:
        f1, f2, f3 = levels.f1, levels.f2, levels.f3
        batch = f1.shape[0]
        if text.values.shape[0] != batch:
            raise ShapeError(f"fuse_fpn: {text.values.shape[0]} text rows for batch {batch}")

        p3 = conv1x1(f3, *self.lateral[2])
        p2 = add(conv1x1(f2, *self.lateral[1]), bilinear_resize(p3, *f2.shape[2:]))
        p1 = add(conv1x1(f1, *self.lateral[0]), bilinear_resize(p2, *f1.shape[2:]))

        h, w = p1.shape[2:]
        tokens = flatten_tokens(p1)
        text_token = reshape(linear(text.values, *self.text_proj), (batch, 1, tokens.shape[2]))
        x = concat([tokens, text_token], axis=1)
        x = add(x, mhsa(x, x, self.heads, self.attention))
        hidden = activate(linear(x, *self.ffn_in), self.activation)
        x = add(x, linear(hidden, *self.ffn_out))
        return unflatten_tokens(narrow(x, 1, 0, h * w), h, w)


def fuse_fpn(levels: VisualLevels, text: TextEmbedding, fusion: FeaturePyramidFusion) -> Tensor:
    """F_m on the prompt grid (S_p/8 square)"""
    return fusion(levels, text)


class Backbone:
    """Trainable four-stage strided conv pyramid (strides 4/8/16/32)"""

    def __init__(self, cfg: EncoderConfig, params: ParameterSet, activation: str):
        self.cfg = cfg
        self.activation = activation
        c1, c2, c3, c4 = cfg.backbone_channels
        stem = max(1, c1 // 2)
        self.stem = params.conv("stem", stem, 3, 3)
        self.stages = [
            params.conv("stage1", c1, stem, 3),
            params.conv("stage2", c2, c1, 3),
            params.conv("stage3", c3, c2, 3),
            params.conv("stage4", c4, c3, 3),
        ]

    def _down(self, x: Tensor, conv) -> Tensor:
        return activate(conv2d(x, *conv, stride=2, padding=1), self.activation)

    def __call__(self, image: Tensor) -> BackboneLevels:
        validate_image_side(image.shape, self.cfg.detector_side, "backbone")
        x = self._down(image, self.stem)
        outputs = []
        for conv in self.stages:
            x = self._down(x, conv)
            outputs.append(x)
        return BackboneLevels(*outputs)


def backbone(image: Tensor, cfg: EncoderConfig, net: Optional[Backbone] = None, activation: str = "relu") -> BackboneLevels:
    """X_1..X_4 for the detector-branch image"""
    net = net or Backbone(cfg, ParameterSet(seed=cfg.seed).scope("backbone"), activation)
    return net(image)
