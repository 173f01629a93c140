"""
Class-guided detector.

Each semantics consistency module (SCM) takes a pair of adjacent backbone
levels plus the class guidance G_c. Its spatial stage re-weights positions
with a per-channel spatial softmax. Its channel stage gates four channel
groups. The decoder accumulates per-level logits top-down into P_4..P_1.
``CGNet`` wires encoders, prompt generator, guidance, SCM ladder and decoder
into one model.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.cpg import ClassPromptGenerator, PromptFeatures
from app.core.csg import GuidanceFeature, GuidanceParams, guide
from app.core.encoders import (
    Backbone,
    BackboneLevels,
    FeaturePyramidFusion,
    TextEmbedding,
    VisualEncoder,
    VisualLevels,
    encode_text,
)
from app.core.run_config import EncoderConfig, ModelConfig, RunConfig
from app.core.tensor import (
    ParameterSet,
    Tensor,
    add,
    bilinear_resize,
    concat,
    conv1x1,
    conv3x3,
    exp,
    flatten_tokens,
    global_avg_pool,
    hadamard,
    linear,
    pixel_shuffle,
    reshape,
    sigmoid,
    softmax,
    split,
    unflatten_tokens,
)
from app.exceptions.custom_exceptions import ConfigError, ShapeError, UsageError

logger = logging.getLogger(__name__)

PREDICTION_MAPS = ("p1", "p2", "p3", "p4", "aux_fv", "aux_fm")
BACKBONE_STRIDES = (4, 8, 16, 32)


@dataclass
class ScmIntermediate:
    r_cls: Optional[Tensor] = None
    x_hat_i: Optional[Tensor] = None
    x_hat_ip1: Optional[Tensor] = None
    g_c_prime: Optional[Tensor] = None
    x_tilde_i: Optional[Tensor] = None
    x_tilde_ip1: Optional[Tensor] = None
    x_cot: Optional[Tensor] = None
    groups: List[Tensor] = field(default_factory=list)
    weights: List[Tensor] = field(default_factory=list)
    gated: List[Tensor] = field(default_factory=list)
    f_s: Optional[Tensor] = None


@dataclass
class PredictionSet:
    p1: Tensor
    p2: Tensor
    p3: Tensor
    p4: Tensor
    aux_fv: Tensor
    aux_fm: Tensor

    def as_dict(self) -> Dict[str, Tensor]:
        return {name: getattr(self, name) for name in PREDICTION_MAPS}


@dataclass
class FeatureBundle:
    f_t: TextEmbedding
    visual: VisualLevels
    f_m: Tensor
    prompt: PromptFeatures
    backbone: BackboneLevels
    g_c: GuidanceFeature
    scm: List[ScmIntermediate]  # ordered (X_3,X_4), (X_2,X_3), (X_1,X_2)
    predictions: PredictionSet

    def maps(self) -> Dict[str, Tensor]:
        """Spatial features by symbol, for dumps and inspection"""
        return {
            "f_m": self.f_m,
            "f_c": self.prompt.f_c,
            "f_n": self.prompt.f_n,
            "f_v": self.prompt.f_v,
            "g_c": self.g_c.g_c,
            "r_cls": self.scm[-1].r_cls,
            "p_1": self.predictions.p1,
        }


@dataclass
class ScmParams:
    proj_next: tuple
    proj_guide: tuple
    localize: tuple
    fc: tuple
    cot: tuple
    gates: List[Tuple[tuple, tuple]]
    group_convs: List[tuple]
    out: tuple

    @classmethod
    def create(cls, params: ParameterSet, c: int, c_next: int, c_guide: int, groups: int = 4) -> "ScmParams":
        if c % groups != 0:
            raise ConfigError(f"SCM width {c} not divisible by {groups} groups")
        cg = c // groups
        return cls(
            proj_next=params.conv("proj_next", c, c_next, 1),
            proj_guide=params.conv("proj_guide", c, c_guide, 1),
            localize=params.conv("localize", c, c, 3),
            fc=params.linear("fc", c, 2 * c),
            cot=params.conv("cot", c, 2 * c, 3),
            gates=[(params.linear(f"gate{j}.fc1", cg, cg), params.linear(f"gate{j}.fc2", cg, cg)) for j in range(groups)],
            group_convs=[params.conv(f"group{j}", cg, cg, 3) for j in range(groups)],
            out=params.conv("out", c, c, 3),
        )


def _spatial_softmax(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    return reshape(softmax(reshape(x, (b, c, h * w)), axis=-1), (b, c, h, w))


def scm_spatial(x_i: Tensor, x_ip1: Tensor, g_c: GuidanceFeature, params: ScmParams) -> ScmIntermediate:
    """Spatial localisation; the returned record carries X~_i, X~_{i+1} and G'_c"""
    batch, c, h, w = x_i.shape
    if x_ip1.shape[0] != batch or g_c.g_c.shape[0] != batch:
        raise ShapeError(f"scm_spatial: batch mismatch {x_i.shape} / {x_ip1.shape} / {g_c.g_c.shape}")
    x_next = conv1x1(bilinear_resize(x_ip1, h, w), *params.proj_next)
    guidance = conv1x1(bilinear_resize(g_c.g_c, h, w), *params.proj_guide)

    r_cls = _spatial_softmax(hadamard(conv3x3(add(x_i, x_next), *params.localize), guidance))
    assert np.allclose(r_cls.values.sum(axis=(2, 3)), 1.0, rtol=0.0, atol=1e-12), "R_cls lost normalisation"

    x_hat_i = hadamard(r_cls, x_i)
    x_hat_ip1 = hadamard(r_cls, x_next)
    tokens = flatten_tokens(concat([x_hat_ip1, x_hat_i], axis=1))
    g_c_prime = unflatten_tokens(linear(tokens, *params.fc), h, w)
    return ScmIntermediate(
        r_cls=r_cls,
        x_hat_i=x_hat_i,
        x_hat_ip1=x_hat_ip1,
        g_c_prime=g_c_prime,
        x_tilde_i=add(g_c_prime, x_hat_i),
        x_tilde_ip1=add(g_c_prime, x_hat_ip1),
    )


def _gate(group: Tensor, gate: Tuple[tuple, tuple]) -> Tensor:
    fc1, fc2 = gate
    b, cg = group.shape[:2]
    pooled = reshape(global_avg_pool(group), (b, cg))
    return reshape(sigmoid(linear(linear(pooled, *fc1), *fc2)), (b, cg, 1, 1))


def scm_channel(
    x_tilde_i: Tensor,
    x_tilde_ip1: Tensor,
    params: ScmParams,
    trace: Optional[ScmIntermediate] = None,
) -> Tensor:
    """Channel-adaptive refinement over four gated groups; returns F_s"""
    if x_tilde_i.shape != x_tilde_ip1.shape:
        raise ShapeError(f"scm_channel: {x_tilde_i.shape} != {x_tilde_ip1.shape}")
    groups_n = len(params.group_convs)
    if x_tilde_i.shape[1] % groups_n != 0:
        raise ConfigError(f"scm_channel: {x_tilde_i.shape[1]} channels not divisible by {groups_n}")

    x_cot = conv3x3(concat([x_tilde_i, x_tilde_ip1], axis=1), *params.cot)
    groups = split(x_cot, 1, groups_n)
    weights = [_gate(g, gate) for g, gate in zip(groups, params.gates)]
    gated = [conv3x3(hadamard(g, w), *conv) for g, w, conv in zip(groups, weights, params.group_convs)]
    f_s = conv3x3(concat(gated, axis=1), *params.out)

    if trace is not None:
        trace.x_cot, trace.groups, trace.weights, trace.gated, trace.f_s = x_cot, groups, weights, gated, f_s
    return f_s


def scm(x_i: Tensor, x_ip1: Tensor, g_c: GuidanceFeature, params: ScmParams) -> ScmIntermediate:
    trace = scm_spatial(x_i, x_ip1, g_c, params)
    scm_channel(trace.x_tilde_i, trace.x_tilde_ip1, params, trace)
    return trace


@dataclass
class DecoderParams:
    """Sub-pixel prediction heads and the shared logit scale.

    Each head is a 1x1 conv emitting ``r*r`` channels that a pixel shuffle
    spreads over an ``r``-times finer grid, so every output pixel owns a
    readout. ``factors`` holds ``r`` for the level heads P_1..P_4, then for the
    auxiliary F_v/F_m heads; a factor of 1 falls back to a plain bilinear head.
    """

    heads: List[tuple]  # level heads for P_1..P_4
    aux_fv: tuple
    aux_fm: tuple
    log_scale: Tensor
    factors: Tuple[int, ...] = (1, 1, 1, 1, 1)

    @classmethod
    def create(
        cls,
        params: ParameterSet,
        level_channels: Sequence[int],
        prompt_dim: int,
        zero: bool,
        factors: Sequence[int] = (1, 1, 1, 1, 1),
        logit_scale: float = 1.0,
    ) -> "DecoderParams":
        factors = tuple(int(r) for r in factors)
        if len(factors) != 5 or min(factors) < 1:
            raise ConfigError(f"decoder needs five positive upsampling factors, got {factors}")
        if logit_scale <= 0:
            raise ConfigError(f"logit_scale must be positive, got {logit_scale}")
        return cls(
            heads=[params.conv(f"head{i + 1}", r * r, c, 1, zero=zero) for i, (c, r) in enumerate(zip(level_channels, factors))],
            aux_fv=params.conv("aux_fv", factors[4] ** 2, prompt_dim, 1, zero=zero),
            aux_fm=params.conv("aux_fm", factors[4] ** 2, prompt_dim, 1, zero=zero),
            log_scale=params.add("log_scale", np.array(math.log(logit_scale))),
            factors=factors,
        )

    @property
    def logit_scale(self) -> float:
        return float(np.exp(self.log_scale.values))


def decode(
    f_s_list: Sequence[Tensor],
    x4: Tensor,
    g_c: GuidanceFeature,
    params: DecoderParams,
    out_size: int,
    f_v: Tensor,
    f_m: Tensor,
) -> PredictionSet:
    """Top-down accumulation of level logits at full detector resolution.

    ``f_s_list`` is ``[F_s^3, F_s^2, F_s^1]``. P_4 is the deepest backbone
    level X_4 read out by its own head; the class guidance G_c reaches the
    decoder through the refined levels. Every shallower prediction adds its
    head's logit to the one below it. All six maps share one learnable logit
    scale ``exp(log_scale)``.
    """
    if len(f_s_list) != 3:
        raise UsageError(f"decode expects [F_s^3, F_s^2, F_s^1], got {len(f_s_list)} features")
    if g_c.g_c.shape != x4.shape:
        raise ShapeError(f"decode: G_c {g_c.g_c.shape} is not on X_4's grid {x4.shape}")
    gain = exp(params.log_scale)

    def head(x: Tensor, conv: tuple, factor: int) -> Tensor:
        logits = pixel_shuffle(conv1x1(x, *conv), factor)
        if logits.shape[2:] != (out_size, out_size):
            logits = bilinear_resize(logits, out_size, out_size)
        return hadamard(logits, gain)

    r1, r2, r3, r4, r_aux = params.factors
    p4 = head(x4, params.heads[3], r4)
    p3 = add(head(f_s_list[0], params.heads[2], r3), p4)
    p2 = add(head(f_s_list[1], params.heads[1], r2), p3)
    p1 = add(head(f_s_list[2], params.heads[0], r1), p2)
    return PredictionSet(p1, p2, p3, p4, head(f_v, params.aux_fv, r_aux), head(f_m, params.aux_fm, r_aux))


def head_factors(encoder: EncoderConfig, model: ModelConfig) -> Tuple[int, ...]:
    """Sub-pixel factors for the heads on X_1..X_4 and on the S_p/8 prompt grid"""
    if model.head_upsample == "bilinear":
        return (1, 1, 1, 1, 1)
    aux = max(1, encoder.detector_side // (encoder.prompt_side // 8))
    return BACKBONE_STRIDES + (aux,)


class CGNet:
    """Class-guided camouflaged object detector at desk scale"""

    def __init__(self, encoder: EncoderConfig, model: ModelConfig, seed: int = 0):
        encoder.validate()
        model.validate(encoder)
        self.encoder_cfg = encoder
        self.model_cfg = model
        self.params = ParameterSet(seed=seed)

        d = encoder.visual_dim
        c1, c2, c3, c4 = encoder.backbone_channels
        self.visual_encoder = VisualEncoder(encoder, self.params)
        self.fusion = FeaturePyramidFusion(encoder, self.params.scope("fpn"), model.heads, model.activation)
        self.backbone = Backbone(encoder, self.params.scope("backbone"), model.activation)
        self.cpg = ClassPromptGenerator(self.params.scope("cpg"), encoder.text_dim, d, model.heads, model.activation)
        self.csg = GuidanceParams.create(self.params.scope("csg"), d, c4)
        self.scm_params = [
            ScmParams.create(self.params.scope("cgd.scm3"), c3, c4, c4, model.scm_groups),
            ScmParams.create(self.params.scope("cgd.scm2"), c2, c3, c4, model.scm_groups),
            ScmParams.create(self.params.scope("cgd.scm1"), c1, c2, c4, model.scm_groups),
        ]
        self.decoder = DecoderParams.create(
            self.params.scope("cgd.decoder"),
            [c1, c2, c3, c4],
            d,
            model.zero_init_heads,
            factors=head_factors(encoder, model),
            logit_scale=model.logit_scale,
        )
        logger.info(
            f"[CGNet] - built: {len(self.params.trainable())} trainable / {len(self.params.frozen())} frozen tensors, "
            f"{self.params.count()} values"
        )

    @classmethod
    def from_config(cls, config: RunConfig) -> "CGNet":
        return cls(config.encoder, config.model, config.seed)

    def forward(self, image: Tensor, labels: Sequence[str]) -> Tuple[PredictionSet, FeatureBundle]:
        """Run the full pipeline on ``image`` [B,3,H,W], one class label per sample"""
        labels = list(labels)
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"forward: expected a [B,3,H,W] image, got {image.shape}")
        if len(labels) != image.shape[0]:
            raise ShapeError(f"forward: {len(labels)} labels for a batch of {image.shape[0]}")
        enc = self.encoder_cfg
        prompt_image = bilinear_resize(image, enc.prompt_side, enc.prompt_side)
        detector_image = bilinear_resize(image, enc.detector_side, enc.detector_side)

        f_t = encode_text(labels, enc)
        visual = self.visual_encoder(prompt_image)
        f_m = self.fusion(visual, f_t)
        prompt = self.cpg(f_m, f_t, visual.f2, visual.f3)

        levels = self.backbone(detector_image)
        g_c = guide(levels.x4, prompt.f_v, f_m, self.model_cfg.heads, self.csg)

        pairs = [(levels.x3, levels.x4), (levels.x2, levels.x3), (levels.x1, levels.x2)]
        traces = [scm(x_i, x_ip1, g_c, p) for (x_i, x_ip1), p in zip(pairs, self.scm_params)]
        predictions = decode(
            [t.f_s for t in traces], levels.x4, g_c, self.decoder, enc.detector_side, prompt.f_v, f_m
        )
        bundle = FeatureBundle(f_t, visual, f_m, prompt, levels, g_c, traces, predictions)
        return predictions, bundle

    __call__ = forward

    def predict(self, image: Tensor, labels: Sequence[str]) -> np.ndarray:
        """P_1 probabilities [B, S_d, S_d]"""
        predictions, _ = self.forward(image, labels)
        return sigmoid(predictions.p1).values[:, 0]
