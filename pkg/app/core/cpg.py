"""
Class prompt generator: cross-modal attention of the fused visual feature
against the class text embedding, multi-level alignment of the result with the
deeper visual taps, and the residual progressive refinement that yields F_v.
"""

import logging
from dataclasses import dataclass

from app.core.attention import AttentionParams, mhsa
from app.core.encoders import TextEmbedding
from app.core.tensor import (
    ParameterSet,
    Tensor,
    activate,
    add,
    bilinear_resize,
    channel_affine,
    concat,
    conv1x1,
    conv3x3,
    flatten_tokens,
    hadamard,
    linear,
    reshape,
    unflatten_tokens,
)
from app.exceptions.custom_exceptions import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class PromptFeatures:
    f_c: Tensor
    f_n: Tensor
    f_n1: Tensor
    f_n2: Tensor
    f_n3: Tensor
    f_v: Tensor


@dataclass
class ConvBlock:
    """Conv3: 3x3 conv, per-channel scale/shift, activation"""

    weight: Tensor
    bias: Tensor
    gain: Tensor
    shift: Tensor

    @classmethod
    def create(cls, params: ParameterSet, name: str, c_out: int, c_in: int) -> "ConvBlock":
        weight, bias = params.conv(name, c_out, c_in, 3)
        scope = params.scope(name)
        return cls(weight, bias, scope.ones("gain", (c_out,)), scope.zeros("shift", (c_out,)))

    def __call__(self, x: Tensor, activation: str) -> Tensor:
        return activate(channel_affine(conv3x3(x, self.weight, self.bias), self.gain, self.shift), activation)


@dataclass
class CrossModalParams:
    text_proj: tuple
    attention: AttentionParams

    @classmethod
    def create(cls, params: ParameterSet, text_dim: int, dim: int) -> "CrossModalParams":
        return cls(
            text_proj=params.linear("text_proj", dim, text_dim),
            attention=AttentionParams.create(params.scope("attn"), dim, zero_out=True),
        )


@dataclass
class AlignParams:
    proj2: tuple
    proj3: tuple
    attention2: AttentionParams
    attention3: AttentionParams

    @classmethod
    def create(cls, params: ParameterSet, dim: int) -> "AlignParams":
        return cls(
            proj2=params.conv("proj2", dim, dim, 1),
            proj3=params.conv("proj3", dim, dim, 1),
            attention2=AttentionParams.create(params.scope("attn2"), dim),
            attention3=AttentionParams.create(params.scope("attn3"), dim),
        )


@dataclass
class EnhanceParams:
    step1: tuple
    step2: tuple
    step3: tuple
    fuse: ConvBlock

    @classmethod
    def create(cls, params: ParameterSet, dim: int) -> "EnhanceParams":
        def pair(i):
            return (ConvBlock.create(params, f"step{i}.inner", dim, dim), ConvBlock.create(params, f"step{i}.outer", dim, dim))

        return cls(pair(1), pair(2), pair(3), ConvBlock.create(params, "fuse", dim, 3 * dim))


def cross_modal_attention(f_m: Tensor, f_t: TextEmbedding, heads: int, params: CrossModalParams) -> Tensor:
    """Image tokens of F_m attend to the projected text token; residual from F_m"""
    batch, dim, h, w = f_m.shape
    if f_t.values.shape[0] != batch:
        raise ShapeError(f"cross_modal_attention: {f_t.values.shape[0]} text rows for batch {batch}")
    text_token = reshape(linear(f_t.values, *params.text_proj), (batch, 1, dim))
    attended = mhsa(flatten_tokens(f_m), text_token, heads, params.attention)
    return add(f_m, unflatten_tokens(attended, h, w))


def mvcm_align(f_c: Tensor, f2: Tensor, f3: Tensor, heads: int, params: AlignParams) -> Tensor:
    """F_n = MHSA(F_c, F_2) + MHSA(F_c, F_3) on the prompt grid"""
    h, w = f_c.shape[2:]
    if f2.shape[:2] != f_c.shape[:2] or f3.shape[:2] != f_c.shape[:2]:
        raise ShapeError(f"mvcm_align: levels {f2.shape}/{f3.shape} do not match F_c {f_c.shape}")
    query = flatten_tokens(f_c)
    f2_tokens = flatten_tokens(conv1x1(bilinear_resize(f2, h, w), *params.proj2))
    f3_tokens = flatten_tokens(conv1x1(bilinear_resize(f3, h, w), *params.proj3))
    f_n = add(mhsa(query, f2_tokens, heads, params.attention2), mhsa(query, f3_tokens, heads, params.attention3))
    return unflatten_tokens(f_n, h, w)


def _refine(x: Tensor, step: tuple, activation: str) -> Tensor:
    inner, outer = step
    return outer(add(inner(x, activation), x), activation)


def mvcm_enhance(f_n: Tensor, params: EnhanceParams, activation: str = "relu"):
    """Residual progressive refinement; returns (F_n^1, F_n^2, F_n^3, F_v)"""
    f_n1 = _refine(f_n, params.step1, activation)
    f_n2 = _refine(hadamard(f_n, f_n1), params.step2, activation)
    f_n3 = _refine(hadamard(f_n, f_n2), params.step3, activation)
    f_v = params.fuse(concat([f_n1, f_n2, f_n3], axis=1), activation)
    return f_n1, f_n2, f_n3, f_v


class ClassPromptGenerator:
    """CMA followed by MVCM alignment and enhancement"""

    def __init__(self, params: ParameterSet, text_dim: int, dim: int, heads: int, activation: str):
        self.heads = heads
        self.activation = activation
        self.cma = CrossModalParams.create(params.scope("cma"), text_dim, dim)
        self.align = AlignParams.create(params.scope("align"), dim)
        self.enhance = EnhanceParams.create(params.scope("enhance"), dim)

    def __call__(self, f_m: Tensor, f_t: TextEmbedding, f2: Tensor, f3: Tensor) -> PromptFeatures:
        f_c = cross_modal_attention(f_m, f_t, self.heads, self.cma)
        f_n = mvcm_align(f_c, f2, f3, self.heads, self.align)
        f_n1, f_n2, f_n3, f_v = mvcm_enhance(f_n, self.enhance, self.activation)
        logger.debug(f"[ClassPromptGenerator] - F_v {f_v.shape}")
        return PromptFeatures(f_c, f_n, f_n1, f_n2, f_n3, f_v)
