import logging
from dataclasses import dataclass

from app.core.attention import AttentionParams, mhsa
from app.core.tensor import (
    ParameterSet,
    Tensor,
    add,
    bilinear_resize,
    conv1x1,
    flatten_tokens,
    unflatten_tokens,
)
from app.exceptions.custom_exceptions import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class GuidanceFeature:
    g_c: Tensor  # locked to X_4's shape


@dataclass
class GuidanceParams:
    proj_v: tuple
    proj_m: tuple
    attention_v: AttentionParams
    attention_m: AttentionParams

    @classmethod
    def create(cls, params: ParameterSet, prompt_dim: int, c4: int) -> "GuidanceParams":
        return cls(
            proj_v=params.conv("proj_v", c4, prompt_dim, 1),
            proj_m=params.conv("proj_m", c4, prompt_dim, 1),
            attention_v=AttentionParams.create(params.scope("attn_v"), c4, zero_out=True),
            attention_m=AttentionParams.create(params.scope("attn_m"), c4, zero_out=True),
        )


def guide(x4: Tensor, f_v: Tensor, f_m: Tensor, heads: int, params: GuidanceParams) -> GuidanceFeature:
    """G_c = MHSA(X_4, F_v') + MHSA(X_4, F_m') + X_4 with X_4 as the query"""
    batch, _, h, w = x4.shape
    if f_v.shape[0] != batch or f_m.shape[0] != batch:
        raise ShapeError(f"guide: batch of X_4 is {batch}, prompt features have {f_v.shape[0]}/{f_m.shape[0]}")
    query = flatten_tokens(x4)
    v_tokens = flatten_tokens(conv1x1(bilinear_resize(f_v, h, w), *params.proj_v))
    m_tokens = flatten_tokens(conv1x1(bilinear_resize(f_m, h, w), *params.proj_m))
    attended = add(mhsa(query, v_tokens, heads, params.attention_v), mhsa(query, m_tokens, heads, params.attention_m))
    return GuidanceFeature(add(unflatten_tokens(attended, h, w), x4))
