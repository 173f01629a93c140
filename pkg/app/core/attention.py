import logging
import math
from dataclasses import dataclass

from app.core.tensor import (
    ParameterSet,
    Tensor,
    linear,
    matmul,
    permute,
    reshape,
    scale,
    softmax,
)
from app.exceptions.custom_exceptions import ConfigError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AttentionParams:
    """Query/key/value/output projections of one multi-head attention block"""

    q_weight: Tensor
    q_bias: Tensor
    k_weight: Tensor
    k_bias: Tensor
    v_weight: Tensor
    v_bias: Tensor
    out_weight: Tensor
    out_bias: Tensor

    @classmethod
    def create(cls, params: ParameterSet, dim: int, zero_out: bool = False) -> "AttentionParams":
        q_w, q_b = params.linear("q_proj", dim, dim)
        k_w, k_b = params.linear("k_proj", dim, dim)
        v_w, v_b = params.linear("v_proj", dim, dim)
        o_w, o_b = params.linear("out_proj", dim, dim, zero=zero_out)
        return cls(q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b)

    @property
    def dim(self) -> int:
        return self.q_weight.shape[0]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return permute(reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def mhsa(
    query_source: Tensor,
    context_source: Tensor,
    heads: int,
    params: AttentionParams,
    return_weights: bool = False,
):
    """Multi-head scaled dot-product attention.

    Self-attention when ``query_source is context_source``, cross-attention
    otherwise. Shapes: query [B, N_q, D], context [B, N_k, D] -> [B, N_q, D].
    With ``return_weights`` the per-head attention matrix [B, h, N_q, N_k] is
    returned as well.
    """
    if query_source.ndim != 3 or context_source.ndim != 3:
        raise ShapeError(f"mhsa: expected [B,N,D] inputs, got {query_source.shape} and {context_source.shape}")
    b, n_q, d = query_source.shape
    if context_source.shape[0] != b or context_source.shape[2] != d:
        raise ShapeError(f"mhsa: context {context_source.shape} does not match query {query_source.shape}")
    if heads < 1 or d % heads != 0:
        raise ConfigError(f"mhsa: dimension {d} not divisible by {heads} heads")
    if params.dim != d:
        raise ShapeError(f"mhsa: projections are {params.dim}-wide, inputs are {d}-wide")

    head_dim = d // heads
    q = _split_heads(linear(query_source, params.q_weight, params.q_bias), heads)
    k = _split_heads(linear(context_source, params.k_weight, params.k_bias), heads)
    v = _split_heads(linear(context_source, params.v_weight, params.v_bias), heads)

    scores = scale(matmul(q, permute(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    weights = softmax(scores, axis=-1)
    attended = permute(matmul(weights, v), (0, 2, 1, 3))
    out = linear(reshape(attended, (b, n_q, d)), params.out_weight, params.out_bias)

    if return_weights:
        return out, weights
    return out
