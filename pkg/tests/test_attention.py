import math

import numpy as np
import pytest

from app.core.attention import AttentionParams, mhsa
from app.core.tensor import ParameterSet, Tensor, linear
from app.exceptions.custom_exceptions import ConfigError, ShapeError


@pytest.fixture
def attention():
    return AttentionParams.create(ParameterSet(seed=0).scope("attn"), 8)


class TestMhsa:
    def test_shapes_and_weight_normalisation(self, rng, attention):
        query = Tensor(rng.standard_normal((2, 5, 8)))
        context = Tensor(rng.standard_normal((2, 3, 8)))
        out, weights = mhsa(query, context, 2, attention, return_weights=True)
        assert out.shape == (2, 5, 8)
        assert weights.shape == (2, 2, 5, 3)
        np.testing.assert_allclose(weights.values.sum(axis=-1), 1.0, atol=1e-12)

    def test_self_attention(self, rng, attention):
        x = Tensor(rng.standard_normal((1, 4, 8)))
        _, weights = mhsa(x, x, 4, attention, return_weights=True)
        assert weights.shape == (1, 4, 4, 4)

    @pytest.mark.parametrize("heads", [1, 2])
    def test_single_context_token_reads_out_its_value(self, rng, attention, heads):
        query = Tensor(rng.standard_normal((1, 6, 8)))
        context = Tensor(rng.standard_normal((1, 1, 8)))
        out, weights = mhsa(query, context, heads, attention, return_weights=True)
        np.testing.assert_array_equal(weights.values, 1.0)
        value = linear(context, attention.v_weight, attention.v_bias)
        expected = linear(value, attention.out_weight, attention.out_bias).values
        np.testing.assert_allclose(out.values, np.broadcast_to(expected, out.shape), rtol=1e-12, atol=1e-12)

    def test_matches_a_hand_computation(self):
        params = AttentionParams(
            q_weight=Tensor([[1.0, 0.0], [0.0, 2.0]]),
            q_bias=Tensor([0.0, 0.5]),
            k_weight=Tensor([[0.0, 1.0], [1.0, 0.0]]),
            k_bias=Tensor([0.0, 0.0]),
            v_weight=Tensor([[1.0, 1.0], [0.0, 1.0]]),
            v_bias=Tensor([0.1, 0.0]),
            out_weight=Tensor([[2.0, 0.0], [1.0, 1.0]]),
            out_bias=Tensor([0.0, -1.0]),
        )
        query = [[1.0, 0.0], [0.0, 1.0]]
        context = [[1.0, 2.0], [3.0, -1.0]]
        # q = (1, 0.5), (0, 2.5); k = (2, 1), (-1, 3); v = (3.1, 2), (2.1, -1)
        q = [[1.0, 0.5], [0.0, 2.5]]
        k = [[2.0, 1.0], [-1.0, 3.0]]
        v = [[3.1, 2.0], [2.1, -1.0]]
        expected = []
        for qi in q:
            scores = [(qi[0] * kj[0] + qi[1] * kj[1]) / math.sqrt(2.0) for kj in k]
            e = [math.exp(s) for s in scores]
            w = [x / sum(e) for x in e]
            a = [w[0] * v[0][0] + w[1] * v[1][0], w[0] * v[0][1] + w[1] * v[1][1]]
            expected.append([2.0 * a[0], a[0] + a[1] - 1.0])

        out = mhsa(Tensor([query]), Tensor([context]), 1, params).values[0]
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)

    def test_zero_output_projection_gives_zero(self, rng):
        params = AttentionParams.create(ParameterSet(seed=1), 8, zero_out=True)
        out = mhsa(Tensor(rng.standard_normal((1, 3, 8))), Tensor(rng.standard_normal((1, 2, 8))), 2, params)
        np.testing.assert_array_equal(out.values, 0.0)

    def test_heads_must_divide_width(self, rng, attention):
        x = Tensor(rng.standard_normal((1, 3, 8)))
        with pytest.raises(ConfigError):
            mhsa(x, x, 3, attention)

    def test_context_width_mismatch(self, rng, attention):
        with pytest.raises(ShapeError):
            mhsa(Tensor(rng.standard_normal((1, 3, 8))), Tensor(rng.standard_normal((1, 3, 4))), 2, attention)

    def test_projection_width_mismatch(self, rng, attention):
        x = Tensor(rng.standard_normal((1, 3, 16)))
        with pytest.raises(ShapeError):
            mhsa(x, x, 2, attention)
