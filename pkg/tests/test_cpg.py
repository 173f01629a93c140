from dataclasses import replace

import numpy as np
import pytest

from app.core.cpg import (
    AlignParams,
    ClassPromptGenerator,
    CrossModalParams,
    EnhanceParams,
    cross_modal_attention,
    mvcm_align,
    mvcm_enhance,
)
from app.core.encoders import encode_text
from app.core.gradcheck import perturb_parameters
from app.core.tensor import ParameterSet, Tensor
from app.exceptions.custom_exceptions import ShapeError
from tests.reference import mvcm_enhance_oracle


def _features(rng, *shape):
    return Tensor(rng.standard_normal(shape))


class TestCrossModalAttention:
    def test_identity_at_initialisation(self, rng, tiny_encoder):
        params = CrossModalParams.create(ParameterSet(seed=0), tiny_encoder.text_dim, 8)
        f_m = _features(rng, 2, 8, 4, 4)
        f_c = cross_modal_attention(f_m, encode_text(["blob", "star"], tiny_encoder), 2, params)
        np.testing.assert_array_equal(f_c.values, f_m.values)

    def test_trained_projection_injects_the_class(self, rng, tiny_encoder):
        store = ParameterSet(seed=0)
        params = CrossModalParams.create(store, tiny_encoder.text_dim, 8)
        perturb_parameters(store, seed=1)
        f_m = _features(rng, 1, 8, 4, 4)
        blob = cross_modal_attention(f_m, encode_text(["blob"], tiny_encoder), 2, params).values
        ring = cross_modal_attention(f_m, encode_text(["ring"], tiny_encoder), 2, params).values
        assert blob.shape == f_m.shape
        assert not np.allclose(blob, ring)

    def test_batch_mismatch(self, rng, tiny_encoder):
        params = CrossModalParams.create(ParameterSet(seed=0), tiny_encoder.text_dim, 8)
        with pytest.raises(ShapeError):
            cross_modal_attention(_features(rng, 2, 8, 4, 4), encode_text(["blob"], tiny_encoder), 2, params)


class TestMvcmAlign:
    def test_output_on_query_grid(self, rng):
        params = AlignParams.create(ParameterSet(seed=0), 8)
        f_n = mvcm_align(_features(rng, 2, 8, 4, 4), _features(rng, 2, 8, 2, 2), _features(rng, 2, 8, 2, 2), 2, params)
        assert f_n.shape == (2, 8, 4, 4)

    def test_channel_mismatch(self, rng):
        params = AlignParams.create(ParameterSet(seed=0), 8)
        with pytest.raises(ShapeError):
            mvcm_align(_features(rng, 1, 8, 4, 4), _features(rng, 1, 4, 2, 2), _features(rng, 1, 8, 2, 2), 2, params)

    def test_zeroed_output_projections_silence_both_views(self, rng):
        store = ParameterSet(seed=0)
        params = AlignParams.create(store, 8)
        perturb_parameters(store, seed=3)
        for attention in (params.attention2, params.attention3):
            attention.out_weight.values[...] = 0.0
            attention.out_bias.values[...] = 0.0
        f_n = mvcm_align(_features(rng, 2, 8, 4, 4), _features(rng, 2, 8, 2, 2), _features(rng, 2, 8, 2, 2), 2, params)
        np.testing.assert_array_equal(f_n.values, np.zeros((2, 8, 4, 4)))

    def test_views_are_interchangeable_with_tied_weights(self, rng):
        store = ParameterSet(seed=0)
        params = AlignParams.create(store, 8)
        perturb_parameters(store, seed=4)
        tied = replace(params, proj3=params.proj2, attention3=params.attention2)
        f_c, f2, f3 = _features(rng, 1, 8, 4, 4), _features(rng, 1, 8, 2, 2), _features(rng, 1, 8, 2, 2)
        np.testing.assert_array_equal(mvcm_align(f_c, f2, f3, 2, tied).values, mvcm_align(f_c, f3, f2, 2, tied).values)
        assert not np.allclose(mvcm_align(f_c, f2, f3, 2, params).values, mvcm_align(f_c, f3, f2, 2, params).values)


class TestMvcmEnhance:
    @pytest.mark.parametrize("activation", ["relu", "identity"])
    def test_matches_straight_line_oracle(self, rng, activation):
        store = ParameterSet(seed=0)
        params = EnhanceParams.create(store, 8)
        perturb_parameters(store, seed=2)
        f_n = rng.standard_normal((2, 8, 4, 4))
        got = mvcm_enhance(Tensor(f_n), params, activation)
        expected = mvcm_enhance_oracle(f_n, params, activation)
        for a, b in zip(got, expected):
            np.testing.assert_allclose(a.values, b, rtol=1e-9, atol=1e-10)

    def test_shapes_preserved(self, rng):
        params = EnhanceParams.create(ParameterSet(seed=0), 8)
        outputs = mvcm_enhance(_features(rng, 1, 8, 4, 4), params)
        assert [o.shape for o in outputs] == [(1, 8, 4, 4)] * 4


class TestClassPromptGenerator:
    def test_pipeline(self, rng, tiny_encoder):
        cpg = ClassPromptGenerator(ParameterSet(seed=0), tiny_encoder.text_dim, 8, 2, "relu")
        f_m = _features(rng, 1, 8, 4, 4)
        prompt = cpg(f_m, encode_text(["worm"], tiny_encoder), _features(rng, 1, 8, 2, 2), _features(rng, 1, 8, 2, 2))
        np.testing.assert_array_equal(prompt.f_c.values, f_m.values)
        for name in ("f_n", "f_n1", "f_n2", "f_n3", "f_v"):
            assert getattr(prompt, name).shape == (1, 8, 4, 4)
