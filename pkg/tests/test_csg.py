import numpy as np
import pytest

from app.core.csg import GuidanceParams, guide
from app.core.gradcheck import perturb_parameters
from app.core.tensor import ParameterSet, Tensor
from app.exceptions.custom_exceptions import ShapeError


@pytest.fixture
def inputs(rng):
    x4 = Tensor(rng.standard_normal((2, 16, 2, 2)))
    f_v = Tensor(rng.standard_normal((2, 8, 4, 4)))
    f_m = Tensor(rng.standard_normal((2, 8, 4, 4)))
    return x4, f_v, f_m


class TestGuide:
    def test_residual_identity_at_initialisation(self, inputs):
        x4, f_v, f_m = inputs
        g_c = guide(x4, f_v, f_m, 2, GuidanceParams.create(ParameterSet(seed=0), 8, 16))
        np.testing.assert_array_equal(g_c.g_c.values, x4.values)

    def test_shape_locked_to_deepest_level(self, inputs):
        x4, f_v, f_m = inputs
        store = ParameterSet(seed=0)
        params = GuidanceParams.create(store, 8, 16)
        perturb_parameters(store, seed=3)
        g_c = guide(x4, f_v, f_m, 4, params).g_c
        assert g_c.shape == x4.shape
        assert not np.allclose(g_c.values, x4.values)

    def test_both_prompt_features_contribute(self, rng, inputs):
        x4, f_v, f_m = inputs
        store = ParameterSet(seed=0)
        params = GuidanceParams.create(store, 8, 16)
        perturb_parameters(store, seed=3)
        base = guide(x4, f_v, f_m, 2, params).g_c.values
        other = Tensor(rng.standard_normal(f_v.shape))
        assert not np.allclose(guide(x4, other, f_m, 2, params).g_c.values, base)
        assert not np.allclose(guide(x4, f_v, other, 2, params).g_c.values, base)

    def test_batch_mismatch(self, inputs):
        x4, f_v, f_m = inputs
        params = GuidanceParams.create(ParameterSet(seed=0), 8, 16)
        with pytest.raises(ShapeError):
            guide(x4, Tensor(f_v.values[:1]), f_m, 2, params)
