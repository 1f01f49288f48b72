import math

import pytest
import torch
from hypothesis import settings

from selfnerf.field import FieldConfig, init_params

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def _inv_softplus(y):
    return y + math.log(-math.expm1(-y))


def constant_field(sigma, rgb, dtype=torch.float64, pos_frequencies=4, dir_frequencies=2):
    """A field whose radiance head is constant and whose uncertainty branch is switched off."""
    cfg = FieldConfig(depth=2, width=8, dim_omega=2, dim_phi=2, num_images=2,
                      pos_frequencies=pos_frequencies, dir_frequencies=dir_frequencies)
    model = init_params(cfg, 0, dtype)
    with torch.no_grad():
        for lin in model.linears():
            lin.weight.zero_()
            lin.bias.zero_()
        model.sigma_out.bias.fill_(_inv_softplus(sigma) if sigma > 0 else -800.0)
        model.color_out.bias.copy_(torch.logit(torch.as_tensor(rgb, dtype=dtype)))
        model.unc_out.bias.fill_(-800.0)
    return model


@pytest.fixture
def small_cfg():
    return FieldConfig(depth=3, width=8, dim_omega=3, dim_phi=4, num_images=5, pos_frequencies=3,
                       dir_frequencies=2)
