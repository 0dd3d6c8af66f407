import logging
import os

import pytest
from hypothesis import settings

from truncem.model import ModelParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

logging.getLogger("truncem").setLevel(logging.ERROR)


@pytest.fixture
def ref_model():
    return ModelParams.reference_example()


def oracle_params(**kw):
    """Linear asset drift, unit exponents, frozen variance at 1."""
    base = dict(alpha1=1.0, mu1=1.0, sigma1=0.3, rho=1.0, theta=1.0,
                alpha2=0.0, mu2=2.0, sigma2=0.0, r=1.0, phi=1.0, x0=0.5, phi0=1.0)
    base.update(kw)
    return ModelParams(**base)


def mild_params(**kw):
    """Strictly admissible model with small coefficients, so delta_star is large."""
    base = dict(alpha1=0.5, mu1=1.0, sigma1=0.5, rho=3.0, theta=1.5,
                alpha2=0.5, mu2=1.0, sigma2=0.25, r=3.0, phi=1.5, x0=0.5, phi0=1.0)
    base.update(kw)
    return ModelParams(**base)


@pytest.fixture
def oracle_model():
    return oracle_params()


@pytest.fixture
def mild_model():
    return mild_params()
