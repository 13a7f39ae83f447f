import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tpbr.control import SwitchingLaw
from tpbr.lmi import synthesize_pair
from tpbr.model import ConverterParams, Polarity

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return ConverterParams()


@pytest.fixture(scope="session")
def design_certs(params):
    """Max-margin points of the full design polytope (uncertified: margin < 0)."""
    certs, errors = synthesize_pair(params)
    return certs, errors


@pytest.fixture(scope="session")
def law(design_certs):
    certs, _ = design_certs
    return SwitchingLaw.from_certificates(certs[Polarity.POSITIVE], certs[Polarity.NEGATIVE],
                                          source="design")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
