import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("agrimap", deadline=None, max_examples=100)
settings.load_profile("agrimap")


@pytest.fixture
def g():
    return np.random.Generator(np.random.PCG64(12345))
