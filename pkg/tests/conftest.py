import numpy as np
import pytest

from ssmguard.model import SelectiveSsmConfig, init_ssm


@pytest.fixture(scope="session")
def default_ssm():
    return init_ssm(SelectiveSsmConfig(seed=42))


@pytest.fixture(scope="session")
def random_tokens():
    return np.random.default_rng(1).integers(0, 256, size=100).tolist()
