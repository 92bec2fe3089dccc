import numpy as np
import pytest

from sgha.anchors import ReferencePool
from sgha.surrogate import SurrogateConfig, init_model
from sgha.synthetic import synthetic_images

# a small tower that keeps unit tests fast
SMALL = SurrogateConfig(image_size=16, patch_size=4, depth_img=4, depth_txt=4, width=8, heads=2, proj_dim=4, seed=3)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_model():
    return init_model(SMALL)


@pytest.fixture(scope="session")
def ref_model():
    return init_model(SurrogateConfig())


@pytest.fixture(scope="session")
def small_pool():
    return ReferencePool.from_images(synthetic_images(6, seed=21, size=SMALL.image_size))


@pytest.fixture(scope="session")
def ref_pool():
    return ReferencePool.from_images(synthetic_images(20, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
