import numpy as np
import pytest

from interformer.autodiff import Tensor
from interformer.model import BlockConfig

# filled by test_acceptance.py, echoed once at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """The d=8 reference block used for hand tallies."""
    return BlockConfig(d=8, heads=2, kernel=3, sfm_c=4, dropout_p=0.0, N=1, feat_dim=8, subsample_channels=2)


def randt(rng, *shape, requires_grad=False):
    return Tensor(rng.normal(size=shape), requires_grad=requires_grad)
