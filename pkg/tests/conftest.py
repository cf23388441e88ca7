import numpy as np
import pytest
from hypothesis import settings

from coli.inr_net import Block, NetConfig

settings.register_profile("coli", deadline=None, max_examples=40)
settings.load_profile("coli")


@pytest.fixture
def tiny_cfg() -> NetConfig:
    """4x4 patches, a few hundred parameters; fast enough for finite differences."""
    return NetConfig(
        embed_freqs=3,
        fc_dims=(8,),
        seed_shape=(4, 2, 2),
        blocks=(Block(3, 2, 3),),
        out_channels=1,
        head_kernel=3,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
