import dataclasses

import pytest

from factormi.data import SyntheticSpec, generate_synthetic, normalize
from factormi.model import ModelConfig

TINY_SPEC = SyntheticSpec(n_classes=4, trials_per_class=10, n_channels=4, n_samples=100, sfreq=100.0,
                          amplitude=5.0, noise=1.0, seed=0)

TINY_MODEL = ModelConfig(n_channels=4, n_samples=100, n_classes=4, conv_filters=8, temporal_kernel=13,
                         pool_kernel=20, pool_stride=10, discriminator_hidden=(32,), mlp_hidden=(64, 32))


def tiny_data(seed=0, **kw):
    return generate_synthetic(dataclasses.replace(TINY_SPEC, seed=seed, **kw))


@pytest.fixture
def tiny():
    ds, _ = normalize(tiny_data())
    return ds


# acceptance summary lines, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
