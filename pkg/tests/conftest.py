import numpy as np
import pytest

from mfce import convgeom, model

from _util import ACCEPTANCE_LINES, jitter_biases




def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_spec():
    return convgeom.toy_spec(num_targets=5, mel_bins=6, width=3, hidden=7)


@pytest.fixture
def toy_net(toy_spec):
    return jitter_biases(model.build(toy_spec, seed=3))
