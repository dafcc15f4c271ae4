import numpy as np
import pytest

from chunktt.model import ModelConfig, TransducerModel

TINY = ModelConfig(feature_dim=3, hidden_dim=4, num_layers=2, num_heads=2, ff_dim=6,
                   predictor_dim=3, joint_dim=4, chunk_size=2, left_chunks=1)
SMALL = ModelConfig(feature_dim=6, hidden_dim=16, num_layers=3, num_heads=2, ff_dim=24,
                    predictor_dim=12, joint_dim=12, chunk_size=2, left_chunks=1)


@pytest.fixture
def tiny_model():
    m = TransducerModel(TINY, seed=0)
    m.add_branch("M", ["a", "b", "c"])
    return m


@pytest.fixture
def small_model():
    m = TransducerModel(SMALL, seed=1)
    m.add_branch("M", [f"m{i}" for i in range(5)])
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
