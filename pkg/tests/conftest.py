import numpy as np
import pytest

from sprkit import dataio, nnet

# acceptance verdicts, collected by tests/test_acceptance.py and echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_convnet():
    # 3x6x6 input: conv(3->2) relu pool conv(2->3) relu pool flatten dense(3 -> 3)
    layers = [
        nnet.Conv2d(3, 2, 3, padding=1),
        nnet.ReLU(),
        nnet.MaxPool2d(2),
        nnet.Conv2d(2, 3, 3, padding=1),
        nnet.ReLU(),
        nnet.MaxPool2d(3),
        nnet.Flatten(),
        nnet.Dense(3, 3),
    ]
    return nnet.Network(layers, (3, 6, 6), seed=7)


@pytest.fixture(scope="session")
def tiny_images():
    train, test = dataio.train_test("tiny-images", 96, 48, 3, 0.3, seed=3)
    train, stats = dataio.normalize(train)
    return train, dataio.apply_stats(test, stats)
