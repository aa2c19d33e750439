import numpy as np
import pytest

from busip.synthdata import gen_synthetic, load_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """4 classes x (8 train + 4 test), 64 x 64, seed 3."""
    root = tmp_path_factory.mktemp("small_synth")
    gen_synthetic(root, num_classes=4, per_class=8, size=64, seed=3, force=True, test_per_class=4)
    return root


@pytest.fixture(scope="session")
def small_train(small_synth):
    return load_dataset(small_synth, subset="train")


@pytest.fixture(scope="session")
def small_test(small_synth):
    return load_dataset(small_synth, subset="test")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(LINES):
            terminalreporter.write_line(LINES[number])
