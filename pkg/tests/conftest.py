import sys

import numpy as np
import pytest

from intrelight.dataset import generate_dataset, load_dataset


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny") / "data"
    generate_dataset(root, n_scenes=3, n_conditions=3, seed=5, size=32, holdout=1)
    return root


@pytest.fixture(scope="session")
def tiny_train(tiny_root):
    return load_dataset(tiny_root, "train")


@pytest.fixture(scope="session")
def tiny_test(tiny_root):
    return load_dataset(tiny_root, "test")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
