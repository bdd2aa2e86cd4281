import sys

import numpy as np
import pytest
import torch

from graphdepth.data import TripletDataset, load_split
from graphdepth.synthetic import generate


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    generate(root, seed=0)
    return root


@pytest.fixture(scope="session")
def synth_train(synth_root):
    split = synth_root / "splits" / "train_files.txt"
    return TripletDataset(synth_root, load_split(synth_root, split, "train"), resize_to=(64, 64))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
