import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(1)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_pendulum_data(tmp_path_factory):
    """A handful of short pendulum sequences per split, shared by the slower tests."""
    from dnbp.simulators.dataset import DatasetConfig, generate_dataset

    root = tmp_path_factory.mktemp("pendulum_data")
    cfg = DatasetConfig(scale=0.006, train_frames=4, test_frames=6, test_scale=0.02)
    for split in ("train", "val", "test"):
        generate_dataset("pendulum", split, cfg, seed=3, out=root / split)
    return root


_RESULTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def criterion(request):
    """Records one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_RESULTS, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
