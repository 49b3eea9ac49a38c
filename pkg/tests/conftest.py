import numpy as np
import pytest
import torch

from coordtraj.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    return ModelConfig(d_model=8, n_heads=2, d_ff=16, n_layers=1, embed_dim=3,
                       mlp_widths=(6, 8), n_bins=9, n_agents_total=4)


@pytest.fixture
def small_config():
    return ModelConfig(d_model=16, n_heads=2, d_ff=32, n_layers=2, embed_dim=4,
                       mlp_widths=(8, 16), n_bins=9, n_agents_total=4)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number, name, passed, detail=""):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
