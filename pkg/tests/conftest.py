import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    verdicts = getattr(pytest, "acceptance_verdicts", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(verdicts, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
