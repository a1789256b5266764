from __future__ import annotations

import numpy as np
import pytest

from phaseinfo.sgsim import PipelineConfig, SGParams, simulate_pipeline

_ACCEPTANCE_LINES: list = []


def record(criterion: str, passed: bool, detail: str) -> None:
    """Store one acceptance verdict line; printed again in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    print("\n" + line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def coarse_q2():
    """2000 prepared 6-pixel profiles at q = 2, lambda_T = 15 um."""
    return simulate_pipeline(SGParams.from_q(15.0, 2.0), 2000, 101)


@pytest.fixture(scope="session")
def fine_q3():
    """2000 prepared profiles at q = 3 on the 30-pixel grid (no coarse graining)."""
    return simulate_pipeline(SGParams.from_q(15.0, 3.0), 2000, 102, PipelineConfig(coarse_nz=None))
