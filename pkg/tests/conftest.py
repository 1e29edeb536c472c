"""Shared fixtures and the acceptance-summary reporter.

Acceptance tests record one line per criterion through the
``acceptance_lines`` session list; the terminal-summary hook prints them
at the end of the run whether or not capture is active, so the pass/fail
ledger is always visible in plain ``pytest`` output.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_lines() -> list[str]:
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _single_thread():
    """Keep test timings stable on the single-CPU sandbox."""
    torch.set_num_threads(1)
    yield


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
